#include "support/testcommon.hpp"

#include "ocvp/maskalg.hpp"
#include "support/gradcheck.hpp"

using namespace ocvp;
using namespace ocvp::maskalg;

namespace {

// Random soft masks whose occlusion recursion stays away from the max() kink
// at every pixel, so finite differences are valid there.
torch::Tensor masks_clear_of_kink(int64_t K, int64_t H, int64_t W, uint64_t seed) {
  for (uint64_t s = seed;; ++s) {
    torch::manual_seed(s);
    auto m = torch::rand({K, H, W}, torch::kDouble);
    auto claimed = m.cumsum(0) - m;
    auto gap = (m - claimed).abs().narrow(0, 1, K - 1);
    if (gap.min().item<double>() > 5e-3) return m;
  }
}

torch::Tensor random_dsm(int64_t K, uint64_t seed) {
  torch::manual_seed(seed);
  return sinkhorn(torch::randn({K, K}, torch::kDouble), {1.0, 50, false, 0});
}

}  // namespace

TEST_SUITE("maskalg") {

TEST_CASE("soft_binarize hits 0.5 at the threshold and saturates") {
  auto at_beta = soft_binarize(torch::full({1, 2, 2}, 0.4, torch::kDouble), 75.0, 0.4);
  CHECK(torch::equal(at_beta, torch::full({1, 2, 2}, 0.5, torch::kDouble)));

  auto sat = soft_binarize(torch::ones({1, 1, 1}, torch::kDouble), 50.0, 0.5);
  CHECK(std::abs(sat.item<double>() - 1.0) < 1e-10);
}

TEST_CASE("soft_binarize is symmetric about the threshold") {
  auto lo = soft_binarize(torch::full({1, 1, 1}, 0.4, torch::kDouble), 75.0, 0.5);
  auto hi = soft_binarize(torch::full({1, 1, 1}, 0.6, torch::kDouble), 75.0, 0.5);
  CHECK(std::abs(lo.item<double>() + hi.item<double>() - 1.0) < 1e-12);
}

TEST_CASE("soft_binarize validates hyperparameters") {
  auto m = torch::rand({1, 2, 2}, torch::kDouble);
  CHECK_THROWS_AS(soft_binarize(m, 0.0, 0.4), ParamError);
  CHECK_THROWS_AS(soft_binarize(m, 75.0, 1.5), ParamError);
}

TEST_CASE("apply_permutation identity and swap") {
  torch::manual_seed(5);
  auto m = torch::rand({2, 4, 4}, torch::kDouble);
  CHECK(apply_permutation(torch::eye(2, torch::kDouble), m).allclose(m, 0, 1e-15));

  auto swap = torch::tensor({{0.0, 1.0}, {1.0, 0.0}}, torch::kDouble);
  auto swapped = apply_permutation(swap, m);
  CHECK(torch::equal(swapped[0], m[1]));
  CHECK(torch::equal(swapped[1], m[0]));
}

TEST_CASE("apply_permutation matches the per-pixel matrix-vector oracle") {
  auto P = random_dsm(3, 7);
  torch::manual_seed(8);
  auto m = torch::rand({3, 5, 5}, torch::kDouble);
  auto out = apply_permutation(P, m);
  for (int64_t y = 0; y < 5; ++y) {
    for (int64_t x = 0; x < 5; ++x) {
      for (int64_t k = 0; k < 3; ++k) {
        double expect = 0.0;
        for (int64_t l = 0; l < 3; ++l) {
          expect += P[l][k].item<double>() * m[l][y][x].item<double>();
        }
        CHECK(std::abs(out[k][y][x].item<double>() - expect) < 1e-6);
      }
    }
  }
}

TEST_CASE("apply_permutation rejects dimension mismatches") {
  CHECK_THROWS_AS(apply_permutation(torch::eye(3, torch::kDouble),
                                    torch::rand({2, 4, 4}, torch::kDouble)),
                  ParamError);
}

TEST_CASE("occlusion single channel passes through") {
  torch::manual_seed(9);
  auto m = torch::rand({1, 4, 4}, torch::kDouble);
  CHECK(torch::equal(occlusion(m), m));
}

TEST_CASE("occlusion lets the front object win the overlap") {
  auto a = torch::zeros({4, 4}, torch::kDouble);
  a.index_put_({torch::indexing::Slice(0, 3), torch::indexing::Slice(0, 3)}, 1.0);
  auto b = torch::zeros({4, 4}, torch::kDouble);
  b.index_put_({torch::indexing::Slice(1, 4), torch::indexing::Slice(1, 4)}, 1.0);
  auto gamma = occlusion(torch::stack({a, b}));
  CHECK(torch::equal(gamma[0], a));
  CHECK(torch::equal(gamma[1], b * (1.0 - a)));  // overlap removed from the back object
}

TEST_CASE("occlusion of three full masks keeps only the front") {
  auto gamma = occlusion(torch::ones({3, 2, 2}, torch::kDouble));
  CHECK(torch::equal(gamma[0], torch::ones({2, 2}, torch::kDouble)));
  CHECK(torch::equal(gamma[1], torch::zeros({2, 2}, torch::kDouble)));
  CHECK(torch::equal(gamma[2], torch::zeros({2, 2}, torch::kDouble)));
}

TEST_CASE("occlusion plus background partitions every pixel") {
  for (uint64_t s = 0; s < 5; ++s) {
    auto m = masks_clear_of_kink(3, 8, 8, 40 + s);
    auto gamma = occlusion(apply_permutation(random_dsm(3, 60 + s), m));
    auto total = gamma.sum(0) + background_mask(gamma);
    CHECK((total - 1.0).abs().max().item<double>() < 1e-6);
  }
}

TEST_CASE("background_mask trivial cases") {
  auto zero_gamma = torch::zeros({2, 3, 3}, torch::kDouble);
  CHECK(torch::equal(background_mask(zero_gamma), torch::ones({3, 3}, torch::kDouble)));

  auto half = torch::zeros({1, 2, 4}, torch::kDouble);
  half.index_put_({0, torch::indexing::Slice(), torch::indexing::Slice(0, 2)}, 1.0);
  auto bg = background_mask(half);
  CHECK(torch::equal(bg, 1.0 - half[0]));
}

TEST_CASE("swapping the permutation flips ownership of the overlap") {
  auto a = torch::zeros({4, 4}, torch::kDouble);
  a.index_put_({torch::indexing::Slice(0, 3), torch::indexing::Slice()}, 1.0);
  auto b = torch::zeros({4, 4}, torch::kDouble);
  b.index_put_({torch::indexing::Slice(1, 4), torch::indexing::Slice()}, 1.0);
  auto m = torch::stack({a, b});
  auto ident = torch::eye(2, torch::kDouble);
  auto swap = torch::tensor({{0.0, 1.0}, {1.0, 0.0}}, torch::kDouble);

  auto overlap = a * b;
  auto g_front_a = occlusion(apply_permutation(ident, m));
  auto g_front_b = occlusion(apply_permutation(swap, m));
  CHECK(torch::equal(g_front_a[0] * overlap, overlap));   // a owns the overlap
  CHECK(torch::equal(g_front_b[0] * overlap, overlap));   // after swap channel 0 is b
  CHECK((g_front_b[1] * overlap).abs().max().item<double>() == 0.0);
}

TEST_CASE("permuting slots and conjugating P leaves the occlusion unchanged") {
  auto m = masks_clear_of_kink(3, 6, 6, 70);
  auto P = random_dsm(3, 71);
  auto Q = torch::tensor({{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}, torch::kDouble);
  auto base = occlusion(apply_permutation(P, m));
  auto permuted = occlusion(apply_permutation(torch::matmul(Q.t(), P), apply_permutation(Q, m)));
  CHECK((base - permuted).abs().max().item<double>() < 1e-6);
}

TEST_CASE("sinkhorn is a fixed point on doubly stochastic input") {
  auto dsm = random_dsm(3, 90);
  auto out = sinkhorn(torch::log(dsm), {1.0, 20, false, 0});
  CHECK((out - dsm).abs().max().item<double>() < 1e-6);
}

TEST_CASE("sinkhorn drives strong diagonal logits to the identity") {
  auto logits = torch::tensor({{10.0, 0.0}, {0.0, 10.0}}, torch::kDouble);
  auto out = sinkhorn(logits, {1.0, 20, false, 0});
  CHECK((out - torch::eye(2, torch::kDouble)).abs().max().item<double>() < 1e-3);
}

TEST_CASE("sinkhorn at high temperature approaches the uniform matrix") {
  auto out = sinkhorn(torch::zeros({4, 4}, torch::kDouble), {1e6, 20, false, 0});
  CHECK((out - 0.25).abs().max().item<double>() < 1e-6);
}

TEST_CASE("sinkhorn rows and columns sum to one at the default temperature") {
  for (uint64_t s = 0; s < 5; ++s) {
    torch::manual_seed(120 + s);
    auto logits = torch::randn({4, 4}, torch::kDouble);
    auto out = sinkhorn(logits, {1.0, 20, false, 0});
    CHECK((out.sum(-1) - 1.0).abs().max().item<double>() < 1e-3);
    CHECK((out.sum(-2) - 1.0).abs().max().item<double>() < 1e-3);
    CHECK(out.min().item<double>() >= 0.0);
  }
}

TEST_CASE("sinkhorn validates inputs") {
  auto bad = torch::full({2, 2}, std::numeric_limits<double>::infinity(), torch::kDouble);
  CHECK_THROWS_AS(sinkhorn(bad, {1.0, 20, false, 0}), ParamError);
  auto ok = torch::zeros({2, 2}, torch::kDouble);
  CHECK_THROWS_AS(sinkhorn(ok, {0.0, 20, false, 0}), ParamError);
  CHECK_THROWS_AS(sinkhorn(ok, {1.0, 0, false, 0}), ParamError);
}

TEST_CASE("gumbel noise is reproducible per seed") {
  auto logits = torch::zeros({3, 3}, torch::kDouble);
  auto a = sinkhorn(logits, {1.0, 20, true, 42});
  auto b = sinkhorn(logits, {1.0, 20, true, 42});
  auto c = sinkhorn(logits, {1.0, 20, true, 43});
  CHECK(torch::equal(a, b));
  CHECK_FALSE(torch::equal(a, c));
}

TEST_CASE("gradients match finite differences") {
  torch::manual_seed(77);
  auto weights8 = torch::rand({3, 8, 8}, torch::kDouble);

  SUBCASE("soft_binarize") {
    auto m = masks_clear_of_kink(3, 8, 8, 140);
    auto fn = [&](const std::vector<torch::Tensor>& in) {
      return (soft_binarize(in[0], 75.0, 0.4) * weights8).sum();
    };
    CHECK(testsupport::max_grad_rel_error(fn, {m}) < 1e-4);
  }
  SUBCASE("apply_permutation") {
    auto m = masks_clear_of_kink(3, 8, 8, 150);
    auto P = random_dsm(3, 151);
    auto fn = [&](const std::vector<torch::Tensor>& in) {
      return (apply_permutation(in[0], in[1]) * weights8).sum();
    };
    CHECK(testsupport::max_grad_rel_error(fn, {P, m}) < 1e-4);
  }
  SUBCASE("occlusion and background away from the kink") {
    auto m = masks_clear_of_kink(3, 8, 8, 160);
    auto fn = [&](const std::vector<torch::Tensor>& in) {
      auto gamma = occlusion(in[0]);
      return (gamma * weights8).sum() + (background_mask(gamma) * weights8[0]).sum();
    };
    CHECK(testsupport::max_grad_rel_error(fn, {m}) < 1e-4);
  }
  SUBCASE("sinkhorn") {
    torch::manual_seed(170);
    auto logits = torch::randn({3, 3}, torch::kDouble);
    auto wp = torch::rand({3, 3}, torch::kDouble);
    auto fn = [&](const std::vector<torch::Tensor>& in) {
      return (sinkhorn(in[0], {1.0, 20, false, 0}) * wp).sum();
    };
    CHECK(testsupport::max_grad_rel_error(fn, {logits}) < 1e-4);
  }
}

}  // TEST_SUITE
