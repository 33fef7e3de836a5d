#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msnet/errors.hpp"
#include "msnet/layers.hpp"
#include "msnet/linalg.hpp"
#include "msnet/optim.hpp"
#include "msnet/rng.hpp"
#include "msnet/spdcore.hpp"

using namespace msnet;

namespace {

Matrix random_spd(Rng& rng, int n) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  Matrix s = multiply_nt(a, a);
  for (int i = 0; i < n; ++i) s(i, i) += 0.1;
  return sym_part(s);
}

}  // namespace

TEST_CASE("window index sets on a 4x4 grid with side 2 and step 2") {
  const std::vector<WindowIndexSet> sets = window_index_sets(4, 2, 2);
  REQUIRE(sets.size() == 4);
  CHECK(sets[0].indices == std::vector<int>{0, 1, 4, 5});
  CHECK(sets[1].indices == std::vector<int>{8, 9, 12, 13});
  CHECK(sets[2].indices == std::vector<int>{2, 3, 6, 7});
  CHECK(sets[3].indices == std::vector<int>{10, 11, 14, 15});
  CHECK(sets[0].origin_row == 0);
  CHECK(sets[0].origin_col == 0);
  CHECK(sets[3].origin_row == 2);
  CHECK(sets[3].origin_col == 2);
}

TEST_CASE("window counts follow the sliding-window formula") {
  CHECK(window_index_sets(5, 5, 1).size() == 1);
  CHECK(window_index_sets(5, 2, 1).size() == 16);
  CHECK(window_index_sets(5, 1, 1).size() == 25);
  for (int d = 2; d <= 8; ++d)
    for (int k = 1; k <= d; ++k)
      for (int s = 1; s <= k; ++s) {
        if ((d - k) % s != 0) continue;
        const std::size_t per_axis = std::size_t((d - k) / s + 1);
        CHECK(window_index_sets(d, k, s).size() == per_axis * per_axis);
      }
}

TEST_CASE("full-grid window covers every index once") {
  const std::vector<WindowIndexSet> sets = window_index_sets(5, 5, 1);
  std::vector<int> expect(25);
  for (int i = 0; i < 25; ++i) expect[i] = i;
  CHECK(sets[0].indices == expect);
}

TEST_CASE("window index sets reject bad geometry") {
  CHECK_THROWS_AS(window_index_sets(0, 1, 1), ConfigError);
  CHECK_THROWS_AS(window_index_sets(4, 0, 1), ConfigError);
  CHECK_THROWS_AS(window_index_sets(4, 5, 1), ConfigError);
  CHECK_THROWS_AS(window_index_sets(4, 2, 0), ConfigError);
  CHECK_THROWS_AS(window_index_sets(5, 2, 2), ConfigError);  // partial windows
}

TEST_CASE("binomial coefficients are exact and overflow is detected") {
  CHECK(binomial(5, 2) == 10);
  CHECK(binomial(16, 4) == 1820);
  CHECK(binomial(10, 0) == 1);
  CHECK(binomial(10, 10) == 1);
  CHECK(binomial(52, 5) == 2598960);
  CHECK_THROWS_AS(binomial(200, 100), NumericError);
  CHECK_THROWS_AS(binomial(4, 5), ConfigError);
}

TEST_CASE("principal submatrices of an SPD matrix are SPD") {
  Rng rng(211);
  const Matrix s = random_spd(rng, 16);
  const std::vector<WindowIndexSet> sets = window_index_sets(4, 2, 1);
  REQUIRE(sets.size() == 9);
  const std::vector<Matrix> subs = subsec_forward(s, sets);
  for (std::size_t w = 0; w < sets.size(); ++w) {
    REQUIRE(subs[w].rows() == 4);
    CHECK(assert_spd(subs[w], 1e-12).pass);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        CHECK(subs[w](a, b) == s(sets[w].indices[a], sets[w].indices[b]));
  }
}

TEST_CASE("submatrix gradient scatter adds overlapping contributions") {
  const int grid = 3, dim = 9;
  const std::vector<WindowIndexSet> sets = window_index_sets(grid, 2, 1);
  REQUIRE(sets.size() == 4);
  std::vector<Matrix> grads;
  for (std::size_t w = 0; w < sets.size(); ++w) {
    Matrix g(4, 4);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) g(a, b) = 1.0;
    grads.push_back(g);
  }
  const Matrix back = subsec_backward(dim, sets, grads);
  // entry (p,q) counts the windows containing both p and q
  // index 4 (row 1, col 1 of the grid) lies in all four windows
  CHECK(back(4, 4) == 4.0);
  // indices 0 and 4 share only the first window
  CHECK(back(0, 4) == 1.0);
  // index 1 (row 1, col 0) and 4 share the two left/top windows
  CHECK(back(1, 4) == 2.0);
  // index 0 is in exactly one window
  CHECK(back(0, 0) == 1.0);
  // indices 0 and 8 never co-occur
  CHECK(back(0, 8) == 0.0);
}

TEST_CASE("subsec validation") {
  Rng rng(213);
  const Matrix s = random_spd(rng, 4);
  WindowIndexSet bad{0, 0, {0, 1, 7, 2}};
  CHECK_THROWS_AS(subsec_forward(s, {bad}), ConfigError);
  CHECK_THROWS_AS(subsec_forward(Matrix(3, 4), window_index_sets(2, 1, 1)), ConfigError);
}

TEST_CASE("bilinear map matches a hand computation") {
  Matrix w(1, 2);
  w(0, 0) = 2.0;
  w(0, 1) = -1.0;
  Matrix s(2, 2);
  s(0, 0) = 1.0;
  s(0, 1) = s(1, 0) = 0.5;
  s(1, 1) = 3.0;
  const Matrix out = bimap_forward(w, s);
  // [2 -1] S [2 -1]^T = 4*1 - 2*0.5*2 + 1*3
  CHECK(out(0, 0) == doctest::Approx(4.0 - 2.0 + 3.0).epsilon(1e-15));
}

TEST_CASE("bilinear map with orthonormal rows preserves positive definiteness") {
  Rng rng(217);
  const Matrix w = init_semi_orthogonal(rng, 5, 11);
  const Matrix s = random_spd(rng, 11);
  const Matrix out = bimap_forward(w, s);
  CHECK(assert_spd(out, 1e-12).pass);
}

TEST_CASE("bilinear map validates shapes") {
  CHECK_THROWS_AS(bimap_forward(Matrix(3, 2), Matrix(2, 2)), ConfigError);  // rows > cols
  CHECK_THROWS_AS(bimap_forward(Matrix(2, 3), Matrix(4, 4)), ConfigError);
  CHECK_THROWS_AS(bimap_forward(Matrix(2, 3), Matrix(3, 4)), ConfigError);
}

TEST_CASE("rectified log composition never rejects a rectified spectrum") {
  Rng rng(219);
  for (int trial = 0; trial < 25; ++trial) {
    // symmetric with eigenvalues on both sides of zero
    Matrix a(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) a(i, j) = rng.normal();
    const Matrix s = sym_part(a);
    const Matrix r = reeig_forward(s, 1e-4);
    CHECK_NOTHROW(logeig_forward(r));
  }
}

TEST_CASE("concatenated lower triangles keep order and length") {
  Rng rng(223);
  std::vector<Matrix> mats;
  std::size_t expect_len = 0;
  for (int d : {4, 2, 3}) {
    mats.push_back(sym_part(random_spd(rng, d)));
    expect_len += tril_len(d);
  }
  TrilcanTape tape;
  const Vector v = trilcan_forward(mats, &tape);
  REQUIRE(v.size() == expect_len);
  CHECK(v[0] == mats[0](0, 0));
  CHECK(v[tril_len(4)] == mats[1](0, 0));
  CHECK(v.back() == mats[2](2, 2));

  // round-trip through the backward scatter keeps lower-triangle values
  const std::vector<Matrix> back = trilcan_backward(tape, v);
  for (std::size_t m = 0; m < mats.size(); ++m)
    for (int i = 0; i < mats[m].rows(); ++i)
      for (int j = 0; j <= i; ++j) CHECK(back[m](i, j) == mats[m](i, j));
  // entries above the diagonal are zero in the scattered gradient
  CHECK(back[0](0, 1) == 0.0);
}

TEST_CASE("fully connected layer and its gradients agree with hand math") {
  Matrix w(2, 3);
  double c = 1.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) w(i, j) = c++;
  const Vector bias = {0.5, -0.5};
  const Vector v = {1.0, 0.0, -1.0};
  FcTape tape;
  const Vector logits = fc_forward(w, bias, v, &tape);
  CHECK(logits[0] == doctest::Approx(1.0 - 3.0 + 0.5));
  CHECK(logits[1] == doctest::Approx(4.0 - 6.0 - 0.5));

  const Vector g = {2.0, -1.0};
  const FcGrads grads = fc_backward(w, tape, g);
  CHECK(grads.grad_weights(0, 0) == doctest::Approx(2.0));   // g0 * v0
  CHECK(grads.grad_weights(1, 2) == doctest::Approx(1.0));   // g1 * v2
  CHECK(grads.grad_bias == g);
  CHECK(grads.grad_input[0] == doctest::Approx(2.0 * 1.0 - 1.0 * 4.0));
}

TEST_CASE("softmax cross-entropy closed forms") {
  const Vector uniform = {0.0, 0.0, 0.0};
  const SoftmaxCe u = softmax_ce(uniform, 1);
  CHECK(u.loss == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  double sum = 0.0;
  for (double p : u.probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));

  const Vector two = {std::log(2.0), 0.0};
  const SoftmaxCe t = softmax_ce(two, 0);
  CHECK(t.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(t.loss == doctest::Approx(std::log(3.0) - std::log(2.0)).epsilon(1e-13));
  CHECK(t.grad_logits[0] == doctest::Approx(2.0 / 3.0 - 1.0));
  CHECK(t.grad_logits[1] == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(softmax_ce(two, 2), ConfigError);
  CHECK_THROWS_AS(softmax_ce(two, -1), ConfigError);
}

TEST_CASE("softmax is shift invariant and safe with large logits") {
  const Vector big = {1000.0, 999.0};
  const SoftmaxCe r = softmax_ce(big, 0);
  CHECK(std::isfinite(r.loss));
  const Vector small = {1.0, 0.0};
  const SoftmaxCe q = softmax_ce(small, 0);
  CHECK(r.loss == doctest::Approx(q.loss).epsilon(1e-12));
}
