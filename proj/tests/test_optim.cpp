#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msnet/errors.hpp"
#include "msnet/matrix.hpp"
#include "msnet/optim.hpp"
#include "msnet/rng.hpp"

using namespace msnet;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

double orthonormal_defect(const Matrix& w) {
  const Matrix gram = multiply_nt(w, w);
  double worst = 0.0;
  for (int i = 0; i < gram.rows(); ++i)
    for (int j = 0; j < gram.cols(); ++j)
      worst = std::max(worst, std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

// determinant by Gaussian elimination with partial pivoting; test-local on
// purpose so it cannot share a bug with the library QR
double determinant(Matrix a) {
  const int n = a.rows();
  double det = 1.0;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > std::fabs(a(piv, k))) piv = i;
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    if (a(k, k) == 0.0) return 0.0;
    for (int i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

}  // namespace

TEST_CASE("projected gradients are tangent to the manifold") {
  Rng rng(301);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix w = init_semi_orthogonal(rng, 4, 9);
    const Matrix g = random_matrix(rng, 4, 9);
    const Matrix t = stiefel_project(w, g);
    // tangency at W: T W^T is skew-symmetric
    const Matrix twt = multiply_nt(t, w);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(std::fabs(twt(i, j) + twt(j, i)) <= 1e-10);
  }
}

TEST_CASE("ten thousand retraction steps do not drift off the manifold") {
  Rng rng(303);
  Matrix w = init_semi_orthogonal(rng, 5, 12);
  for (int step = 0; step < 10000; ++step) {
    const Matrix g = random_matrix(rng, 5, 12);
    w = stiefel_retract(w, stiefel_project(w, g), 1e-2);
  }
  CHECK(orthonormal_defect(w) <= 1e-9);
}

TEST_CASE("square orthonormal factors keep unit determinant") {
  Rng rng(305);
  Matrix w = init_semi_orthogonal(rng, 6, 6);
  CHECK(std::fabs(std::fabs(determinant(w)) - 1.0) <= 1e-10);
  for (int step = 0; step < 100; ++step) {
    const Matrix g = random_matrix(rng, 6, 6);
    w = stiefel_retract(w, stiefel_project(w, g), 1e-2);
  }
  CHECK(std::fabs(std::fabs(determinant(w)) - 1.0) <= 1e-10);
}

TEST_CASE("zero gradient leaves parameters bitwise unchanged") {
  Rng rng(307);
  Matrix w = init_semi_orthogonal(rng, 3, 7);
  const Matrix before = w;
  const Matrix zero(3, 7);
  w = stiefel_retract(w, zero, 1e-2);
  CHECK(bit_equal(w, before));

  Matrix fc = random_matrix(rng, 4, 5);
  const Matrix fc_before = fc;
  Vector bias = {0.25, -0.75};
  const Vector bias_before = bias;
  const Matrix fc_zero(4, 5);
  const Vector bias_zero(2, 0.0);
  sgd_step({&w}, {&zero}, {&fc}, {&fc_zero}, {&bias}, {&bias_zero}, 1e-2);
  CHECK(bit_equal(w, before));
  CHECK(bit_equal(fc, fc_before));
  CHECK(bias == bias_before);
}

TEST_CASE("learning-rate staircase hits the documented values") {
  const LrSchedule sched;  // 1e-2, x0.8 every 50, floor 1e-3
  CHECK(lr_at(sched, 0) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(lr_at(sched, 49) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(lr_at(sched, 50) == doctest::Approx(8e-3).epsilon(1e-15));
  CHECK(lr_at(sched, 99) == doctest::Approx(8e-3).epsilon(1e-15));
  CHECK(lr_at(sched, 100) == doctest::Approx(6.4e-3).epsilon(1e-15));
  CHECK(lr_at(sched, 550) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(sched, 100000) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(sched, -1), ConfigError);
}

TEST_CASE("semi-orthogonal init is deterministic and orthonormal") {
  Rng a(5), b(5);
  const Matrix wa = init_semi_orthogonal(a, 4, 10);
  const Matrix wb = init_semi_orthogonal(b, 4, 10);
  CHECK(bit_equal(wa, wb));
  CHECK(orthonormal_defect(wa) <= 1e-12);
}

TEST_CASE("manifold descent makes steady progress on a matching problem") {
  Rng rng(311);
  const Matrix target = init_semi_orthogonal(rng, 3, 8);
  Matrix w = init_semi_orthogonal(rng, 3, 8);
  const auto loss = [&](const Matrix& m) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 8; ++j) acc += (m(i, j) - target(i, j)) * (m(i, j) - target(i, j));
    return acc;
  };
  int improved = 0;
  double prev = loss(w);
  for (int step = 0; step < 100; ++step) {
    Matrix g(3, 8);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 8; ++j) g(i, j) = 2.0 * (w(i, j) - target(i, j));
    w = stiefel_retract(w, stiefel_project(w, g), 5e-2);
    const double cur = loss(w);
    if (cur < prev) ++improved;
    prev = cur;
  }
  CHECK(improved >= 95);
  CHECK(prev < 0.1);
}

TEST_CASE("parameter and gradient lists must line up") {
  Rng rng(313);
  Matrix w = init_semi_orthogonal(rng, 2, 4);
  const Matrix g(2, 4);
  CHECK_THROWS_AS(sgd_step({&w}, {}, {}, {}, {}, {}, 1e-2), ConfigError);
  const Matrix wrong(3, 4);
  CHECK_THROWS_AS(sgd_step({&w}, {&wrong}, {}, {}, {}, {}, 1e-2), ConfigError);
  CHECK_NOTHROW(sgd_step({&w}, {&g}, {}, {}, {}, {}, 1e-2));
}
