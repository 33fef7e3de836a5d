#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msnet/errors.hpp"
#include "msnet/linalg.hpp"
#include "msnet/matrix.hpp"
#include "msnet/optim.hpp"
#include "msnet/rng.hpp"

using namespace msnet;

namespace {

Matrix random_symmetric(Rng& rng, int n) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  return sym_part(a);
}

Matrix spd_with_spectrum(Rng& rng, const Vector& lam) {
  const int n = int(lam.size());
  const Matrix q = init_semi_orthogonal(rng, n, n);
  Matrix scaled(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scaled(i, j) = lam[i] * q(i, j);
  return sym_part(multiply_tn(q, scaled));
}

double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, std::max(max_abs(a), max_abs(b)));
  return max_abs_diff(a, b) / scale;
}

}  // namespace

TEST_CASE("eigendecomposition reconstructs 100 random symmetric matrices") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_symmetric(rng, 8);
    const EigDecomp eig = sym_eig(a);

    // U diag(lambda) U^T == A
    Matrix scaled = eig.vectors;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) scaled(i, j) *= eig.values[j];
    const Matrix rebuilt = multiply_nt(scaled, eig.vectors);
    CHECK(rel_diff(rebuilt, a) <= 1e-12);

    // U^T U == I
    const Matrix gram = multiply_tn(eig.vectors, eig.vectors);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        CHECK(std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-12);

    // descending order
    for (int i = 0; i + 1 < 8; ++i) CHECK(eig.values[i] >= eig.values[i + 1]);

    // sign convention: the largest-magnitude entry of each column is positive
    for (int j = 0; j < 8; ++j) {
      int arg = 0;
      for (int i = 1; i < 8; ++i)
        if (std::fabs(eig.vectors(i, j)) > std::fabs(eig.vectors(arg, j))) arg = i;
      CHECK(eig.vectors(arg, j) >= 0.0);
    }
  }
}

TEST_CASE("eigendecomposition of a diagonal matrix is exact") {
  Matrix a(3, 3);
  a(0, 0) = 3.0;
  a(1, 1) = 1.0;
  a(2, 2) = 2.0;
  const EigDecomp eig = sym_eig(a);
  CHECK(eig.values[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(eig.values[1] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(eig.values[2] == doctest::Approx(1.0).epsilon(1e-14));
  // columns are signed unit vectors e0, e2, e1
  CHECK(std::fabs(eig.vectors(0, 0)) == doctest::Approx(1.0));
  CHECK(std::fabs(eig.vectors(2, 1)) == doctest::Approx(1.0));
  CHECK(std::fabs(eig.vectors(1, 2)) == doctest::Approx(1.0));
  CHECK(eig.vectors(0, 0) > 0.0);
  CHECK(eig.vectors(2, 1) > 0.0);
  CHECK(eig.vectors(1, 2) > 0.0);
}

TEST_CASE("eigendecomposition input validation") {
  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), ConfigError);
  Matrix bad(2, 2);
  bad(0, 0) = 1.0;
  bad(0, 1) = bad(1, 0) = 0.5;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(sym_eig(bad), NumericError);
  Matrix asym(2, 2);
  asym(0, 1) = 1.0;
  asym(1, 0) = 2.0;
  CHECK_THROWS_AS(sym_eig(asym), NumericError);
}

TEST_CASE("repeated eigenvalues still reconstruct") {
  Rng rng(7);
  const Matrix a = spd_with_spectrum(rng, {2.0, 2.0, 2.0, 0.5});
  const EigDecomp eig = sym_eig(a);
  Matrix scaled = eig.vectors;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) scaled(i, j) *= eig.values[j];
  CHECK(rel_diff(multiply_nt(scaled, eig.vectors), a) <= 1e-12);
  CHECK(eig.values[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(eig.values[3] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("log and exp maps are mutually inverse on SPD input") {
  Rng rng(11);
  const Matrix s = spd_with_spectrum(rng, {3.0, 1.4, 0.9, 0.2, 0.05});
  const Matrix back = spectral_map(spectral_map(s, SpectralFn::log()), SpectralFn::exp());
  CHECK(rel_diff(back, s) <= 1e-11);
}

TEST_CASE("log map rejects non-positive spectra") {
  Matrix s(2, 2);
  s(0, 0) = 1.0;
  s(1, 1) = -0.25;
  CHECK_THROWS_AS(spectral_map(s, SpectralFn::log()), NumericError);
  try {
    spectral_map(s, SpectralFn::log());
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("-0.25") != std::string::npos);
  }
}

TEST_CASE("rectifier clamps only the low end of the spectrum") {
  Rng rng(13);
  const double eps = 1e-2;
  const Matrix s = spd_with_spectrum(rng, {2.0, 1.0, 1e-5});
  const Matrix r = spectral_map(s, SpectralFn::rectify(eps));
  const EigDecomp eig = sym_eig(r);
  CHECK(eig.values.back() >= eps - 1e-12);
  CHECK(eig.values.front() == doctest::Approx(2.0).epsilon(1e-10));

  const Matrix clean = spd_with_spectrum(rng, {2.0, 1.0, 0.5});
  CHECK(rel_diff(spectral_map(clean, SpectralFn::rectify(eps)), clean) <= 1e-12);
}

TEST_CASE("spectral gradients match central differences") {
  Rng rng(17);
  const double h = 1e-5;
  for (const SpectralFn& fn : {SpectralFn::log(), SpectralFn::rectify(1e-2)}) {
    // spectrum keeps a healthy margin from the rectifier threshold
    const Matrix s = spd_with_spectrum(rng, {2.0, 1.3, 0.8, 0.45, 0.2});
    Matrix g(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) g(i, j) = rng.normal();
    const EigDecomp eig = sym_eig(s);
    const Matrix analytic = spectral_map_backward(eig, fn, g);
    const auto loss = [&](const Matrix& m) {
      const Matrix out = spectral_map(m, fn);
      double acc = 0.0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) acc += g(i, j) * out(i, j);
      return acc;
    };
    for (int i = 0; i < 5; ++i)
      for (int j = i; j < 5; ++j) {
        Matrix p = s;
        p(i, j) += h;
        if (i != j) p(j, i) += h;
        Matrix q = s;
        q(i, j) -= h;
        if (i != j) q(j, i) -= h;
        const double numeric = (loss(p) - loss(q)) / (2.0 * h);
        const double a = i == j ? analytic(i, i) : analytic(i, j) + analytic(j, i);
        const double err = std::fabs(a - numeric);
        const double mag = std::max(std::fabs(a), std::fabs(numeric));
        CHECK((mag < 1e-6 ? err <= 1e-8 : err / mag <= 1e-5));
      }
  }
}

TEST_CASE("spectral gradient handles a degenerate spectrum") {
  Rng rng(19);
  const double h = 1e-5;
  const Matrix s = spd_with_spectrum(rng, {1.5, 1.5, 0.4});
  Matrix g(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g(i, j) = rng.normal();
  const EigDecomp eig = sym_eig(s);
  const Matrix analytic = spectral_map_backward(eig, SpectralFn::log(), g);
  const auto loss = [&](const Matrix& m) {
    const Matrix out = spectral_map(m, SpectralFn::log());
    double acc = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) acc += g(i, j) * out(i, j);
    return acc;
  };
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      Matrix p = s;
      p(i, j) += h;
      if (i != j) p(j, i) += h;
      Matrix q = s;
      q(i, j) -= h;
      if (i != j) q(j, i) -= h;
      const double numeric = (loss(p) - loss(q)) / (2.0 * h);
      const double a = i == j ? analytic(i, i) : analytic(i, j) + analytic(j, i);
      const double err = std::fabs(a - numeric);
      const double mag = std::max(std::fabs(a), std::fabs(numeric));
      CHECK((mag < 1e-6 ? err <= 1e-8 : err / mag <= 1e-5));
    }
}

TEST_CASE("row orthonormalization produces orthonormal rows") {
  Rng rng(23);
  Matrix m(3, 7);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 7; ++j) m(i, j) = rng.normal();
  const Matrix w = qr_row_orthonormalize(m);
  REQUIRE(w.rows() == 3);
  REQUIRE(w.cols() == 7);
  const Matrix gram = multiply_nt(w, w);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::fabs(gram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-12);
}

TEST_CASE("row orthonormalization fixes already-orthonormal input") {
  Rng rng(29);
  const Matrix w = init_semi_orthogonal(rng, 4, 9);
  const Matrix again = qr_row_orthonormalize(w);
  CHECK(max_abs_diff(w, again) <= 1e-12);
}

TEST_CASE("row orthonormalization rejects rank-deficient and wide-short input") {
  Matrix dup(2, 4);
  for (int j = 0; j < 4; ++j) {
    dup(0, j) = double(j + 1);
    dup(1, j) = 2.0 * double(j + 1);
  }
  CHECK_THROWS_AS(qr_row_orthonormalize(dup), NumericError);
  CHECK_THROWS_AS(qr_row_orthonormalize(Matrix(5, 3)), ConfigError);
}

TEST_CASE("pca recovers an exact low-dimensional subspace") {
  Rng rng(31);
  const int d = 6, p = 3, n = 40;
  // points live in span{b0,b1,b2} + mean
  Matrix basis(d, p);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < p; ++j) basis(i, j) = rng.normal();
  Vector mean(d);
  for (double& v : mean) v = rng.normal();
  std::vector<Vector> cols;
  std::vector<Vector> coords;
  for (int s = 0; s < n; ++s) {
    Vector z(p);
    for (double& v : z) v = rng.normal();
    Vector x = mean;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < p; ++j) x[i] += basis(i, j) * z[j];
    cols.push_back(x);
    coords.push_back(z);
  }
  const PcaModel model = pca_fit(cols, p);
  REQUIRE(model.basis.rows() == d);
  REQUIRE(model.basis.cols() == p);

  // projection preserves pairwise distances of subspace data
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b) {
      const Vector pa = pca_project(model, cols[a]);
      const Vector pb = pca_project(model, cols[b]);
      double dist_proj = 0.0, dist_orig = 0.0;
      for (int k = 0; k < p; ++k) dist_proj += (pa[k] - pb[k]) * (pa[k] - pb[k]);
      for (int k = 0; k < d; ++k)
        dist_orig += (cols[a][k] - cols[b][k]) * (cols[a][k] - cols[b][k]);
      CHECK(std::sqrt(dist_proj) == doctest::Approx(std::sqrt(dist_orig)).epsilon(1e-9));
    }
}

TEST_CASE("pca component variances are in decreasing order") {
  Rng rng(37);
  std::vector<Vector> cols;
  for (int s = 0; s < 200; ++s) {
    Vector x(5);
    // anisotropic axes: sd 4, 2, 1, 0.5, 0.25
    const double sds[5] = {4.0, 2.0, 1.0, 0.5, 0.25};
    for (int i = 0; i < 5; ++i) x[i] = sds[i] * rng.normal();
    cols.push_back(x);
  }
  const PcaModel model = pca_fit(cols, 4);
  Vector var(4, 0.0), meanp(4, 0.0);
  std::vector<Vector> projs;
  for (const Vector& c : cols) projs.push_back(pca_project(model, c));
  for (const Vector& v : projs)
    for (int k = 0; k < 4; ++k) meanp[k] += v[k] / double(projs.size());
  for (const Vector& v : projs)
    for (int k = 0; k < 4; ++k) var[k] += (v[k] - meanp[k]) * (v[k] - meanp[k]);
  for (int k = 0; k + 1 < 4; ++k) CHECK(var[k] >= var[k + 1]);
}

TEST_CASE("pca rejects impossible requests") {
  std::vector<Vector> two = {{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}};
  CHECK_THROWS_AS(pca_fit(two, 4), ConfigError);
  CHECK_THROWS_AS(pca_fit({two[0]}, 1), ConfigError);
  // rank 1 data cannot support 2 components
  std::vector<Vector> rank1 = {{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}, {-1.0, -1.0}};
  CHECK_THROWS_AS(pca_fit(rank1, 2), NumericError);
}
