#include "msnet/spdcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msnet/errors.hpp"
#include "msnet/linalg.hpp"

namespace msnet {

namespace {

// Pairwise (tree) summation: deterministic and lower rounding error than a
// running sum, without depending on accumulation order quirks.
double pairwise_dot(const double* a, const double* b, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += a[t] * b[t];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_dot(a, b, half) + pairwise_dot(a + half, b + half, n - half);
}

double pairwise_sum(const double* a, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += a[t];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(a, half) + pairwise_sum(a + half, n - half);
}

}  // namespace

Matrix covariance_descriptor(const Matrix& x, double lambda) {
  const int d = x.rows();
  const int n = x.cols();
  if (d < 1) throw ConfigError("covariance_descriptor: empty input");
  if (n < 2)
    throw ConfigError("covariance_descriptor: need at least 2 samples (columns), got " +
                      std::to_string(n));
  if (lambda < 0.0) throw ConfigError("covariance_descriptor: lambda must be non-negative");
  if (!all_finite(x)) throw NumericError("covariance_descriptor: non-finite input");

  Matrix centered(d, n);
  double scale = 1.0;  // reference magnitude for the degeneracy test
  for (int i = 0; i < d; ++i) {
    const double* row = x.data() + std::size_t(i) * n;
    const double mean = pairwise_sum(row, std::size_t(n)) / double(n);
    for (int t = 0; t < n; ++t) {
      centered(i, t) = row[t] - mean;
      scale = std::max(scale, row[t] * row[t]);
    }
  }

  Matrix c(d, d);
  for (int i = 0; i < d; ++i) {
    const double* ri = centered.data() + std::size_t(i) * n;
    for (int j = i; j < d; ++j) {
      const double* rj = centered.data() + std::size_t(j) * n;
      const double v = pairwise_dot(ri, rj, std::size_t(n)) / double(n - 1);
      c(i, j) = v;
      c(j, i) = v;
    }
  }

  const double tc = trace(c);
  if (!(tc > 1e-24 * scale))
    throw NumericError("covariance_descriptor: degenerate input (near-identical samples, "
                       "covariance trace " + std::to_string(tc) + ")");
  for (int i = 0; i < d; ++i) c(i, i) += lambda * tc;
  return c;
}

SpdReport assert_spd(const Matrix& s, double tol) {
  SpdReport rep;
  if (s.rows() < 1 || s.rows() != s.cols()) {
    rep.detail = "not a square matrix";
    return rep;
  }
  if (!all_finite(s)) {
    rep.detail = "non-finite entry";
    return rep;
  }
  rep.symmetric = is_symmetric(s, tol);
  const EigDecomp eig = sym_eig(sym_part(s));
  rep.min_eigenvalue = eig.values.back();
  if (!rep.symmetric) {
    rep.detail = "asymmetric beyond tolerance";
    return rep;
  }
  if (!(rep.min_eigenvalue > tol)) {
    rep.detail = "smallest eigenvalue " + std::to_string(rep.min_eigenvalue) +
                 " not above tolerance " + std::to_string(tol);
    return rep;
  }
  rep.pass = true;
  return rep;
}

std::size_t tril_len(int d) { return std::size_t(d) * std::size_t(d + 1) / 2; }

TrilVector tril_vec(const Matrix& m) {
  if (m.rows() != m.cols()) throw ConfigError("tril_vec: input must be square");
  TrilVector out;
  out.dim = m.rows();
  out.values.reserve(tril_len(out.dim));
  for (int i = 0; i < out.dim; ++i)
    for (int j = 0; j <= i; ++j) out.values.push_back(m(i, j));
  return out;
}

Matrix tril_unvec(const Vector& values, int d) {
  if (d < 1 || values.size() != tril_len(d))
    throw ConfigError("tril_unvec: expected length " + std::to_string(tril_len(std::max(d, 0))) +
                      " for dim " + std::to_string(d) + ", got " + std::to_string(values.size()));
  Matrix m(d, d);
  std::size_t idx = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      m(i, j) = values[idx];
      m(j, i) = values[idx];
      ++idx;
    }
  return m;
}

Matrix tril_unvec(const TrilVector& v) { return tril_unvec(v.values, v.dim); }

}  // namespace msnet
