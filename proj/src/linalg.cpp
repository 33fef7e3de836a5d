#include "msnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "msnet/errors.hpp"

namespace msnet {

double SpectralFn::eval(double x) const {
  switch (kind) {
    case Kind::Identity: return x;
    case Kind::Log: return std::log(x);
    case Kind::Rectify: return std::max(eps, x);
    case Kind::Exp: return std::exp(x);
  }
  return x;
}

double SpectralFn::deriv(double x) const {
  switch (kind) {
    case Kind::Identity: return 1.0;
    case Kind::Log: return 1.0 / x;
    // At x == eps exactly the subgradient is taken from the saturated branch.
    case Kind::Rectify: return x > eps ? 1.0 : 0.0;
    case Kind::Exp: return std::exp(x);
  }
  return 1.0;
}

const char* SpectralFn::name() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::Log: return "log";
    case Kind::Rectify: return "rectify";
    case Kind::Exp: return "exp";
  }
  return "?";
}

namespace {

constexpr double kQlTol = 1e-14;  // relative off-diagonal convergence
constexpr int kQlMaxIter = 64;    // per eigenvalue

// Householder reduction to tridiagonal form with accumulated transform
// (EISPACK tred2 lineage). On return `a` holds the orthogonal Q with
// Q^T A Q tridiagonal, d the diagonal, e the subdiagonal (e[0] unused).
void tridiagonalize(Matrix& a, Vector& d, Vector& e) {
  const int n = a.rows();
  for (int i = n - 1; i >= 1; --i) {
    const int l = i - 1;
    double h = 0.0;
    if (l > 0) {
      double scale = 0.0;
      for (int k = 0; k <= l; ++k) scale += std::fabs(a(i, k));
      if (scale == 0.0) {
        e[i] = a(i, l);
      } else {
        for (int k = 0; k <= l; ++k) {
          a(i, k) /= scale;
          h += a(i, k) * a(i, k);
        }
        double f = a(i, l);
        double g = (f >= 0.0 ? -std::sqrt(h) : std::sqrt(h));
        e[i] = scale * g;
        h -= f * g;
        a(i, l) = f - g;
        f = 0.0;
        for (int j = 0; j <= l; ++j) {
          a(j, i) = a(i, j) / h;
          g = 0.0;
          for (int k = 0; k <= j; ++k) g += a(j, k) * a(i, k);
          for (int k = j + 1; k <= l; ++k) g += a(k, j) * a(i, k);
          e[j] = g / h;
          f += e[j] * a(i, j);
        }
        const double hh = f / (h + h);
        for (int j = 0; j <= l; ++j) {
          f = a(i, j);
          g = e[j] - hh * f;
          e[j] = g;
          for (int k = 0; k <= j; ++k) a(j, k) -= f * e[k] + g * a(i, k);
        }
      }
    } else {
      e[i] = a(i, l);
    }
    d[i] = h;
  }
  d[0] = 0.0;
  e[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    const int l = i - 1;
    if (d[i] != 0.0) {
      for (int j = 0; j <= l; ++j) {
        double g = 0.0;
        for (int k = 0; k <= l; ++k) g += a(i, k) * a(k, j);
        for (int k = 0; k <= l; ++k) a(k, j) -= g * a(k, i);
      }
    }
    d[i] = a(i, i);
    a(i, i) = 1.0;
    for (int j = 0; j <= l; ++j) a(j, i) = a(i, j) = 0.0;
  }
}

// Implicit-shift QL iteration on the tridiagonal (d, e), rotations applied
// to the columns of z (EISPACK tql2 lineage).
void ql_implicit(Vector& d, Vector& e, Matrix& z) {
  const int n = int(d.size());
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= kQlTol * dd) break;
      }
      if (m != l) {
        if (iter++ == kQlMaxIter)
          throw NumericError("sym_eig: QL iteration failed to converge at index " +
                             std::to_string(l));
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (int i = m - 1; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (int k = 0; k < n; ++k) {
            f = z(k, i + 1);
            z(k, i + 1) = s * z(k, i) + c * f;
            z(k, i) = c * z(k, i) - s * f;
          }
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

void apply_sign_convention(Matrix& vectors) {
  const int n = vectors.rows();
  for (int j = 0; j < n; ++j) {
    int arg = 0;
    double best = std::fabs(vectors(0, j));
    for (int i = 1; i < n; ++i) {
      const double v = std::fabs(vectors(i, j));
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    if (vectors(arg, j) < 0.0)
      for (int i = 0; i < n; ++i) vectors(i, j) = -vectors(i, j);
  }
}

}  // namespace

EigDecomp sym_eig(const Matrix& s) {
  const int n = s.rows();
  if (n < 1 || s.cols() != n) throw ConfigError("sym_eig: input must be square, dim >= 1");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!std::isfinite(s(i, j)))
        throw NumericError("sym_eig: non-finite entry at (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");
  check_symmetric(s, 1e-12, "sym_eig input");

  EigDecomp out;
  out.vectors = sym_part(s);  // exact symmetrization, then overwritten with Q
  out.values.assign(n, 0.0);
  Vector e(n, 0.0);
  if (n == 1) {
    out.vectors(0, 0) = 1.0;
    out.values[0] = s(0, 0);
    return out;
  }
  tridiagonalize(out.vectors, out.values, e);
  ql_implicit(out.values, e, out.vectors);

  // Sort descending, stable in the original index for equal values.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return out.values[a] > out.values[b]; });
  Matrix sorted(n, n);
  Vector vals(n);
  for (int j = 0; j < n; ++j) {
    vals[j] = out.values[order[j]];
    for (int i = 0; i < n; ++i) sorted(i, j) = out.vectors(i, order[j]);
  }
  out.vectors = std::move(sorted);
  out.values = std::move(vals);
  apply_sign_convention(out.vectors);
  return out;
}

Matrix spectral_map(const EigDecomp& decomp, const SpectralFn& f) {
  const int n = decomp.vectors.rows();
  if (f.kind == SpectralFn::Kind::Log) {
    const double smallest = decomp.values[n - 1];
    if (!(smallest > 0.0))
      throw NumericError("spectral_map: log needs a positive spectrum, smallest eigenvalue is " +
                         std::to_string(smallest));
  }
  Matrix scaled(n, n);  // U * diag(f(lambda))
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scaled(i, j) = decomp.vectors(i, j) * f.eval(decomp.values[j]);
  return sym_part(multiply_nt(scaled, decomp.vectors));
}

Matrix spectral_map(const Matrix& s, const SpectralFn& f) {
  return spectral_map(sym_eig(s), f);
}

Matrix spectral_map_backward(const EigDecomp& decomp, const SpectralFn& f, const Matrix& grad_out) {
  const int n = decomp.vectors.rows();
  if (grad_out.rows() != n || grad_out.cols() != n)
    throw ConfigError("spectral_map_backward: gradient shape mismatch");
  const Matrix g = sym_part(grad_out);
  Matrix b = multiply_tn(decomp.vectors, multiply(g, decomp.vectors));
  const Vector& lam = decomp.values;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double li = lam[i], lj = lam[j];
      double k;
      if (std::fabs(li - lj) <= 1e-12 * std::max({1.0, std::fabs(li), std::fabs(lj)})) {
        k = f.deriv(0.5 * (li + lj));  // Daleckii-Krein limit
      } else {
        k = (f.eval(li) - f.eval(lj)) / (li - lj);
      }
      b(i, j) *= k;
    }
  }
  return sym_part(multiply_nt(multiply(decomp.vectors, b), decomp.vectors));
}

Matrix qr_row_orthonormalize(const Matrix& m) {
  const int d_out = m.rows();
  const int d_in = m.cols();
  if (d_out < 1 || d_out > d_in)
    throw ConfigError("qr_row_orthonormalize: need 1 <= rows <= cols, got " +
                      std::to_string(d_out) + "x" + std::to_string(d_in));
  if (!all_finite(m)) throw NumericError("qr_row_orthonormalize: non-finite input");

  // Householder QR of a = m^T (d_in x d_out, tall).
  Matrix a = transpose(m);
  Vector rdiag(d_out, 0.0);
  for (int k = 0; k < d_out; ++k) {
    double nrm = 0.0;
    for (int i = k; i < d_in; ++i) nrm += a(i, k) * a(i, k);
    nrm = std::sqrt(nrm);
    if (nrm != 0.0) {
      if (a(k, k) < 0.0) nrm = -nrm;
      for (int i = k; i < d_in; ++i) a(i, k) /= nrm;
      a(k, k) += 1.0;
      for (int j = k + 1; j < d_out; ++j) {
        double s = 0.0;
        for (int i = k; i < d_in; ++i) s += a(i, k) * a(i, j);
        s = -s / a(k, k);
        for (int i = k; i < d_in; ++i) a(i, j) += s * a(i, k);
      }
    }
    rdiag[k] = -nrm;
  }

  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (double r : rdiag) {
    dmax = std::max(dmax, std::fabs(r));
    dmin = std::min(dmin, std::fabs(r));
  }
  if (dmin < 1e-12 * dmax || dmax == 0.0)
    throw NumericError("qr_row_orthonormalize: numerically rank-deficient input");

  // Thin Q, back-accumulated from the stored reflectors.
  Matrix q(d_in, d_out);
  for (int k = d_out - 1; k >= 0; --k) {
    q(k, k) = 1.0;
    for (int j = k; j < d_out; ++j) {
      if (a(k, k) != 0.0) {
        double s = 0.0;
        for (int i = k; i < d_in; ++i) s += a(i, k) * q(i, j);
        s = -s / a(k, k);
        for (int i = k; i < d_in; ++i) q(i, j) += s * a(i, k);
      }
    }
  }

  // Force the triangular diagonal positive; flips the matching Q column.
  Matrix w(d_out, d_in);
  for (int k = 0; k < d_out; ++k) {
    const double sign = rdiag[k] < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < d_in; ++i) w(k, i) = sign * q(i, k);
  }
  return w;
}

PcaModel pca_fit(const std::vector<Vector>& columns, int p) {
  if (columns.size() < 2) throw ConfigError("pca_fit: need at least 2 samples");
  const int d = int(columns[0].size());
  if (p < 1 || p > d)
    throw ConfigError("pca_fit: target dimension " + std::to_string(p) +
                      " out of range for data dimension " + std::to_string(d));
  for (const auto& c : columns)
    if (int(c.size()) != d) throw ConfigError("pca_fit: inconsistent sample length");

  const std::size_t n = columns.size();
  Vector mean(d, 0.0);
  for (const auto& c : columns)
    for (int i = 0; i < d; ++i) mean[i] += c[i];
  for (int i = 0; i < d; ++i) mean[i] /= double(n);

  Matrix cov(d, d);
  for (const auto& c : columns) {
    for (int i = 0; i < d; ++i) {
      const double ci = c[i] - mean[i];
      for (int j = i; j < d; ++j) cov(i, j) += ci * (c[j] - mean[j]);
    }
  }
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      cov(i, j) /= double(n - 1);
      cov(j, i) = cov(i, j);
    }

  const EigDecomp eig = sym_eig(cov);
  if (eig.values[p - 1] <= 1e-12 * std::max(eig.values[0], 0.0))
    throw NumericError("pca_fit: data has numerical rank below " + std::to_string(p));

  PcaModel model;
  model.mean = std::move(mean);
  model.basis = Matrix(d, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < d; ++i) model.basis(i, j) = eig.vectors(i, j);
  return model;
}

Vector pca_project(const PcaModel& model, const Vector& x) {
  const int d = model.basis.rows();
  if (int(x.size()) != d || int(model.mean.size()) != d)
    throw ConfigError("pca_project: dimension mismatch");
  Vector centered(d);
  for (int i = 0; i < d; ++i) centered[i] = x[i] - model.mean[i];
  return matvec_t(model.basis, centered);
}

}  // namespace msnet
