#pragma once

#include <vector>

#include "msnet/matrix.hpp"

namespace msnet {

// Eigendecomposition of a symmetric matrix: columns of `vectors` are
// orthonormal eigenvectors, `values` are the matching eigenvalues sorted
// non-increasing. Sign convention: each eigenvector's entry of largest
// magnitude is positive, ties broken by lowest index, so the decomposition
// of a given byte pattern is unique.
struct EigDecomp {
  Matrix vectors;
  Vector values;
};

// Scalar spectral function f together with its derivative, applied to the
// eigenvalues of a symmetric matrix.
struct SpectralFn {
  enum class Kind { Identity, Log, Rectify, Exp };

  Kind kind = Kind::Identity;
  double eps = 0.0;  // rectification threshold, Rectify only

  double eval(double x) const;
  double deriv(double x) const;
  const char* name() const;

  static SpectralFn identity() { return {Kind::Identity, 0.0}; }
  static SpectralFn log() { return {Kind::Log, 0.0}; }
  static SpectralFn rectify(double eps) { return {Kind::Rectify, eps}; }
  static SpectralFn exp() { return {Kind::Exp, 0.0}; }
};

// Full eigendecomposition by Householder tridiagonalization followed by
// implicit-shift QL iteration. Deterministic for identical input bytes.
EigDecomp sym_eig(const Matrix& s);

// U diag(f(lambda)) U^T.
Matrix spectral_map(const EigDecomp& decomp, const SpectralFn& f);
Matrix spectral_map(const Matrix& s, const SpectralFn& f);

// Gradient of S -> U f(Lambda) U^T: with B = U^T sym(G) U and the divided
// difference matrix K (K_ii = f'(lambda_i)), returns U (K o B) U^T.
// Eigenvalue pairs closer than 1e-12 * max(1, |l_i|, |l_j|) use the limit
// K_ij = f'((l_i + l_j)/2).
Matrix spectral_map_backward(const EigDecomp& decomp, const SpectralFn& f, const Matrix& grad_out);

// Rows-orthonormal factor from the thin QR factorization of m^T, with the
// triangular factor's diagonal forced positive so the result is unique and
// the map is idempotent on its own outputs.
Matrix qr_row_orthonormalize(const Matrix& m);

struct PcaModel {
  Matrix basis;  // d x p, orthonormal columns, descending variance
  Vector mean;   // length d
};

// Top-p principal directions of the sample covariance of `columns`.
PcaModel pca_fit(const std::vector<Vector>& columns, int p);

// basis^T (x - mean).
Vector pca_project(const PcaModel& model, const Vector& x);

}  // namespace msnet
