#pragma once

#include <cstddef>
#include <string>

#include "msnet/matrix.hpp"

namespace msnet {

// Trace-regularized sample covariance of the columns of x (d x n, samples as
// columns): S = C + lambda * trace(C) * I with C the sample covariance over
// columns. Positive definite whenever the columns are not all identical.
Matrix covariance_descriptor(const Matrix& x, double lambda);

struct SpdReport {
  bool pass = false;
  bool symmetric = false;
  double min_eigenvalue = 0.0;
  std::string detail;
};

// Report-returning SPD check: passes iff symmetric within tol and the
// smallest eigenvalue exceeds tol. Never throws on bad input.
SpdReport assert_spd(const Matrix& s, double tol);

// Lower triangle of a symmetric d x d matrix, row-major including the
// diagonal: (m00, m10, m11, m20, ...), length d(d+1)/2.
struct TrilVector {
  int dim = 0;
  Vector values;
};

std::size_t tril_len(int d);
TrilVector tril_vec(const Matrix& m);
Matrix tril_unvec(const Vector& values, int d);
Matrix tril_unvec(const TrilVector& v);

}  // namespace msnet
