#pragma once

#include <cstddef>
#include <vector>

namespace msnet {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit floats. All operations on it are plain
// fixed-order loops so identical inputs give bit-identical outputs.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, 0.0) {}
  Matrix(int rows, int cols, std::vector<double> values);

  static Matrix identity(int n);
  static Matrix diag(const Vector& values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int i, int j) { return data_[std::size_t(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[std::size_t(i) * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double scalar);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix multiply(const Matrix& a, const Matrix& b);     // a * b
Matrix multiply_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix multiply_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix sym_part(const Matrix& a);  // (a + a^T) / 2

Vector matvec(const Matrix& a, const Vector& x);    // a * x
Vector matvec_t(const Matrix& a, const Vector& x);  // a^T * x

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
bool all_finite(const Matrix& a);
bool bit_equal(const Matrix& a, const Matrix& b);

// Enforces the symmetry invariant |a_ij - a_ji| <= rel_tol * max(1, |a_ij|, |a_ji|).
bool is_symmetric(const Matrix& a, double rel_tol = 1e-12);
void check_symmetric(const Matrix& a, double rel_tol = 1e-12, const char* what = "matrix");

double dot(const Vector& a, const Vector& b);

}  // namespace msnet
