#pragma once

#include <cstdint>
#include <vector>

#include "msnet/linalg.hpp"
#include "msnet/matrix.hpp"
#include "msnet/spdcore.hpp"

namespace msnet {

// A k x k window at (row, col) on the imaginary d x d grid, mapped to the
// k^2 global indices of the corresponding principal submatrix of a d^2 x d^2
// matrix. The grid uses the column-major vec convention: cell (i, j) of the
// grid is global index j*d + i.
struct WindowIndexSet {
  int origin_row = 0;
  int origin_col = 0;
  std::vector<int> indices;  // strictly ascending, length k^2
};

// All windows of side k stepped by s over the d x d grid, enumerated
// row-major over origins. (d - k) must be divisible by s: partial windows
// are rejected, never truncated.
std::vector<WindowIndexSet> window_index_sets(int d, int k, int s);

// Exact C(n, k) in 64-bit arithmetic; overflow raises instead of wrapping.
std::uint64_t binomial(int n, int k);

// ---- BiMap: S -> W S W^T with rows-orthonormal W -----------------------

struct BimapTape {
  Matrix w;
  Matrix input;
};

Matrix bimap_forward(const Matrix& w, const Matrix& s, BimapTape* tape = nullptr);

struct BimapGrads {
  Matrix grad_w;  // Euclidean gradient; Stiefel projection is the optimizer's job
  Matrix grad_s;
};

BimapGrads bimap_backward(const BimapTape& tape, const Matrix& grad_out);

// ---- Spectral layers: ReEig (eigenvalue rectification) and LogEig ------

struct SpectralTape {
  EigDecomp decomp;
  SpectralFn fn;
};

Matrix reeig_forward(const Matrix& s, double eps, SpectralTape* tape = nullptr);
Matrix reeig_backward(const SpectralTape& tape, const Matrix& grad_out);

Matrix logeig_forward(const Matrix& s, SpectralTape* tape = nullptr);
Matrix logeig_backward(const SpectralTape& tape, const Matrix& grad_out);

// ---- SubSec: principal submatrix extraction ----------------------------

std::vector<Matrix> subsec_forward(const Matrix& s, const std::vector<WindowIndexSet>& sets);

// Scatter-add of per-window gradients back to the full matrix; overlapping
// windows accumulate.
Matrix subsec_backward(int dim, const std::vector<WindowIndexSet>& sets,
                       const std::vector<Matrix>& grads);

// ---- TrilCan: lower-triangle vectorization + concatenation -------------

struct TrilcanTape {
  std::vector<int> dims;
};

Vector trilcan_forward(const std::vector<Matrix>& mats, TrilcanTape* tape = nullptr);

// Gradient entries land on the lower triangle only; the symmetric-gradient
// convention used throughout (sym() inside the spectral backward) mirrors
// them downstream.
std::vector<Matrix> trilcan_backward(const TrilcanTape& tape, const Vector& grad_vec);

// ---- FC head and softmax cross-entropy ---------------------------------

struct FcTape {
  Vector input;
};

Vector fc_forward(const Matrix& weights, const Vector& bias, const Vector& v,
                  FcTape* tape = nullptr);

struct FcGrads {
  Matrix grad_weights;
  Vector grad_bias;
  Vector grad_input;
};

FcGrads fc_backward(const Matrix& weights, const FcTape& tape, const Vector& grad_logits);

struct SoftmaxCe {
  double loss = 0.0;
  Vector grad_logits;  // softmax(logits) - onehot(label), sums to zero
  Vector probs;
};

SoftmaxCe softmax_ce(const Vector& logits, int label);

}  // namespace msnet
