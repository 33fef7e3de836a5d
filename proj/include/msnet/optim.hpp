#pragma once

#include <vector>

#include "msnet/matrix.hpp"
#include "msnet/rng.hpp"

namespace msnet {

// Tangent-space projection at W on the manifold of rows-orthonormal
// matrices: G - sym(G W^T) W. The result T satisfies T W^T + W T^T = 0.
Matrix stiefel_project(const Matrix& w, const Matrix& g);

// QR retraction: row-orthonormalize W - eta * direction. A zero step
// returns W bitwise unchanged.
Matrix stiefel_retract(const Matrix& w, const Matrix& direction, double eta);

// Stepwise-decayed learning rate with a floor.
struct LrSchedule {
  double initial = 1e-2;
  double decay = 0.8;
  int period = 50;
  double floor = 1e-3;
};

double lr_at(const LrSchedule& schedule, int epoch);

// Row-orthonormalized seeded Gaussian draw.
Matrix init_semi_orthogonal(Rng& rng, int d_out, int d_in);

// One plain-SGD step: Stiefel parameters get project-then-retract with the
// paired Euclidean gradient; Euclidean parameters get p - lr * g.
void sgd_step(const std::vector<Matrix*>& stiefel_params,
              const std::vector<const Matrix*>& stiefel_grads,
              const std::vector<Matrix*>& euclid_params,
              const std::vector<const Matrix*>& euclid_grads,
              const std::vector<Vector*>& euclid_vec_params,
              const std::vector<const Vector*>& euclid_vec_grads, double lr);

}  // namespace msnet
