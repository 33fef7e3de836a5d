#include "msnet/optim.hpp"

#include <cmath>
#include <string>

#include "msnet/errors.hpp"
#include "msnet/linalg.hpp"

namespace msnet {

Matrix stiefel_project(const Matrix& w, const Matrix& g) {
  if (!w.same_shape(g)) throw ConfigError("stiefel_project: shape mismatch");
  const Matrix gwt = sym_part(multiply_nt(g, w));
  Matrix tangent = g;
  tangent -= multiply(gwt, w);
  return tangent;
}

Matrix stiefel_retract(const Matrix& w, const Matrix& direction, double eta) {
  if (!w.same_shape(direction)) throw ConfigError("stiefel_retract: shape mismatch");
  // Exact zero step: skip the QR so the parameter stays bitwise unchanged.
  if (eta * max_abs(direction) == 0.0) return w;
  Matrix stepped = w;
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) stepped(i, j) -= eta * direction(i, j);
  return qr_row_orthonormalize(stepped);
}

double lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ConfigError("lr_at: negative epoch");
  if (!(schedule.decay > 0.0 && schedule.decay < 1.0) || schedule.period < 1 ||
      schedule.floor > schedule.initial)
    throw ConfigError("lr_at: invalid schedule");
  const double raw = schedule.initial * std::pow(schedule.decay, double(epoch / schedule.period));
  return std::max(schedule.floor, raw);
}

Matrix init_semi_orthogonal(Rng& rng, int d_out, int d_in) {
  if (d_out < 1 || d_out > d_in)
    throw ConfigError("init_semi_orthogonal: need 1 <= d_out <= d_in, got " +
                      std::to_string(d_out) + "x" + std::to_string(d_in));
  Matrix m(d_out, d_in);
  for (int i = 0; i < d_out; ++i)
    for (int j = 0; j < d_in; ++j) m(i, j) = rng.normal();
  return qr_row_orthonormalize(m);
}

void sgd_step(const std::vector<Matrix*>& stiefel_params,
              const std::vector<const Matrix*>& stiefel_grads,
              const std::vector<Matrix*>& euclid_params,
              const std::vector<const Matrix*>& euclid_grads,
              const std::vector<Vector*>& euclid_vec_params,
              const std::vector<const Vector*>& euclid_vec_grads, double lr) {
  if (stiefel_params.size() != stiefel_grads.size() ||
      euclid_params.size() != euclid_grads.size() ||
      euclid_vec_params.size() != euclid_vec_grads.size())
    throw ConfigError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < stiefel_params.size(); ++k) {
    Matrix& w = *stiefel_params[k];
    const Matrix tangent = stiefel_project(w, *stiefel_grads[k]);
    w = stiefel_retract(w, tangent, lr);
  }
  for (std::size_t k = 0; k < euclid_params.size(); ++k) {
    Matrix& p = *euclid_params[k];
    const Matrix& g = *euclid_grads[k];
    if (!p.same_shape(g)) throw ConfigError("sgd_step: Euclidean gradient shape mismatch");
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < p.cols(); ++j) p(i, j) -= lr * g(i, j);
  }
  for (std::size_t k = 0; k < euclid_vec_params.size(); ++k) {
    Vector& p = *euclid_vec_params[k];
    const Vector& g = *euclid_vec_grads[k];
    if (p.size() != g.size()) throw ConfigError("sgd_step: Euclidean gradient length mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

}  // namespace msnet
