#include "msnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msnet/errors.hpp"

namespace msnet {

std::vector<WindowIndexSet> window_index_sets(int d, int k, int s) {
  if (d < 1 || k < 1 || k > d)
    throw ConfigError("window_index_sets: need 1 <= k <= d, got k=" + std::to_string(k) +
                      " d=" + std::to_string(d));
  if (s < 1) throw ConfigError("window_index_sets: step must be >= 1");
  if ((d - k) % s != 0)
    throw ConfigError("window_index_sets: (d - k) = " + std::to_string(d - k) +
                      " not divisible by step " + std::to_string(s) +
                      " (partial windows are not supported)");

  std::vector<WindowIndexSet> sets;
  const int per_axis = (d - k) / s + 1;
  sets.reserve(std::size_t(per_axis) * per_axis);
  for (int r = 0; r <= d - k; r += s) {
    for (int c = 0; c <= d - k; c += s) {
      WindowIndexSet w;
      w.origin_row = r;
      w.origin_col = c;
      w.indices.reserve(std::size_t(k) * k);
      // j outer, i inner: ascending in j*d + i.
      for (int j = c; j < c + k; ++j)
        for (int i = r; i < r + k; ++i) w.indices.push_back(j * d + i);
      sets.push_back(std::move(w));
    }
  }
  return sets;
}

std::uint64_t binomial(int n, int k) {
  if (n < 0 || k < 0 || k > n) throw ConfigError("binomial: need 0 <= k <= n");
  if (k > n - k) k = n - k;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) {
    std::uint64_t t = 0;
    if (__builtin_mul_overflow(r, std::uint64_t(n - k + i), &t))
      throw NumericError("binomial: result exceeds 64 bits");
    r = t / std::uint64_t(i);  // exact: the running value is C(n-k+i, i)
  }
  return r;
}

Matrix bimap_forward(const Matrix& w, const Matrix& s, BimapTape* tape) {
  if (s.rows() != s.cols() || w.cols() != s.rows())
    throw ConfigError("bimap_forward: weight is " + std::to_string(w.rows()) + "x" +
                      std::to_string(w.cols()) + " but input is " + std::to_string(s.rows()) +
                      "x" + std::to_string(s.cols()));
  if (w.rows() > w.cols()) throw ConfigError("bimap_forward: weight must have rows <= cols");
  Matrix out = sym_part(multiply_nt(multiply(w, s), w));
  if (tape) {
    tape->w = w;
    tape->input = s;
  }
  return out;
}

BimapGrads bimap_backward(const BimapTape& tape, const Matrix& grad_out) {
  const int d_out = tape.w.rows();
  if (grad_out.rows() != d_out || grad_out.cols() != d_out)
    throw ConfigError("bimap_backward: gradient shape mismatch");
  const Matrix g = sym_part(grad_out);
  const Matrix gw = multiply(g, tape.w);
  BimapGrads grads;
  grads.grad_w = multiply(gw, tape.input);
  grads.grad_w *= 2.0;
  grads.grad_s = multiply_tn(tape.w, gw);
  return grads;
}

Matrix reeig_forward(const Matrix& s, double eps, SpectralTape* tape) {
  if (!(eps > 0.0)) throw ConfigError("reeig_forward: eps must be > 0");
  EigDecomp decomp = sym_eig(s);
  const SpectralFn fn = SpectralFn::rectify(eps);
  Matrix out = spectral_map(decomp, fn);
  if (tape) {
    tape->decomp = std::move(decomp);
    tape->fn = fn;
  }
  return out;
}

Matrix reeig_backward(const SpectralTape& tape, const Matrix& grad_out) {
  return spectral_map_backward(tape.decomp, tape.fn, grad_out);
}

Matrix logeig_forward(const Matrix& s, SpectralTape* tape) {
  EigDecomp decomp = sym_eig(s);
  const SpectralFn fn = SpectralFn::log();
  Matrix out = spectral_map(decomp, fn);
  if (tape) {
    tape->decomp = std::move(decomp);
    tape->fn = fn;
  }
  return out;
}

Matrix logeig_backward(const SpectralTape& tape, const Matrix& grad_out) {
  return spectral_map_backward(tape.decomp, tape.fn, grad_out);
}

std::vector<Matrix> subsec_forward(const Matrix& s, const std::vector<WindowIndexSet>& sets) {
  if (s.rows() != s.cols()) throw ConfigError("subsec_forward: input must be square");
  std::vector<Matrix> out;
  out.reserve(sets.size());
  for (const WindowIndexSet& set : sets) {
    const int k2 = int(set.indices.size());
    Matrix p(k2, k2);
    for (int a = 0; a < k2; ++a) {
      const int ia = set.indices[a];
      if (ia < 0 || ia >= s.rows())
        throw ConfigError("subsec_forward: index " + std::to_string(ia) +
                          " out of range for dim " + std::to_string(s.rows()));
      for (int b = 0; b < k2; ++b) p(a, b) = s(ia, set.indices[b]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Matrix subsec_backward(int dim, const std::vector<WindowIndexSet>& sets,
                       const std::vector<Matrix>& grads) {
  if (grads.size() != sets.size())
    throw ConfigError("subsec_backward: " + std::to_string(sets.size()) + " windows but " +
                      std::to_string(grads.size()) + " gradients");
  Matrix out(dim, dim);
  for (std::size_t j = 0; j < sets.size(); ++j) {
    const WindowIndexSet& set = sets[j];
    const int k2 = int(set.indices.size());
    if (grads[j].rows() != k2 || grads[j].cols() != k2)
      throw ConfigError("subsec_backward: gradient " + std::to_string(j) + " shape mismatch");
    for (int a = 0; a < k2; ++a) {
      const int ia = set.indices[a];
      if (ia < 0 || ia >= dim)
        throw ConfigError("subsec_backward: index out of range");
      for (int b = 0; b < k2; ++b) out(ia, set.indices[b]) += grads[j](a, b);
    }
  }
  return out;
}

Vector trilcan_forward(const std::vector<Matrix>& mats, TrilcanTape* tape) {
  std::size_t total = 0;
  for (const Matrix& m : mats) {
    if (m.rows() != m.cols()) throw ConfigError("trilcan_forward: inputs must be square");
    total += tril_len(m.rows());
  }
  Vector out;
  out.reserve(total);
  if (tape) tape->dims.clear();
  for (const Matrix& m : mats) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j <= i; ++j) out.push_back(m(i, j));
    if (tape) tape->dims.push_back(m.rows());
  }
  return out;
}

std::vector<Matrix> trilcan_backward(const TrilcanTape& tape, const Vector& grad_vec) {
  std::size_t total = 0;
  for (int d : tape.dims) total += tril_len(d);
  if (grad_vec.size() != total)
    throw ConfigError("trilcan_backward: gradient length " + std::to_string(grad_vec.size()) +
                      ", expected " + std::to_string(total));
  std::vector<Matrix> grads;
  grads.reserve(tape.dims.size());
  std::size_t idx = 0;
  for (int d : tape.dims) {
    Matrix g(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) g(i, j) = grad_vec[idx++];
    grads.push_back(std::move(g));
  }
  return grads;
}

Vector fc_forward(const Matrix& weights, const Vector& bias, const Vector& v, FcTape* tape) {
  if (std::size_t(weights.rows()) != bias.size() || std::size_t(weights.cols()) != v.size())
    throw ConfigError("fc_forward: weights " + std::to_string(weights.rows()) + "x" +
                      std::to_string(weights.cols()) + " incompatible with bias " +
                      std::to_string(bias.size()) + " / input " + std::to_string(v.size()));
  Vector logits = matvec(weights, v);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += bias[i];
  if (tape) tape->input = v;
  return logits;
}

FcGrads fc_backward(const Matrix& weights, const FcTape& tape, const Vector& grad_logits) {
  const int classes = weights.rows();
  const int features = weights.cols();
  if (grad_logits.size() != std::size_t(classes) || tape.input.size() != std::size_t(features))
    throw ConfigError("fc_backward: shape mismatch");
  FcGrads grads;
  grads.grad_weights = Matrix(classes, features);
  for (int i = 0; i < classes; ++i)
    for (int j = 0; j < features; ++j) grads.grad_weights(i, j) = grad_logits[i] * tape.input[j];
  grads.grad_bias = grad_logits;
  grads.grad_input = matvec_t(weights, grad_logits);
  return grads;
}

SoftmaxCe softmax_ce(const Vector& logits, int label) {
  const int classes = int(logits.size());
  if (label < 0 || label >= classes)
    throw ConfigError("softmax_ce: label " + std::to_string(label) + " out of range for " +
                      std::to_string(classes) + " classes");
  double top = logits[0];
  for (double l : logits) top = std::max(top, l);
  double sum = 0.0;
  SoftmaxCe out;
  out.probs.resize(classes);
  for (int i = 0; i < classes; ++i) {
    out.probs[i] = std::exp(logits[i] - top);
    sum += out.probs[i];
  }
  for (int i = 0; i < classes; ++i) out.probs[i] /= sum;
  out.loss = std::log(sum) + top - logits[label];  // log-sum-exp shift
  out.grad_logits = out.probs;
  out.grad_logits[label] -= 1.0;
  return out;
}

}  // namespace msnet
