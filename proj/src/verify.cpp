#include "msnet/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "msnet/errors.hpp"
#include "msnet/layers.hpp"
#include "msnet/linalg.hpp"
#include "msnet/optim.hpp"
#include "msnet/rng.hpp"

namespace msnet {

Matrix finite_diff_sym(const std::function<double(const Matrix&)>& fun, const Matrix& s,
                       double h) {
  if (s.rows() != s.cols()) throw ConfigError("finite_diff_sym: input must be square");
  if (!(h > 0.0)) throw ConfigError("finite_diff_sym: h must be > 0");
  const int n = s.rows();
  Matrix g(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Matrix p = s;
      p(i, j) += h;
      if (j != i) p(j, i) += h;
      const double fp = fun(p);
      Matrix q = s;
      q(i, j) -= h;
      if (j != i) q(j, i) -= h;
      const double fm = fun(q);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_sym: non-finite value at perturbation (" +
                           std::to_string(i) + "," + std::to_string(j) + ")");
      const double der = (fp - fm) / (2.0 * h);
      g(i, j) = der;
      g(j, i) = der;
    }
  }
  return g;
}

namespace {

constexpr double kSmallGrad = 1e-6;   // below this magnitude, compare absolutely
constexpr double kAbsFallback = 1e-8;

struct PairErr {
  double rel = 0.0;
  double abs = 0.0;
  bool ok = true;
};

void fold(PairErr& acc, double analytic, double numeric) {
  const double abs_err = std::fabs(analytic - numeric);
  acc.abs = std::max(acc.abs, abs_err);
  const double mag = std::max(std::fabs(analytic), std::fabs(numeric));
  if (mag < kSmallGrad) {
    if (abs_err > kAbsFallback) acc.ok = false;
  } else {
    acc.rel = std::max(acc.rel, abs_err / mag);
  }
}

// analytic is a full array under the symmetric convention; numeric from
// finite_diff_sym.
PairErr compare_sym(const Matrix& analytic, const Matrix& numeric) {
  PairErr e;
  for (int i = 0; i < analytic.rows(); ++i)
    for (int j = i; j < analytic.cols(); ++j) {
      const double a = (i == j) ? analytic(i, i) : analytic(i, j) + analytic(j, i);
      fold(e, a, numeric(i, j));
    }
  return e;
}

PairErr compare_plain(const Matrix& analytic, const Matrix& numeric) {
  PairErr e;
  for (int i = 0; i < analytic.rows(); ++i)
    for (int j = 0; j < analytic.cols(); ++j) fold(e, analytic(i, j), numeric(i, j));
  return e;
}

PairErr compare_vec(const Vector& analytic, const Vector& numeric) {
  PairErr e;
  for (std::size_t i = 0; i < analytic.size(); ++i) fold(e, analytic[i], numeric[i]);
  return e;
}

double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) s += a(i, j) * b(i, j);
  return s;
}

Matrix finite_diff_entries(const std::function<double(const Matrix&)>& fun, const Matrix& m,
                           double h) {
  Matrix g(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      Matrix p = m;
      p(i, j) += h;
      const double fp = fun(p);
      p(i, j) = m(i, j) - h;
      const double fm = fun(p);
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  return g;
}

Vector finite_diff_vec(const std::function<double(const Vector&)>& fun, const Vector& v,
                       double h) {
  Vector g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    Vector p = v;
    p[i] += h;
    const double fp = fun(p);
    p[i] = v[i] - h;
    const double fm = fun(p);
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Matrix random_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Matrix spd_from_spectrum(Rng& rng, const Vector& lam) {
  const int n = int(lam.size());
  const Matrix q = init_semi_orthogonal(rng, n, n);
  Matrix scaled(n, n);  // diag(lam) * q
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scaled(i, j) = lam[i] * q(i, j);
  return sym_part(multiply_tn(q, scaled));
}

// Geometric ladder from hi down to lo with small jitter; consecutive gaps
// stay comfortably above 1e-3 for the ranges used here.
Vector generic_spectrum(Rng& rng, int n, double lo, double hi) {
  Vector lam(n);
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : double(i) / double(n - 1);
    lam[i] = hi * std::pow(lo / hi, t) * (1.0 + 0.02 * (2.0 * rng.uniform() - 1.0));
  }
  return lam;
}

// Mixed spectrum for the rectifier: all but one eigenvalue at least 10x the
// threshold, one below threshold/10, optionally one parked at the kink.
Vector reeig_spectrum(Rng& rng, int n, double eps, bool place_kink) {
  Vector lam = generic_spectrum(rng, std::max(1, n - 1), 10.0 * eps, std::max(2.0, 400.0 * eps));
  if (n > 1) lam.push_back(place_kink ? eps + 5e-8 : (eps / 20.0) * (1.0 + 0.1 * rng.uniform()));
  return lam;
}

class Agg {
 public:
  explicit Agg(double tol) : tol_(tol) {}

  void record(const std::string& name, const PairErr& e, bool kink = false) {
    TensorCheck& t = slot(name);
    t.max_rel_err = std::max(t.max_rel_err, e.rel);
    t.max_abs_err = std::max(t.max_abs_err, e.abs);
    if (kink) {
      t.kink_adjacent = true;  // this seed does not count toward the verdict
    } else if (e.rel > tol_ || !e.ok) {
      t.pass = false;
    }
  }

  void finish(GradCheckReport& rep) {
    rep.tensors = tensors_;
    rep.pass = true;
    for (const TensorCheck& t : rep.tensors) rep.pass = rep.pass && t.pass;
  }

 private:
  TensorCheck& slot(const std::string& name) {
    for (TensorCheck& t : tensors_)
      if (t.name == name) return t;
    tensors_.emplace_back();
    tensors_.back().name = name;
    return tensors_.back();
  }

  double tol_;
  std::vector<TensorCheck> tensors_;
};

}  // namespace

GradCheckReport gradcheck_layer(const LayerCheckSpec& spec,
                                const std::vector<std::uint64_t>& seeds, double tol) {
  if (seeds.empty()) throw ConfigError("gradcheck: need at least one seed");
  GradCheckReport rep;
  rep.target = spec.kind;
  rep.tolerance = tol;
  rep.seeds = seeds;
  Agg agg(tol);
  const double h = spec.h;

  for (const std::uint64_t seed : seeds) {
    Rng rng(seed);
    if (spec.kind == "bimap") {
      const int d_out = spec.dim;
      const int d_in = spec.dim_in > 0 ? spec.dim_in : 2 * spec.dim + 5;
      const Matrix w = init_semi_orthogonal(rng, d_out, d_in);
      const Matrix s = spd_from_spectrum(rng, generic_spectrum(rng, d_in, 0.5, 2.0));
      const Matrix g = random_matrix(rng, d_out, d_out);
      BimapTape tape;
      bimap_forward(w, s, &tape);
      const BimapGrads an = bimap_backward(tape, g);
      const Matrix fd_w = finite_diff_entries(
          [&](const Matrix& wp) { return inner(g, bimap_forward(wp, s)); }, w, h);
      agg.record("grad_W", compare_plain(an.grad_w, fd_w));
      const Matrix fd_s = finite_diff_sym(
          [&](const Matrix& sp) { return inner(g, bimap_forward(w, sp)); }, s, h);
      agg.record("grad_S", compare_sym(an.grad_s, fd_s));
    } else if (spec.kind == "reeig") {
      const Matrix s = spd_from_spectrum(rng, reeig_spectrum(rng, spec.dim, spec.eps,
                                                             spec.place_kink));
      const Matrix g = random_matrix(rng, spec.dim, spec.dim);
      SpectralTape tape;
      reeig_forward(s, spec.eps, &tape);
      bool kink = false;
      for (double l : tape.decomp.values)
        if (std::fabs(l - spec.eps) < 1e-7) kink = true;
      const Matrix an = reeig_backward(tape, g);
      const Matrix fd = finite_diff_sym(
          [&](const Matrix& sp) { return inner(g, reeig_forward(sp, spec.eps)); }, s, h);
      agg.record("grad_S", compare_sym(an, fd), kink);
    } else if (spec.kind == "logeig") {
      const Matrix s = spd_from_spectrum(rng, generic_spectrum(rng, spec.dim, 0.3, 3.0));
      const Matrix g = random_matrix(rng, spec.dim, spec.dim);
      SpectralTape tape;
      logeig_forward(s, &tape);
      const Matrix an = logeig_backward(tape, g);
      const Matrix fd =
          finite_diff_sym([&](const Matrix& sp) { return inner(g, logeig_forward(sp)); }, s, h);
      agg.record("grad_S", compare_sym(an, fd));
    } else if (spec.kind == "subsec-logeig") {
      const int d = spec.dim;  // grid side; windows of side 2, step 1
      const int dim = d * d;
      const std::vector<WindowIndexSet> sets = window_index_sets(d, 2, 1);
      const Matrix s = spd_from_spectrum(rng, generic_spectrum(rng, dim, 0.5, 2.0));
      std::vector<Matrix> gs;
      gs.reserve(sets.size());
      for (std::size_t w = 0; w < sets.size(); ++w) gs.push_back(random_matrix(rng, 4, 4));
      const std::vector<Matrix> subs = subsec_forward(s, sets);
      std::vector<Matrix> wgrads;
      wgrads.reserve(sets.size());
      for (std::size_t w = 0; w < sets.size(); ++w) {
        SpectralTape tape;
        logeig_forward(subs[w], &tape);
        wgrads.push_back(logeig_backward(tape, gs[w]));
      }
      const Matrix an = subsec_backward(dim, sets, wgrads);
      const Matrix fd = finite_diff_sym(
          [&](const Matrix& sp) {
            const std::vector<Matrix> subs2 = subsec_forward(sp, sets);
            double loss = 0.0;
            for (std::size_t w = 0; w < sets.size(); ++w)
              loss += inner(gs[w], logeig_forward(subs2[w]));
            return loss;
          },
          s, h);
      agg.record("grad_S", compare_sym(an, fd));
    } else if (spec.kind == "trilcan") {
      const std::vector<int> dims = {spec.dim, spec.dim + 1};
      std::vector<Matrix> mats;
      for (int d : dims) mats.push_back(sym_part(random_matrix(rng, d, d)));
      std::size_t total = 0;
      for (int d : dims) total += tril_len(d);
      Vector g(total);
      for (double& v : g) v = rng.normal();
      TrilcanTape tape;
      trilcan_forward(mats, &tape);
      const std::vector<Matrix> an = trilcan_backward(tape, g);
      for (std::size_t m = 0; m < mats.size(); ++m) {
        const Matrix fd = finite_diff_sym(
            [&](const Matrix& mp) {
              std::vector<Matrix> mats2 = mats;
              mats2[m] = mp;
              const Vector out = trilcan_forward(mats2);
              double loss = 0.0;
              for (std::size_t i = 0; i < out.size(); ++i) loss += g[i] * out[i];
              return loss;
            },
            mats[m], h);
        agg.record("grad_M" + std::to_string(m), compare_sym(an[m], fd));
      }
    } else if (spec.kind == "fc") {
      const int classes = spec.dim;
      const int features = spec.dim_in > 0 ? spec.dim_in : 2 * spec.dim + 5;
      const Matrix weights = random_matrix(rng, classes, features);
      Vector bias(classes), v(features), g(classes);
      for (double& x : bias) x = rng.normal();
      for (double& x : v) x = rng.normal();
      for (double& x : g) x = rng.normal();
      const auto probe = [&](const Vector& logits) {
        double loss = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) loss += g[i] * logits[i];
        return loss;
      };
      FcTape tape;
      fc_forward(weights, bias, v, &tape);
      const FcGrads an = fc_backward(weights, tape, g);
      const Matrix fd_w = finite_diff_entries(
          [&](const Matrix& wp) { return probe(fc_forward(wp, bias, v)); }, weights, h);
      agg.record("grad_weights", compare_plain(an.grad_weights, fd_w));
      const Vector fd_b = finite_diff_vec(
          [&](const Vector& bp) { return probe(fc_forward(weights, bp, v)); }, bias, h);
      agg.record("grad_bias", compare_vec(an.grad_bias, fd_b));
      const Vector fd_v = finite_diff_vec(
          [&](const Vector& vp) { return probe(fc_forward(weights, bias, vp)); }, v, h);
      agg.record("grad_input", compare_vec(an.grad_input, fd_v));
    } else if (spec.kind == "softmax-ce") {
      const int classes = spec.dim;
      Vector logits(classes);
      for (double& x : logits) x = 2.0 * rng.normal();
      const int label = int(rng.below(std::uint64_t(classes)));
      const SoftmaxCe sc = softmax_ce(logits, label);
      const Vector fd = finite_diff_vec(
          [&](const Vector& lp) { return softmax_ce(lp, label).loss; }, logits, h);
      agg.record("grad_logits", compare_vec(sc.grad_logits, fd));
    } else {
      throw ConfigError("gradcheck: unknown layer kind \"" + spec.kind + "\"");
    }
  }
  agg.finish(rep);
  return rep;
}

GradCheckReport gradcheck_network(const MsNetConfig& config,
                                  const std::vector<std::uint64_t>& seeds, double tol,
                                  int batch_size, double h) {
  if (seeds.empty()) throw ConfigError("gradcheck: need at least one seed");
  if (batch_size < 1) throw ConfigError("gradcheck: batch_size must be >= 1");
  validate_config(config);
  GradCheckReport rep;
  rep.target = std::string("network-") + variant_name(config.variant);
  rep.tolerance = tol;
  rep.seeds = seeds;
  Agg agg(tol);

  for (const std::uint64_t seed : seeds) {
    MsNetConfig cfg = config;
    cfg.seed = seed;
    MsNetModel model = build(cfg);
    Rng rng(seed ^ 0x9E3779B97F4A7C15ull);  // data stream distinct from the init stream
    std::vector<Matrix> batch;
    std::vector<int> labels;
    for (int i = 0; i < batch_size; ++i) {
      batch.push_back(
          spd_from_spectrum(rng, generic_spectrum(rng, cfg.backbone_dims.front(), 0.5, 2.0)));
      labels.push_back(int(rng.below(std::uint64_t(cfg.num_classes))));
    }
    const auto loss_of = [&](const MsNetModel& m, const std::vector<Matrix>& b) {
      const ForwardResult f = forward(m, b, 1, nullptr);
      double sum = 0.0;
      for (int i = 0; i < batch_size; ++i) sum += softmax_ce(f.logits[i], labels[i]).loss;
      return sum / double(batch_size);
    };

    const ForwardResult fwd = forward(model, batch, 1, nullptr);
    const Gradients an = backward(model, fwd, labels, 1, true);

    MsNetModel scratch = model;
    const auto check_matrix_param = [&](Matrix& target, const Matrix& analytic,
                                        const std::string& name) {
      PairErr e;
      for (int i = 0; i < target.rows(); ++i)
        for (int j = 0; j < target.cols(); ++j) {
          const double orig = target(i, j);
          target(i, j) = orig + h;
          const double fp = loss_of(scratch, batch);
          target(i, j) = orig - h;
          const double fm = loss_of(scratch, batch);
          target(i, j) = orig;
          fold(e, analytic(i, j), (fp - fm) / (2.0 * h));
        }
      agg.record(name, e);
    };
    for (std::size_t i = 0; i < model.backbone.size(); ++i)
      check_matrix_param(scratch.backbone[i], an.backbone[i], "backbone_" + std::to_string(i));
    for (std::size_t b = 0; b < model.branch.size(); ++b)
      check_matrix_param(scratch.branch[b], an.branch[b],
                         "branch_s" + std::to_string(model.effective_scales[b]));
    check_matrix_param(scratch.fc_weights, an.fc_weights, "fc_weights");
    {
      PairErr e;
      for (std::size_t k = 0; k < scratch.fc_bias.size(); ++k) {
        const double orig = scratch.fc_bias[k];
        scratch.fc_bias[k] = orig + h;
        const double fp = loss_of(scratch, batch);
        scratch.fc_bias[k] = orig - h;
        const double fm = loss_of(scratch, batch);
        scratch.fc_bias[k] = orig;
        fold(e, an.fc_bias[k], (fp - fm) / (2.0 * h));
      }
      agg.record("fc_bias", e);
    }
    for (int i = 0; i < batch_size; ++i) {
      const Matrix fd = finite_diff_sym(
          [&](const Matrix& sp) {
            std::vector<Matrix> b2 = batch;
            b2[i] = sp;
            return loss_of(model, b2);
          },
          batch[i], h);
      agg.record("input_" + std::to_string(i), compare_sym(an.inputs[i], fd));
    }
  }
  agg.finish(rep);
  return rep;
}

void oracle_self_check() {
  Rng rng(20240811ull);
  {
    const int n = 5;
    const Matrix s = spd_from_spectrum(rng, generic_spectrum(rng, n, 0.5, 2.0));
    const Matrix fd = finite_diff_sym([](const Matrix& m) { return trace(m); }, s, 1e-5);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        const double expect = i == j ? 1.0 : 0.0;
        if (std::fabs(fd(i, j) - expect) > 1e-10)
          throw NumericError("finite-difference oracle failed the trace closed form");
      }
  }
  {
    const int n = 5;
    const Matrix s = spd_from_spectrum(rng, generic_spectrum(rng, n, 0.5, 2.0));
    const EigDecomp eig = sym_eig(s);
    Matrix scaled(n, n);  // U * diag(1/lambda)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) scaled(i, j) = eig.vectors(i, j) / eig.values[j];
    const Matrix inverse = sym_part(multiply_nt(scaled, eig.vectors));
    const Matrix fd = finite_diff_sym(
        [](const Matrix& m) {
          double ld = 0.0;
          for (double l : sym_eig(m).values) ld += std::log(l);
          return ld;
        },
        s, 1e-5);
    const PairErr e = compare_sym(inverse, fd);
    if (e.rel > 1e-6 || !e.ok)
      throw NumericError("finite-difference oracle failed the log-det closed form");
  }
}

namespace {

std::string fmt_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

std::string report_text(const GradCheckReport& r) {
  std::string out = "gradcheck " + r.target + ": " + (r.pass ? "PASS" : "FAIL") + " (tol " +
                    fmt_sci(r.tolerance) + ", " + std::to_string(r.seeds.size()) + " seeds)\n";
  for (const TensorCheck& t : r.tensors) {
    out += "  " + t.name + ": max_rel " + fmt_sci(t.max_rel_err) + ", max_abs " +
           fmt_sci(t.max_abs_err);
    if (t.kink_adjacent) out += ", kink-adjacent seeds excluded";
    out += t.pass ? ", ok" : ", FAIL";
    out += "\n";
  }
  return out;
}

std::string report_csv(const GradCheckReport& r) {
  std::string out = "target,tensor,max_rel_err,max_abs_err,pass\n";
  for (const TensorCheck& t : r.tensors) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9e,%.9e", t.max_rel_err, t.max_abs_err);
    out += r.target + "," + t.name + "," + buf + "," + (t.pass ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace msnet
