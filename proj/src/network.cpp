#include "msnet/network.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "msnet/errors.hpp"
#include "msnet/io_util.hpp"
#include "msnet/linalg.hpp"

namespace msnet {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::H: return "H";
    case Variant::PS: return "PS";
    case Variant::AS: return "AS";
    case Variant::S: return "S";
    case Variant::MS: return "MS";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  std::string up = name;
  for (char& c : up) c = char(std::toupper(static_cast<unsigned char>(c)));
  if (up == "H") return Variant::H;
  if (up == "PS") return Variant::PS;
  if (up == "AS") return Variant::AS;
  if (up == "S") return Variant::S;
  if (up == "MS") return Variant::MS;
  throw ConfigError("unknown variant \"" + name + "\" (expected H, PS, AS, S or MS)");
}

namespace {

int grid_side(int branch_dim) {
  const int d = int(std::lround(std::sqrt(double(branch_dim))));
  return d * d == branch_dim ? d : -1;
}

template <typename F>
auto with_context(const std::string& ctx, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(ctx + ": " + e.what());
  }
}

}  // namespace

std::vector<int> resolve_scales(Variant variant, const std::vector<int>& configured, int d) {
  if (d < 1) throw ConfigError("config: branch grid side must be >= 1");
  const auto cleaned = [&] {
    std::vector<int> s = configured;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.empty()) throw ConfigError("config: scales is empty");
    for (int k : s)
      if (k < 1 || k > d)
        throw ConfigError("config: scales: window side " + std::to_string(k) + " outside [1, " +
                          std::to_string(d) + "]");
    return s;
  };
  std::vector<int> out;
  switch (variant) {
    case Variant::H:
      out = {d};
      break;
    case Variant::PS:
      for (int k = 2; k < d; ++k) out.push_back(k);
      if (out.empty())
        throw ConfigError("config: variant PS needs a branch grid side of at least 3");
      break;
    case Variant::AS:
      for (int k = 2; k <= d; ++k) out.push_back(k);
      if (out.empty())
        throw ConfigError("config: variant AS needs a branch grid side of at least 2");
      break;
    case Variant::S:
      for (int k : cleaned())
        if (k != d) out.push_back(k);
      if (out.empty())
        throw ConfigError(
            "config: variant S has no scales left after dropping the global window");
      break;
    case Variant::MS:
      out = cleaned();
      break;
  }
  return out;
}

void validate_config(const MsNetConfig& c) {
  if (c.backbone_dims.empty()) throw ConfigError("config: backbone_dims is empty");
  for (std::size_t i = 0; i < c.backbone_dims.size(); ++i) {
    if (c.backbone_dims[i] < 1)
      throw ConfigError("config: backbone_dims entries must be positive");
    if (i > 0 && c.backbone_dims[i] >= c.backbone_dims[i - 1])
      throw ConfigError("config: backbone_dims must be strictly decreasing");
  }
  if (c.branch_dim < 1) throw ConfigError("config: branch_dim must be positive");
  const int d = grid_side(c.branch_dim);
  if (d < 0)
    throw ConfigError("config: branch_dim " + std::to_string(c.branch_dim) +
                      " is not a perfect square");
  if (c.branch_dim > c.backbone_dims.back())
    throw ConfigError("config: branch_dim " + std::to_string(c.branch_dim) +
                      " exceeds the last backbone dim " + std::to_string(c.backbone_dims.back()));
  if (c.step < 1) throw ConfigError("config: step must be >= 1");
  for (int k : resolve_scales(c.variant, c.scales, d))
    if ((d - k) % c.step != 0)
      throw ConfigError("config: scales: window side " + std::to_string(k) +
                        " does not tile the grid of side " + std::to_string(d) + " with step " +
                        std::to_string(c.step));
  if (!(c.epsilon > 0.0)) throw ConfigError("config: epsilon must be > 0");
  if (c.num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
  if (c.lambda < 0.0) throw ConfigError("config: lambda must be >= 0");
  if (c.epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
}

std::size_t feature_dim(const MsNetConfig& c) {
  const int d = grid_side(c.branch_dim);
  if (d < 0) throw ConfigError("config: branch_dim is not a perfect square");
  std::size_t total = 0;
  for (int k : resolve_scales(c.variant, c.scales, d)) {
    const std::size_t per_axis = std::size_t((d - k) / c.step) + 1;
    total += per_axis * per_axis * tril_len(k * k);
  }
  return total;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_ll(const std::string& value, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0')
    throw ConfigError("config: key \"" + key + "\": cannot parse integer \"" + value + "\"");
  return v;
}

int parse_int(const std::string& value, const std::string& key) {
  const long long v = parse_ll(value, key);
  if (v < INT_MIN || v > INT_MAX)
    throw ConfigError("config: key \"" + key + "\": value out of range");
  return int(v);
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0' || value.find('-') != std::string::npos)
    throw ConfigError("config: key \"" + key + "\": cannot parse unsigned integer \"" + value +
                      "\"");
  return v;
}

double parse_double(const std::string& value, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (errno != 0 || end == value.c_str() || *end != '\0')
    throw ConfigError("config: key \"" + key + "\": cannot parse number \"" + value + "\"");
  return v;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) out.push_back(parse_int(trim(item), key));
  if (out.empty()) throw ConfigError("config: key \"" + key + "\": empty list");
  return out;
}

}  // namespace

std::string config_to_text(const MsNetConfig& c) {
  std::string t = "[network]\n";
  t += "backbone_dims=" + join_ints(c.backbone_dims) + "\n";
  t += "branch_dim=" + std::to_string(c.branch_dim) + "\n";
  t += "scales=" + join_ints(c.scales) + "\n";
  t += "step=" + std::to_string(c.step) + "\n";
  t += std::string("variant=") + variant_name(c.variant) + "\n";
  t += "epsilon=" + fmt_double(c.epsilon) + "\n";
  t += "num_classes=" + std::to_string(c.num_classes) + "\n";
  t += "lambda=" + fmt_double(c.lambda) + "\n";
  t += "epochs=" + std::to_string(c.epochs) + "\n";
  t += "batch_size=" + std::to_string(c.batch_size) + "\n";
  t += "seed=" + std::to_string(c.seed) + "\n";
  return t;
}

MsNetConfig config_from_text(const std::string& text) {
  MsNetConfig c;
  std::string section = "network";  // keys before any header belong to [network]
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section != "network") continue;  // other sections belong to the caller
    if (key == "backbone_dims")
      c.backbone_dims = parse_int_list(value, key);
    else if (key == "branch_dim")
      c.branch_dim = parse_int(value, key);
    else if (key == "scales")
      c.scales = parse_int_list(value, key);
    else if (key == "step")
      c.step = parse_int(value, key);
    else if (key == "variant")
      c.variant = variant_from_name(value);
    else if (key == "epsilon")
      c.epsilon = parse_double(value, key);
    else if (key == "num_classes")
      c.num_classes = parse_int(value, key);
    else if (key == "lambda")
      c.lambda = parse_double(value, key);
    else if (key == "epochs")
      c.epochs = parse_int(value, key);
    else if (key == "batch_size")
      c.batch_size = parse_int(value, key);
    else if (key == "seed")
      c.seed = parse_u64(value, key);
    else
      throw ConfigError("config: unknown key \"" + key + "\" in [network]");
  }
  return c;
}

MsNetModel build(const MsNetConfig& config) {
  validate_config(config);
  MsNetModel m;
  m.config = config;
  const int d = grid_side(config.branch_dim);
  m.effective_scales = resolve_scales(config.variant, config.scales, d);
  for (int k : m.effective_scales)
    m.branch_windows.push_back(window_index_sets(d, k, config.step));

  Rng rng(config.seed);
  for (std::size_t i = 0; i + 1 < config.backbone_dims.size(); ++i)
    m.backbone.push_back(
        init_semi_orthogonal(rng, config.backbone_dims[i + 1], config.backbone_dims[i]));
  // Square branch maps start at the identity (itself row-orthonormal), so
  // each scale's windows initially read the matching principal blocks of the
  // backbone feature's grid; dimension-reducing branch maps draw a seeded
  // semi-orthogonal start like the backbone.
  for (std::size_t b = 0; b < m.effective_scales.size(); ++b) {
    if (config.branch_dim == config.backbone_dims.back()) {
      Matrix eye(config.branch_dim, config.branch_dim);
      for (int i = 0; i < config.branch_dim; ++i) eye(i, i) = 1.0;
      m.branch.push_back(std::move(eye));
    } else {
      m.branch.push_back(init_semi_orthogonal(rng, config.branch_dim, config.backbone_dims.back()));
    }
  }

  const std::size_t f = feature_dim(config);
  const double scale = 1.0 / std::sqrt(double(f));
  m.fc_weights = Matrix(config.num_classes, int(f));
  for (int i = 0; i < config.num_classes; ++i)
    for (std::size_t j = 0; j < f; ++j) m.fc_weights(i, int(j)) = rng.normal() * scale;
  m.fc_bias.assign(std::size_t(config.num_classes), 0.0);
  m.train_rng = rng;  // init stream continues as the shuffle stream
  m.epoch = 0;
  return m;
}

namespace {

enum class FeatKind { Bimap, Reeig, Submatrix };

void note_eig(SpdStats* stats, FeatKind kind, double min_eig, bool symmetric) {
  if (!stats) return;
  double& slot = kind == FeatKind::Bimap     ? stats->bimap_min_eig
                 : kind == FeatKind::Reeig   ? stats->reeig_min_eig
                                             : stats->submatrix_min_eig;
  slot = std::min(slot, min_eig);
  stats->all_symmetric = stats->all_symmetric && symmetric;
  ++stats->features_checked;
}

void note_matrix(SpdStats* stats, FeatKind kind, const Matrix& m) {
  if (!stats) return;
  note_eig(stats, kind, sym_eig(m).values.back(), is_symmetric(m));
}

Vector forward_sample(const MsNetModel& model, const Matrix& input, SampleTape* tape,
                      SpdStats* stats) {
  const MsNetConfig& cfg = model.config;
  const int in_dim = cfg.backbone_dims.front();
  if (input.rows() != in_dim || input.cols() != in_dim)
    throw ConfigError("forward: input is " + std::to_string(input.rows()) + "x" +
                      std::to_string(input.cols()) + ", expected " + std::to_string(in_dim) + "x" +
                      std::to_string(in_dim));

  if (tape) {
    tape->backbone_bimaps.resize(model.backbone.size());
    tape->backbone_reeigs.resize(model.backbone.size());
    tape->branches.resize(model.branch.size());
  }

  Matrix cur = input;
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    cur = with_context("backbone stage " + std::to_string(i), [&] {
      Matrix s = bimap_forward(model.backbone[i], cur, tape ? &tape->backbone_bimaps[i] : nullptr);
      SpectralTape local;
      SpectralTape* rt = tape ? &tape->backbone_reeigs[i] : &local;
      Matrix r = reeig_forward(s, cfg.epsilon, rt);
      note_eig(stats, FeatKind::Bimap, rt->decomp.values.back(), true);
      note_matrix(stats, FeatKind::Reeig, r);
      return r;
    });
  }

  Vector features;
  for (std::size_t b = 0; b < model.branch.size(); ++b) {
    const Vector v = with_context("branch k=" + std::to_string(model.effective_scales[b]), [&] {
      BranchTape local;
      BranchTape* bt = tape ? &tape->branches[b] : &local;
      Matrix s = bimap_forward(model.branch[b], cur, &bt->bimap);
      Matrix r = reeig_forward(s, cfg.epsilon, &bt->reeig);
      note_eig(stats, FeatKind::Bimap, bt->reeig.decomp.values.back(), true);
      note_matrix(stats, FeatKind::Reeig, r);
      const std::vector<Matrix> subs = subsec_forward(r, model.branch_windows[b]);
      std::vector<Matrix> logs;
      logs.reserve(subs.size());
      bt->logeigs.resize(subs.size());
      for (std::size_t w = 0; w < subs.size(); ++w) {
        logs.push_back(logeig_forward(subs[w], &bt->logeigs[w]));
        note_eig(stats, FeatKind::Submatrix, bt->logeigs[w].decomp.values.back(), true);
      }
      return trilcan_forward(logs, &bt->tril);
    });
    features.insert(features.end(), v.begin(), v.end());
  }

  FcTape local_fc;
  return fc_forward(model.fc_weights, model.fc_bias, features, tape ? &tape->fc : &local_fc);
}

}  // namespace

ForwardResult forward(const MsNetModel& model, const std::vector<Matrix>& batch, int threads,
                      SpdStats* stats) {
  ForwardResult out;
  const int n = int(batch.size());
  out.logits.resize(n);
  out.tapes.resize(n);
  const bool serial = threads <= 1 || stats != nullptr;
#ifdef _OPENMP
  if (!serial) {
    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n; ++i) {
      try {
        out.logits[i] = forward_sample(model, batch[i], &out.tapes[i], nullptr);
      } catch (...) {
#pragma omp critical
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
  }
#endif
  (void)serial;
  for (int i = 0; i < n; ++i) out.logits[i] = forward_sample(model, batch[i], &out.tapes[i], stats);
  return out;
}

namespace {

struct SampleGrads {
  std::vector<Matrix> backbone;
  std::vector<Matrix> branch;
  Matrix fc_w;
  Vector fc_b;
  Matrix input;
  double loss = 0.0;
};

void backward_sample(const MsNetModel& model, const SampleTape& tape, const Vector& logits,
                     int label, bool want_input, SampleGrads& out) {
  const SoftmaxCe head = softmax_ce(logits, label);
  out.loss = head.loss;
  FcGrads fc = fc_backward(model.fc_weights, tape.fc, head.grad_logits);
  out.fc_w = std::move(fc.grad_weights);
  out.fc_b = std::move(fc.grad_bias);

  const int back_dim = model.config.backbone_dims.back();
  Matrix grad_backbone_out(back_dim, back_dim);
  std::size_t off = 0;
  out.branch.resize(model.branch.size());
  for (std::size_t b = 0; b < model.branch.size(); ++b) {
    const BranchTape& bt = tape.branches[b];
    std::size_t len = 0;
    for (int dim : bt.tril.dims) len += tril_len(dim);
    const Vector seg(fc.grad_input.begin() + long(off), fc.grad_input.begin() + long(off + len));
    off += len;
    std::vector<Matrix> wgrads = trilcan_backward(bt.tril, seg);
    for (std::size_t w = 0; w < wgrads.size(); ++w)
      wgrads[w] = logeig_backward(bt.logeigs[w], wgrads[w]);
    const Matrix gsub =
        subsec_backward(model.config.branch_dim, model.branch_windows[b], wgrads);
    const Matrix grect = reeig_backward(bt.reeig, gsub);
    BimapGrads bg = bimap_backward(bt.bimap, grect);
    out.branch[b] = std::move(bg.grad_w);
    grad_backbone_out += bg.grad_s;
  }

  out.backbone.resize(model.backbone.size());
  Matrix g = std::move(grad_backbone_out);
  for (std::size_t i = model.backbone.size(); i-- > 0;) {
    const Matrix grect = reeig_backward(tape.backbone_reeigs[i], g);
    BimapGrads bg = bimap_backward(tape.backbone_bimaps[i], grect);
    out.backbone[i] = std::move(bg.grad_w);
    g = std::move(bg.grad_s);
  }
  if (want_input) out.input = std::move(g);
}

}  // namespace

Gradients backward(const MsNetModel& model, const ForwardResult& fwd,
                   const std::vector<int>& labels, int threads, bool want_input_grads) {
  const int n = int(fwd.logits.size());
  if (int(labels.size()) != n)
    throw ConfigError("backward: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " samples");
  if (n == 0) throw ConfigError("backward: empty batch");
  if (fwd.tapes.size() != fwd.logits.size())
    throw ConfigError("backward: forward result has no tape");

  std::vector<SampleGrads> slots(n);
  bool ran_parallel = false;
  (void)threads;
#ifdef _OPENMP
  if (threads > 1) {
    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n; ++i) {
      try {
        backward_sample(model, fwd.tapes[i], fwd.logits[i], labels[i], want_input_grads, slots[i]);
      } catch (...) {
#pragma omp critical
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    ran_parallel = true;
  }
#endif
  if (!ran_parallel)
    for (int i = 0; i < n; ++i)
      backward_sample(model, fwd.tapes[i], fwd.logits[i], labels[i], want_input_grads, slots[i]);

  // Fixed-order reduction: identical bytes regardless of thread count.
  Gradients total;
  for (const Matrix& w : model.backbone) total.backbone.emplace_back(w.rows(), w.cols());
  for (const Matrix& w : model.branch) total.branch.emplace_back(w.rows(), w.cols());
  total.fc_weights = Matrix(model.fc_weights.rows(), model.fc_weights.cols());
  total.fc_bias.assign(model.fc_bias.size(), 0.0);
  double loss_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < total.backbone.size(); ++k) total.backbone[k] += slots[i].backbone[k];
    for (std::size_t k = 0; k < total.branch.size(); ++k) total.branch[k] += slots[i].branch[k];
    total.fc_weights += slots[i].fc_w;
    for (std::size_t k = 0; k < total.fc_bias.size(); ++k) total.fc_bias[k] += slots[i].fc_b[k];
    loss_sum += slots[i].loss;
  }
  const double inv = 1.0 / double(n);
  for (Matrix& m : total.backbone) m *= inv;
  for (Matrix& m : total.branch) m *= inv;
  total.fc_weights *= inv;
  for (double& v : total.fc_bias) v *= inv;
  total.mean_loss = loss_sum * inv;
  if (want_input_grads) {
    total.inputs.reserve(n);
    // gradients of the batch-mean loss with respect to each sample's input
    for (int i = 0; i < n; ++i) {
      slots[i].input *= inv;
      total.inputs.push_back(std::move(slots[i].input));
    }
  }
  return total;
}

EvalResult evaluate(const MsNetModel& model, const SpdDataset& data, int threads,
                    SpdStats* stats) {
  if (data.samples.empty()) throw ConfigError("evaluate: empty dataset");
  if (data.dim != model.config.backbone_dims.front())
    throw ConfigError("evaluate: dataset dim " + std::to_string(data.dim) +
                      " does not match model input dim " +
                      std::to_string(model.config.backbone_dims.front()));
  if (data.class_count > model.config.num_classes)
    throw ConfigError("evaluate: dataset has " + std::to_string(data.class_count) +
                      " classes but the model has " + std::to_string(model.config.num_classes));

  const int n = int(data.samples.size());
  std::vector<int> preds(n, 0);
  const auto predict = [&](int i) {
    const Vector logits = forward_sample(model, data.samples[i].matrix, nullptr, stats);
    int best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = int(c);  // ties stay at the lowest index
    preds[i] = best;
  };
  const bool serial = threads <= 1 || stats != nullptr;
  (void)serial;
#ifdef _OPENMP
  if (!serial) {
    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n; ++i) {
      try {
        predict(i);
      } catch (...) {
#pragma omp critical
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
  } else
#endif
  {
    for (int i = 0; i < n; ++i) predict(i);
  }

  EvalResult res;
  res.confusion.assign(std::size_t(model.config.num_classes),
                       std::vector<std::uint64_t>(std::size_t(model.config.num_classes), 0));
  std::size_t correct = 0;
  for (int i = 0; i < n; ++i) {
    const int label = data.samples[i].label;
    res.confusion[label][preds[i]] += 1;
    if (preds[i] == label) ++correct;
  }
  res.accuracy = double(correct) / double(n);
  return res;
}

std::vector<EpochRow> train(MsNetModel& model, const SpdDataset& data, const TrainOptions& opts) {
  validate_config(model.config);
  validate_dataset(data);
  const MsNetConfig& cfg = model.config;
  if (data.samples.empty()) throw ConfigError("train: empty dataset");
  if (data.dim != cfg.backbone_dims.front())
    throw ConfigError("train: dataset dim " + std::to_string(data.dim) +
                      " does not match model input dim " +
                      std::to_string(cfg.backbone_dims.front()));
  if (data.class_count > cfg.num_classes)
    throw ConfigError("train: dataset has " + std::to_string(data.class_count) +
                      " classes but the model has " + std::to_string(cfg.num_classes));
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const SpdReport rep = assert_spd(data.samples[i].matrix, 1e-12);
    if (!rep.pass)
      throw NumericError("train: sample " + std::to_string(i) + " is not SPD: " + rep.detail);
  }
  if (model.epoch > std::uint64_t(cfg.epochs))
    throw ConfigError("train: model is already past the configured epoch count");

  const auto max_param_magnitude = [&] {
    double m = 0.0;
    for (const Matrix& w : model.backbone) m = std::max(m, max_abs(w));
    for (const Matrix& w : model.branch) m = std::max(m, max_abs(w));
    m = std::max(m, max_abs(model.fc_weights));
    for (double v : model.fc_bias) m = std::max(m, std::fabs(v));
    return m;
  };

  std::vector<EpochRow> history;
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::uint64_t last_saved = std::uint64_t(-1);

  for (int epoch = int(model.epoch); epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(opts.schedule, epoch);
    // restart from the identity permutation so the epoch's order depends only
    // on the rng state at epoch start; resumed runs then replay exactly
    std::iota(order.begin(), order.end(), std::size_t(0));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[model.train_rng.below(i)]);

    double loss_sum = 0.0;
    const std::size_t bs = std::size_t(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(start + bs, order.size());
      std::vector<Matrix> batch;
      std::vector<int> labels;
      batch.reserve(end - start);
      labels.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(data.samples[order[i]].matrix);
        labels.push_back(data.samples[order[i]].label);
      }
      const ForwardResult fwd = forward(model, batch, opts.threads, opts.stats);
      Gradients grads = backward(model, fwd, labels, opts.threads);
      if (!std::isfinite(grads.mean_loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(start / bs) +
                           " (largest parameter magnitude " +
                           std::to_string(max_param_magnitude()) + ")");
      loss_sum += grads.mean_loss * double(end - start);

      std::vector<Matrix*> sp;
      std::vector<const Matrix*> sg;
      for (std::size_t k = 0; k < model.backbone.size(); ++k) {
        sp.push_back(&model.backbone[k]);
        sg.push_back(&grads.backbone[k]);
      }
      for (std::size_t k = 0; k < model.branch.size(); ++k) {
        sp.push_back(&model.branch[k]);
        sg.push_back(&grads.branch[k]);
      }
      sgd_step(sp, sg, {&model.fc_weights}, {&grads.fc_weights}, {&model.fc_bias},
               {&grads.fc_bias}, lr);
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / double(order.size());
    row.train_acc = evaluate(model, data, opts.threads, opts.stats).accuracy;
    history.push_back(row);
    model.epoch = std::uint64_t(epoch) + 1;
    if (opts.on_epoch) opts.on_epoch(row);
    if (!opts.checkpoint_path.empty() && opts.checkpoint_interval > 0 &&
        (epoch + 1) % opts.checkpoint_interval == 0) {
      save_checkpoint(model, opts.checkpoint_path);
      last_saved = model.epoch;
    }
  }
  if (!opts.checkpoint_path.empty() && last_saved != model.epoch)
    save_checkpoint(model, opts.checkpoint_path);
  return history;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void write_param(ByteWriter& w, const std::string& name, const std::vector<std::uint32_t>& dims,
                 const double* data, std::size_t count) {
  w.u32(std::uint32_t(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(std::uint32_t(dims.size()));
  for (std::uint32_t d : dims) w.u32(d);
  w.bytes(data, count * sizeof(double));
}

void read_param(ByteReader& r, const std::string& name, const std::vector<std::uint32_t>& dims,
                double* data, std::size_t count) {
  const std::uint32_t name_len = r.u32();
  if (name_len > 4096 || name_len > r.remaining())
    throw IoError(r.name() + ": truncated file (parameter name)");
  std::string got(name_len, '\0');
  r.bytes(got.data(), name_len);
  if (got != name)
    throw IoError(r.name() + ": parameter mismatch (expected \"" + name + "\", found \"" + got +
                  "\")");
  if (r.u32() != dims.size())
    throw IoError(r.name() + ": parameter \"" + name + "\" has unexpected rank");
  for (std::uint32_t d : dims)
    if (r.u32() != d)
      throw IoError(r.name() + ": parameter \"" + name + "\" has unexpected shape");
  r.bytes(data, count * sizeof(double));
}

}  // namespace

void save_checkpoint(const MsNetModel& model, const std::string& path) {
  ByteWriter w;
  w.magic("MSNC");
  w.u32(kCheckpointVersion);
  const std::string cfg = config_to_text(model.config);
  w.u32(std::uint32_t(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    const Matrix& m = model.backbone[i];
    write_param(w, "backbone_" + std::to_string(i),
                {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, m.data(), m.size());
  }
  for (std::size_t b = 0; b < model.branch.size(); ++b) {
    const Matrix& m = model.branch[b];
    write_param(w, "branch_s" + std::to_string(model.effective_scales[b]),
                {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, m.data(), m.size());
  }
  write_param(w, "fc_weights",
              {std::uint32_t(model.fc_weights.rows()), std::uint32_t(model.fc_weights.cols())},
              model.fc_weights.data(), model.fc_weights.size());
  write_param(w, "fc_bias", {std::uint32_t(model.fc_bias.size())}, model.fc_bias.data(),
              model.fc_bias.size());
  w.u64(model.epoch);
  const std::array<std::uint64_t, 4> st = model.train_rng.state();
  for (std::uint64_t v : st) w.u64(v);
  w.trailing_crc();
  write_file(path, w.buffer());
}

MsNetModel load_checkpoint(const std::string& path) {
  ByteReader r(read_file(path), path);
  r.expect_magic("MSNC");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = r.u32();
  if (cfg_len > r.remaining()) throw IoError(path + ": truncated file (config blob)");
  std::string cfg_text(cfg_len, '\0');
  r.bytes(cfg_text.data(), cfg_len);
  MsNetModel model = build(config_from_text(cfg_text));

  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    Matrix& m = model.backbone[i];
    read_param(r, "backbone_" + std::to_string(i),
               {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, m.data(), m.size());
  }
  for (std::size_t b = 0; b < model.branch.size(); ++b) {
    Matrix& m = model.branch[b];
    read_param(r, "branch_s" + std::to_string(model.effective_scales[b]),
               {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, m.data(), m.size());
  }
  read_param(r, "fc_weights",
             {std::uint32_t(model.fc_weights.rows()), std::uint32_t(model.fc_weights.cols())},
             model.fc_weights.data(), model.fc_weights.size());
  read_param(r, "fc_bias", {std::uint32_t(model.fc_bias.size())}, model.fc_bias.data(),
             model.fc_bias.size());
  model.epoch = r.u64();
  std::array<std::uint64_t, 4> st{};
  for (std::uint64_t& v : st) v = r.u64();
  model.train_rng.set_state(st);
  r.finish_trailing_crc();
  return model;
}

}  // namespace msnet
