// Command-line front end: train / eval / gradcheck / synth / preprocess /
// inspect over the binary dataset, sequence and checkpoint formats.
//
// Exit codes: 0 success, 1 failed gradient check, 2 usage or configuration
// problem (including I/O), 3 numerical failure.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msnet/dataio.hpp"
#include "msnet/errors.hpp"
#include "msnet/io_util.hpp"
#include "msnet/network.hpp"
#include "msnet/verify.hpp"

using namespace msnet;

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// The [run] section of a config file: paths and execution knobs the network
// itself does not care about. Command-line flags override these.
struct RunSection {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key) const {
    auto it = values.find(key);
    return it == values.end() ? std::string() : it->second;
  }
};

RunSection parse_run_section(const std::string& text) {
  static const char* known[] = {"data", "checkpoint", "out", "metrics", "threads",
                                "checkpoint_interval"};
  RunSection run;
  std::string section = "network";
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string raw =
        text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    if (section != "run") continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: run line \"" + line + "\" is not key=value");
    const std::string key = trim(line.substr(0, eq));
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("config: unknown run key \"" + key + "\"");
    run.values[key] = trim(line.substr(eq + 1));
  }
  return run;
}

MsNetConfig preset_config(const std::string& name) {
  MsNetConfig cfg;
  if (name == "cg") {
    cfg.backbone_dims = {100, 80, 50};
    cfg.branch_dim = 25;
    cfg.scales = {2, 3, 4, 5};
    cfg.epsilon = 1e-5;
    cfg.num_classes = 9;
    cfg.epochs = 500;
  } else if (name == "fpha") {
    cfg.backbone_dims = {63, 56, 46};
    cfg.branch_dim = 36;
    cfg.scales = {5, 6};
    cfg.epsilon = 1e-4;
    cfg.num_classes = 45;
    cfg.epochs = 3500;
  } else if (name == "ucf-sub") {
    cfg.backbone_dims = {100, 80};
    cfg.branch_dim = 49;
    cfg.scales = {2, 6, 7};
    cfg.epsilon = 1e-5;
    cfg.num_classes = 50;
    cfg.epochs = 500;
  } else {
    throw ConfigError("unknown preset \"" + name + "\" (expected cg, fpha or ucf-sub)");
  }
  return cfg;
}

int parse_positive_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size() || v < 1) throw std::invalid_argument(what);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + " must be a positive integer, got \"" + text + "\"");
  }
}

int resolve_threads(int flag_threads, const RunSection& run) {
  if (flag_threads > 0) return flag_threads;
  if (flag_threads == 0) throw ConfigError("threads must be >= 1");
  if (run.has("threads")) return parse_positive_int(run.get("threads"), "run threads");
  if (const char* env = std::getenv("MSNET_THREADS"))
    return parse_positive_int(env, "MSNET_THREADS");
  return 1;
}

std::string pick_path(const std::string& flag_value, const RunSection& run,
                      const std::string& key) {
  return !flag_value.empty() ? flag_value : run.get(key);
}

// Everything the train/eval commands share: an optional config file whose
// [network] section overrides the preset, then explicit --set pairs on top.
struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::string data;
  int threads = -1;  // -1 = unset
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file ([network] and [run] sections)");
  cmd->add_option("--preset", opts.preset, "base configuration: cg, fpha or ucf-sub");
  cmd->add_option("--set", opts.sets, "network key override, key=value (repeatable)");
  cmd->add_option("--data", opts.data, "dataset file");
  cmd->add_option("--threads", opts.threads, "worker threads (default 1 or MSNET_THREADS)");
}

struct ResolvedConfig {
  MsNetConfig network;
  RunSection run;
};

ResolvedConfig resolve_config(const CommonOpts& opts) {
  ResolvedConfig r;
  std::string text;
  if (!opts.preset.empty()) text += config_to_text(preset_config(opts.preset));
  if (!opts.config_path.empty()) {
    const std::string file_text = read_file(opts.config_path);
    r.run = parse_run_section(file_text);
    text += "\n" + file_text;
  }
  if (!opts.sets.empty()) {
    text += "\n[network]\n";
    for (const std::string& kv : opts.sets) text += kv + "\n";
  }
  r.network = text.empty() ? MsNetConfig{} : config_from_text(text);
  return r;
}

void echo_config(const MsNetConfig& cfg, const std::vector<std::pair<std::string, std::string>>& run) {
  std::fputs(config_to_text(cfg).c_str(), stdout);
  if (!run.empty()) {
    std::fputs("[run]\n", stdout);
    for (const auto& [k, v] : run) std::printf("%s=%s\n", k.c_str(), v.c_str());
  }
  std::fputs("\n", stdout);
}

SpdDataset load_dataset_checked(const std::string& path, const std::string& cmd) {
  if (path.empty()) throw ConfigError(cmd + ": no dataset given (--data or run data=)");
  return load_dataset(path);
}

int cmd_train(const CommonOpts& common, const std::string& out_flag,
              const std::string& metrics_flag, int interval_flag, const std::string& resume,
              int epochs_override, bool verbose) {
  MsNetModel model;
  RunSection run;
  if (!resume.empty()) {
    if (!common.preset.empty() || !common.config_path.empty() || !common.sets.empty())
      throw ConfigError("train: --resume takes its configuration from the checkpoint; "
                        "--config/--preset/--set cannot be combined with it");
    model = load_checkpoint(resume);
    if (epochs_override >= 0) model.config.epochs = epochs_override;
    validate_config(model.config);
  } else {
    ResolvedConfig rc = resolve_config(common);
    run = rc.run;
    if (epochs_override >= 0) rc.network.epochs = epochs_override;
    validate_config(rc.network);
    model = build(rc.network);
  }

  const std::string data_path = pick_path(common.data, run, "data");
  const std::string out_path = pick_path(out_flag, run, "out");
  const std::string metrics_path = pick_path(metrics_flag, run, "metrics");
  const int threads = resolve_threads(common.threads, run);
  int interval = interval_flag;
  if (interval < 0 && run.has("checkpoint_interval"))
    interval = parse_positive_int(run.get("checkpoint_interval"), "run checkpoint_interval");
  if (interval < 0) interval = 0;

  std::vector<std::pair<std::string, std::string>> run_echo;
  run_echo.emplace_back("data", data_path);
  if (!out_path.empty()) run_echo.emplace_back("out", out_path);
  if (!metrics_path.empty()) run_echo.emplace_back("metrics", metrics_path);
  run_echo.emplace_back("threads", std::to_string(threads));
  run_echo.emplace_back("checkpoint_interval", std::to_string(interval));
  echo_config(model.config, run_echo);

  const SpdDataset data = load_dataset_checked(data_path, "train");

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics file " + metrics_path);
    metrics << "epoch,lr,train_loss,train_acc,wall_seconds\n";
  }
  const auto start = std::chrono::steady_clock::now();

  TrainOptions opts;
  opts.threads = threads;
  opts.checkpoint_path = out_path;
  opts.checkpoint_interval = interval;
  opts.on_epoch = [&](const EpochRow& row) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (metrics.is_open()) {
      char line[160];
      std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.3f\n", row.epoch, row.lr,
                    row.train_loss, row.train_acc, wall);
      metrics << line << std::flush;
    }
    if (verbose)
      std::printf("epoch %d lr %.6g loss %.6f acc %.4f\n", row.epoch, row.lr, row.train_loss,
                  row.train_acc);
  };

  const std::vector<EpochRow> history = train(model, data, opts);
  if (history.empty()) {
    std::printf("nothing to do: model is already at epoch %llu\n",
                static_cast<unsigned long long>(model.epoch));
  } else {
    std::printf("trained %zu epochs, final train accuracy %.4f\n", history.size(),
                history.back().train_acc);
  }
  if (!out_path.empty()) std::printf("checkpoint written to %s\n", out_path.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& checkpoint_flag, bool confusion) {
  RunSection run;
  if (!common.config_path.empty()) run = parse_run_section(read_file(common.config_path));
  const std::string ckpt_path = pick_path(checkpoint_flag, run, "checkpoint");
  if (ckpt_path.empty())
    throw ConfigError("eval: no checkpoint given (--checkpoint or run checkpoint=)");
  const MsNetModel model = load_checkpoint(ckpt_path);
  const SpdDataset data = load_dataset_checked(pick_path(common.data, run, "data"), "eval");
  const int threads = resolve_threads(common.threads, run);

  const EvalResult res = evaluate(model, data, threads);
  std::printf("accuracy %.4f\n", res.accuracy);
  if (confusion) {
    std::printf("confusion (rows true, cols predicted):\n");
    for (const auto& row : res.confusion) {
      for (std::size_t j = 0; j < row.size(); ++j)
        std::printf("%s%llu", j ? "," : "", static_cast<unsigned long long>(row[j]));
      std::printf("\n");
    }
  }
  return 0;
}

int cmd_gradcheck(const std::string& target, int n_seeds, double tol, const std::string& csv) {
  static const char* layer_kinds[] = {"bimap",   "reeig", "logeig",    "subsec-logeig",
                                      "trilcan", "fc",    "softmax-ce"};
  std::vector<std::string> targets;
  if (target == "all") {
    targets.assign(std::begin(layer_kinds), std::end(layer_kinds));
    targets.push_back("network");
  } else {
    targets.push_back(target);
  }
  if (n_seeds < 1) throw ConfigError("gradcheck: --seeds must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int i = 1; i <= n_seeds; ++i) seeds.push_back(std::uint64_t(i));

  const auto default_tol = [](const std::string& t) {
    if (t == "bimap" || t == "fc") return 1e-6;
    if (t == "network") return 1e-4;
    return 1e-5;
  };

  bool all_pass = true;
  std::string csv_out;
  for (const std::string& t : targets) {
    GradCheckReport rep;
    const double use_tol = tol > 0.0 ? tol : default_tol(t);
    if (t == "network") {
      MsNetConfig cfg;
      cfg.backbone_dims = {6, 4};
      cfg.branch_dim = 4;
      cfg.scales = {1, 2};
      cfg.num_classes = 3;
      cfg.epochs = 1;
      // the full-parameter sweep is quadratic in seeds; keep it modest
      std::vector<std::uint64_t> net_seeds(seeds.begin(),
                                           seeds.begin() + std::min<std::size_t>(seeds.size(), 4));
      rep = gradcheck_network(cfg, net_seeds, use_tol, 2);
    } else {
      LayerCheckSpec spec;
      spec.kind = t;
      if (t == "subsec-logeig") spec.dim = 3;
      rep = gradcheck_layer(spec, seeds, use_tol);
    }
    std::fputs(report_text(rep).c_str(), stdout);
    all_pass = all_pass && rep.pass;
    const std::string block = report_csv(rep);
    csv_out += csv_out.empty() ? block : block.substr(block.find('\n') + 1);
  }
  if (!csv.empty()) write_file(csv, csv_out);
  std::printf("gradcheck: %s\n", all_pass ? "PASS" : "FAIL");
  return all_pass ? 0 : 1;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out) {
  if (out.empty()) throw ConfigError("synth: --out is required");
  const SyntheticTask task = gen_synthetic(spec);
  std::printf("planted windows:\n");
  for (std::size_t c = 0; c < task.planted_windows.size(); ++c) {
    const WindowIndexSet& w = task.planted_windows[c];
    std::printf("  class %zu: origin (%d,%d), indices ", c, w.origin_row, w.origin_col);
    for (std::size_t i = 0; i < w.indices.size(); ++i)
      std::printf("%s%d", i ? "," : "", w.indices[i]);
    std::printf("\n");
  }
  std::printf("nearest-mean baseline accuracy %.4f\n",
              planted_baseline_accuracy(task, spec.seed));
  save_dataset(task.data, out);
  std::printf("wrote %zu samples (%dx%d) to %s\n", task.data.samples.size(), task.data.dim,
              task.data.dim, out.c_str());
  return 0;
}

int cmd_preprocess(const std::string& in, const std::string& out, int pca_dim, double lambda,
                   int fit_count) {
  if (in.empty()) throw ConfigError("preprocess: --in is required");
  if (out.empty()) throw ConfigError("preprocess: --out is required");
  const std::vector<RawSequence> seqs = load_sequences(in);
  std::vector<std::size_t> fit_subset;
  if (pca_dim > 0) {
    std::size_t n = fit_count > 0 ? std::min<std::size_t>(std::size_t(fit_count), seqs.size())
                                  : seqs.size();
    for (std::size_t i = 0; i < n; ++i) fit_subset.push_back(i);
  }
  std::vector<SequenceIssue> issues;
  const SpdDataset ds = sequences_to_dataset(seqs, pca_dim, lambda, fit_subset, &issues);
  for (const SequenceIssue& issue : issues)
    std::fprintf(stderr, "warning: sequence %zu skipped: %s\n", issue.index,
                 issue.message.c_str());
  save_dataset(ds, out);
  std::printf("wrote %zu of %zu sequences (%dx%d, %d classes) to %s\n", ds.samples.size(),
              seqs.size(), ds.dim, ds.dim, ds.class_count, out.c_str());
  return 0;
}

int cmd_inspect(const std::string& path) {
  if (path.empty()) throw ConfigError("inspect: a file argument is required");
  const std::string head = read_file(path);
  if (head.size() < 4) throw IoError(path + ": too short to identify");
  const std::string magic = head.substr(0, 4);
  if (magic == "SPDS") {
    const SpdDataset ds = load_dataset(path);
    std::printf("dataset %s\n", path.c_str());
    std::printf("dim %d\nclasses %d\nsamples %zu\n", ds.dim, ds.class_count, ds.samples.size());
    std::vector<std::size_t> counts(std::size_t(ds.class_count), 0);
    for (const SpdSample& s : ds.samples) ++counts[std::size_t(s.label)];
    for (std::size_t c = 0; c < counts.size(); ++c)
      std::printf("class %zu: %zu\n", c, counts[c]);
  } else if (magic == "SEQF") {
    const std::vector<RawSequence> seqs = load_sequences(path);
    std::printf("sequences %s\n", path.c_str());
    std::printf("count %zu\n", seqs.size());
    if (!seqs.empty()) {
      std::size_t lo = seqs[0].frames.size(), hi = lo;
      for (const RawSequence& s : seqs) {
        lo = std::min(lo, s.frames.size());
        hi = std::max(hi, s.frames.size());
      }
      std::printf("frame_dim %zu\nframes %zu..%zu\n",
                  seqs[0].frames.empty() ? 0 : seqs[0].frames[0].size(), lo, hi);
    }
  } else if (magic == "MSNC") {
    const MsNetModel model = load_checkpoint(path);
    std::printf("checkpoint %s\n", path.c_str());
    std::printf("epoch %llu\n", static_cast<unsigned long long>(model.epoch));
    std::fputs(config_to_text(model.config).c_str(), stdout);
    std::printf("parameters:\n");
    for (std::size_t i = 0; i < model.backbone.size(); ++i)
      std::printf("  backbone_%zu %dx%d\n", i, model.backbone[i].rows(),
                  model.backbone[i].cols());
    for (std::size_t b = 0; b < model.branch.size(); ++b)
      std::printf("  branch_s%d %dx%d\n", model.effective_scales[b], model.branch[b].rows(),
                  model.branch[b].cols());
    std::printf("  fc_weights %dx%d\n", model.fc_weights.rows(), model.fc_weights.cols());
    std::printf("  fc_bias %zu\n", model.fc_bias.size());
  } else {
    throw IoError(path + ": unrecognized file type");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPD-matrix network: training, evaluation and verification"};
  app.require_subcommand(1);

  CommonOpts train_common;
  std::string train_out, train_metrics, train_resume;
  int train_interval = -1, train_epochs = -1;
  bool train_verbose = false;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  add_common(train_cmd, train_common);
  train_cmd->add_option("--out", train_out, "checkpoint output path");
  train_cmd->add_option("--metrics", train_metrics, "per-epoch metrics CSV path");
  train_cmd->add_option("--checkpoint-interval", train_interval,
                        "save every N epochs (default: final state only)");
  train_cmd->add_option("--resume", train_resume, "continue from this checkpoint");
  train_cmd->add_option("--epochs", train_epochs, "override the configured epoch count");
  train_cmd->add_flag("--verbose", train_verbose, "print per-epoch progress");

  CommonOpts eval_common;
  std::string eval_checkpoint;
  bool eval_confusion = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate");
  eval_cmd->add_flag("--confusion", eval_confusion, "print the confusion matrix");

  std::string gc_target = "all", gc_csv;
  int gc_seeds = 20;
  double gc_tol = 0.0;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--target", gc_target,
                     "bimap, reeig, logeig, subsec-logeig, trilcan, fc, softmax-ce, network "
                     "or all");
  gc_cmd->add_option("--seeds", gc_seeds, "number of random trials per target");
  gc_cmd->add_option("--tol", gc_tol, "relative tolerance (default per target)");
  gc_cmd->add_option("--csv", gc_csv, "write the per-tensor report as CSV");

  SyntheticSpec synth_spec;
  std::string synth_out;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic planted-window task");
  synth_cmd->add_option("--out", synth_out, "dataset output path");
  synth_cmd->add_option("--seed", synth_spec.seed, "generator seed");
  synth_cmd->add_option("--classes", synth_spec.classes, "number of classes");
  synth_cmd->add_option("--per-class", synth_spec.n_per_class, "samples per class");
  synth_cmd->add_option("--grid", synth_spec.grid, "grid side d; matrices are d^2 x d^2");
  synth_cmd->add_option("--frames", synth_spec.frames, "observations per sample");
  synth_cmd->add_option("--rank", synth_spec.rank, "loading rank (0 = full)");
  synth_cmd->add_option("--sigma", synth_spec.sigma, "frame noise level");
  synth_cmd->add_option("--lambda", synth_spec.lambda, "descriptor regularizer");

  std::string pre_in, pre_out;
  int pre_pca = 0, pre_fit = 0;
  double pre_lambda = 1e-3;
  CLI::App* pre_cmd =
      app.add_subcommand("preprocess", "turn frame sequences into covariance descriptors");
  pre_cmd->add_option("--in", pre_in, "sequence file");
  pre_cmd->add_option("--out", pre_out, "dataset output path");
  pre_cmd->add_option("--pca-dim", pre_pca, "project frames to this dimension first (0 = off)");
  pre_cmd->add_option("--lambda", pre_lambda, "descriptor regularizer");
  pre_cmd->add_option("--fit-count", pre_fit, "fit the projection on the first N sequences");

  std::string inspect_path;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "describe a data or checkpoint file");
  inspect_cmd->add_option("file", inspect_path, "file to describe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train_cmd))
      return cmd_train(train_common, train_out, train_metrics, train_interval, train_resume,
                       train_epochs, train_verbose);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_common, eval_checkpoint, eval_confusion);
    if (app.got_subcommand(gc_cmd)) return cmd_gradcheck(gc_target, gc_seeds, gc_tol, gc_csv);
    if (app.got_subcommand(synth_cmd)) return cmd_synth(synth_spec, synth_out);
    if (app.got_subcommand(pre_cmd))
      return cmd_preprocess(pre_in, pre_out, pre_pca, pre_lambda, pre_fit);
    if (app.got_subcommand(inspect_cmd)) return cmd_inspect(inspect_path);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
