#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "msnet/dataio.hpp"
#include "msnet/layers.hpp"
#include "msnet/matrix.hpp"
#include "msnet/optim.hpp"
#include "msnet/rng.hpp"

namespace msnet {

// H: global window only. PS: all proper scales {2..d-1}. AS: {2..d}.
// S: configured scales minus the global one. MS: configured scales as-is.
enum class Variant { H, PS, AS, S, MS };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct MsNetConfig {
  std::vector<int> backbone_dims;  // first entry is the input dim
  int branch_dim = 0;              // perfect square d^2, <= last backbone dim
  std::vector<int> scales;         // window sides k on the d x d grid
  int step = 1;
  Variant variant = Variant::MS;
  double epsilon = 1e-5;
  int num_classes = 0;
  double lambda = 1e-3;  // descriptor regularizer, recorded with the run
  int epochs = 0;
  int batch_size = 30;
  std::uint64_t seed = 0;
};

// Throws ConfigError naming the offending field.
void validate_config(const MsNetConfig& config);

std::vector<int> resolve_scales(Variant variant, const std::vector<int>& configured, int d);

// Length of the fused feature vector: sum over effective scales k of
// ((d-k)/step + 1)^2 windows times k^2(k^2+1)/2 entries each.
std::size_t feature_dim(const MsNetConfig& config);

// Canonical flat key=value rendering ([network] section, fixed key order,
// floats at full precision) and its parser. Parsing ignores unknown
// sections, rejects unknown keys inside [network], and leaves absent keys
// at their defaults; it does not validate.
std::string config_to_text(const MsNetConfig& config);
MsNetConfig config_from_text(const std::string& text);

struct MsNetModel {
  MsNetConfig config;
  std::vector<int> effective_scales;
  std::vector<std::vector<WindowIndexSet>> branch_windows;  // per effective scale
  std::vector<Matrix> backbone;  // Stiefel, dims[i+1] x dims[i]
  std::vector<Matrix> branch;    // Stiefel, branch_dim x dims.back(), ascending scale
  Matrix fc_weights;
  Vector fc_bias;
  std::uint64_t epoch = 0;
  Rng train_rng{0};  // initialization stream continues as the shuffle stream
};

MsNetModel build(const MsNetConfig& config);

struct BranchTape {
  BimapTape bimap;
  SpectralTape reeig;
  std::vector<SpectralTape> logeigs;  // one per window
  TrilcanTape tril;
};

struct SampleTape {
  std::vector<BimapTape> backbone_bimaps;
  std::vector<SpectralTape> backbone_reeigs;
  std::vector<BranchTape> branches;
  FcTape fc;
};

struct ForwardResult {
  std::vector<Vector> logits;
  std::vector<SampleTape> tapes;
};

// Optional SPD health collection: smallest eigenvalue seen per layer family
// plus symmetry checks on every intermediate feature. Collecting stats
// forces the serial path.
struct SpdStats {
  double bimap_min_eig = std::numeric_limits<double>::infinity();
  double reeig_min_eig = std::numeric_limits<double>::infinity();
  double submatrix_min_eig = std::numeric_limits<double>::infinity();
  std::uint64_t features_checked = 0;
  bool all_symmetric = true;
};

// threads <= 1 runs the serial reference path; larger values parallelize
// over samples with per-sample output slots, so results are bitwise
// identical to serial.
ForwardResult forward(const MsNetModel& model, const std::vector<Matrix>& batch, int threads = 1,
                      SpdStats* stats = nullptr);

struct Gradients {
  std::vector<Matrix> backbone;  // Euclidean, pre-projection
  std::vector<Matrix> branch;
  Matrix fc_weights;
  Vector fc_bias;
  double mean_loss = 0.0;
  std::vector<Matrix> inputs;  // filled only when requested
};

Gradients backward(const MsNetModel& model, const ForwardResult& fwd,
                   const std::vector<int>& labels, int threads = 1,
                   bool want_input_grads = false);

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
};

struct TrainOptions {
  int threads = 1;
  LrSchedule schedule;
  std::string checkpoint_path;  // empty disables checkpointing
  int checkpoint_interval = 0;  // epochs between checkpoints; 0 = final only
  std::function<void(const EpochRow&)> on_epoch;
  SpdStats* stats = nullptr;
};

// Runs epochs [model.epoch, config.epochs). The per-epoch accuracy is a
// full evaluation pass over the training set after the epoch's updates, so
// a later evaluate() on the same data reproduces it exactly.
std::vector<EpochRow> train(MsNetModel& model, const SpdDataset& data, const TrainOptions& opts);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true class][predicted]
};

EvalResult evaluate(const MsNetModel& model, const SpdDataset& data, int threads = 1,
                    SpdStats* stats = nullptr);

// Binary checkpoint, bitwise round-trip including the RNG state.
void save_checkpoint(const MsNetModel& model, const std::string& path);
MsNetModel load_checkpoint(const std::string& path);

}  // namespace msnet
