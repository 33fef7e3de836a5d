#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msnet/layers.hpp"
#include "msnet/matrix.hpp"
#include "msnet/spdcore.hpp"

namespace msnet {

struct SpdSample {
  Matrix matrix;
  int label = 0;
};

struct SpdDataset {
  int dim = 0;
  int class_count = 0;
  std::vector<SpdSample> samples;
};

// Structural validation: square matrices of the shared dim, finite and
// symmetric entries, labels in range. Eigenvalue positivity is checked
// separately (assert_spd) where it matters.
void validate_dataset(const SpdDataset& ds);

void save_dataset(const SpdDataset& ds, const std::string& path);
SpdDataset load_dataset(const std::string& path);

struct RawSequence {
  std::vector<Vector> frames;
  int label = 0;
};

void save_sequences(const std::vector<RawSequence>& seqs, const std::string& path);
std::vector<RawSequence> load_sequences(const std::string& path);

struct SequenceIssue {
  std::size_t index = 0;
  std::string message;
};

// Frames -> (optional PCA) -> covariance descriptor, one SPD matrix per
// sequence. pca_dim = 0 disables projection entirely; otherwise the basis is
// fit on all frames of the sequences named by pca_fit_subset. With `issues`
// non-null, bad sequences are skipped and reported; otherwise the first bad
// sequence throws.
SpdDataset sequences_to_dataset(const std::vector<RawSequence>& seqs, int pca_dim, double lambda,
                                const std::vector<std::size_t>& pca_fit_subset,
                                std::vector<SequenceIssue>* issues = nullptr);

struct SplitResult {
  SpdDataset train;
  SpdDataset test;
};

// Per-class seeded shuffle, 70% (rounded down, at least 1) to train.
SplitResult split_str(const SpdDataset& ds, std::uint64_t seed);

// Per-class seeded shuffle, a fixed number of samples per class to train;
// every class must keep at least one test sample.
SplitResult split_fixed(const SpdDataset& ds, int n_train_per_class, std::uint64_t seed);

// Synthetic task with planted local covariance structure. Frames are drawn
// as x_t = L_c z_t + sigma * eta_t where every class shares one seeded base
// loading, except that the rows of L_c covering the class's own 2x2 grid
// window are amplified by a factor of 5. The discriminative signal therefore
// lives entirely in one small principal submatrix per class, buried under
// isotropic frame noise.
struct SyntheticSpec {
  std::uint64_t seed = 7;
  int classes = 2;
  int n_per_class = 100;
  int grid = 4;        // d; matrices are d^2 x d^2
  int frames = 17;     // per-sample frame count n, must be >= d^2 + 1
  int rank = 0;        // loading rank r in [1, d^2], 0 means d^2
  double sigma = 7.3;  // frame noise level
  double lambda = 1e-3;
};

struct SyntheticTask {
  SpdDataset data;
  std::vector<WindowIndexSet> planted_windows;  // one per class
};

SyntheticTask gen_synthetic(const SyntheticSpec& spec);

// Nearest-class-mean classifier on the concatenated log-tril features of the
// planted windows, over a 70/30 split. Fixes the task's learnability without
// any network involvement.
double planted_baseline_accuracy(const SyntheticTask& task, std::uint64_t split_seed);

}  // namespace msnet
