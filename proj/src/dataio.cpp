#include "msnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "msnet/errors.hpp"
#include "msnet/io_util.hpp"
#include "msnet/linalg.hpp"
#include "msnet/rng.hpp"

namespace msnet {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kSequenceVersion = 1;

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

SplitResult split_impl(const SpdDataset& ds, std::uint64_t seed, bool fixed_count, int n_train) {
  validate_dataset(ds);
  std::vector<std::vector<std::size_t>> per_class(ds.class_count);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    per_class[ds.samples[i].label].push_back(i);

  SplitResult out;
  out.train.dim = out.test.dim = ds.dim;
  out.train.class_count = out.test.class_count = ds.class_count;
  Rng rng(seed);
  for (int c = 0; c < ds.class_count; ++c) {
    std::vector<std::size_t>& idx = per_class[c];
    if (idx.size() < 2)
      throw ConfigError("split: class " + std::to_string(c) + " has fewer than 2 samples");
    shuffle_indices(idx, rng);
    std::size_t take;
    if (fixed_count) {
      // taking every sample would leave the test side empty
      if (n_train < 1 || std::size_t(n_train) >= idx.size())
        throw ConfigError("split: cannot take " + std::to_string(n_train) + " of " +
                          std::to_string(idx.size()) + " samples in class " + std::to_string(c));
      take = std::size_t(n_train);
    } else {
      take = std::max<std::size_t>(1, idx.size() * 7 / 10);
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      SpdDataset& side = i < take ? out.train : out.test;
      side.samples.push_back(ds.samples[idx[i]]);
    }
  }
  return out;
}

}  // namespace

void validate_dataset(const SpdDataset& ds) {
  if (ds.dim < 1) throw ConfigError("dataset: dim must be >= 1");
  if (ds.class_count < 1) throw ConfigError("dataset: class_count must be >= 1");
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SpdSample& s = ds.samples[i];
    if (s.label < 0 || s.label >= ds.class_count)
      throw ConfigError("dataset: sample " + std::to_string(i) + " label " +
                        std::to_string(s.label) + " outside [0, " +
                        std::to_string(ds.class_count) + ")");
    if (s.matrix.rows() != ds.dim || s.matrix.cols() != ds.dim)
      throw ConfigError("dataset: sample " + std::to_string(i) + " is " +
                        std::to_string(s.matrix.rows()) + "x" + std::to_string(s.matrix.cols()) +
                        ", expected " + std::to_string(ds.dim));
    if (!all_finite(s.matrix))
      throw NumericError("dataset: sample " + std::to_string(i) + " has non-finite entries");
    if (!is_symmetric(s.matrix))
      throw NumericError("dataset: sample " + std::to_string(i) + " is not symmetric");
  }
}

void save_dataset(const SpdDataset& ds, const std::string& path) {
  validate_dataset(ds);
  ByteWriter w;
  w.magic("SPDS");
  w.u32(kDatasetVersion);
  w.u32(std::uint32_t(ds.dim));
  w.u32(std::uint32_t(ds.class_count));
  w.u64(ds.samples.size());
  for (const SpdSample& s : ds.samples) {
    w.u32(std::uint32_t(s.label));
    w.bytes(s.matrix.data(), s.matrix.size() * sizeof(double));
  }
  w.trailing_crc();
  write_file(path, w.buffer());
}

SpdDataset load_dataset(const std::string& path) {
  ByteReader r(read_file(path), path);
  if (r.remaining() < 24 + 4) throw IoError(path + ": truncated file (incomplete header)");
  r.expect_magic("SPDS");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw IoError(path + ": unsupported dataset version " + std::to_string(version));
  SpdDataset ds;
  ds.dim = int(r.u32());
  ds.class_count = int(r.u32());
  const std::uint64_t count = r.u64();
  if (ds.dim < 1 || ds.dim > 65535) throw IoError(path + ": implausible matrix dim");
  if (count > (std::uint64_t(1) << 40)) throw IoError(path + ": implausible sample count");
  const std::uint64_t per_sample = 4 + 8 * std::uint64_t(ds.dim) * std::uint64_t(ds.dim);
  const std::uint64_t expected = count * per_sample + 4;  // payload + checksum
  if (r.remaining() < expected) throw IoError(path + ": truncated file (sample data cut short)");
  if (r.remaining() > expected) throw IoError(path + ": trailing bytes after payload");
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SpdSample s;
    s.label = int(r.u32());
    s.matrix = Matrix(ds.dim, ds.dim);
    r.bytes(s.matrix.data(), s.matrix.size() * sizeof(double));
    ds.samples.push_back(std::move(s));
  }
  r.finish_trailing_crc();
  validate_dataset(ds);
  return ds;
}

void save_sequences(const std::vector<RawSequence>& seqs, const std::string& path) {
  ByteWriter w;
  w.magic("SEQF");
  w.u32(kSequenceVersion);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const RawSequence& seq = seqs[i];
    if (seq.frames.size() < 2)
      throw ConfigError("sequence " + std::to_string(i) + ": needs at least 2 frames");
    if (seq.label < 0) throw ConfigError("sequence " + std::to_string(i) + ": negative label");
    const std::size_t dim = seq.frames[0].size();
    if (dim < 1) throw ConfigError("sequence " + std::to_string(i) + ": empty frames");
    w.u32(std::uint32_t(seq.label));
    w.u32(std::uint32_t(seq.frames.size()));
    w.u32(std::uint32_t(dim));
    for (const Vector& frame : seq.frames) {
      if (frame.size() != dim)
        throw ConfigError("sequence " + std::to_string(i) + ": ragged frame lengths");
      w.bytes(frame.data(), dim * sizeof(double));
    }
  }
  write_file(path, w.buffer());
}

std::vector<RawSequence> load_sequences(const std::string& path) {
  ByteReader r(read_file(path), path);
  r.expect_magic("SEQF");
  const std::uint32_t version = r.u32();
  if (version != kSequenceVersion)
    throw IoError(path + ": unsupported sequence-file version " + std::to_string(version));
  std::vector<RawSequence> seqs;
  while (!r.at_end()) {
    RawSequence seq;
    seq.label = int(r.u32());
    const std::uint32_t frames = r.u32();
    const std::uint32_t dim = r.u32();
    if (frames < 1 || dim < 1)
      throw IoError(path + ": sequence " + std::to_string(seqs.size()) + " has empty shape");
    seq.frames.assign(frames, Vector(dim));
    for (std::uint32_t t = 0; t < frames; ++t)
      r.bytes(seq.frames[t].data(), std::size_t(dim) * sizeof(double));
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

SpdDataset sequences_to_dataset(const std::vector<RawSequence>& seqs, int pca_dim, double lambda,
                                const std::vector<std::size_t>& pca_fit_subset,
                                std::vector<SequenceIssue>* issues) {
  if (seqs.empty()) throw ConfigError("sequences_to_dataset: no sequences");
  if (pca_dim < 0) throw ConfigError("sequences_to_dataset: pca_dim must be >= 0");

  const auto report = [&](std::size_t index, const std::string& message) {
    if (!issues) throw NumericError("sequence " + std::to_string(index) + ": " + message);
    issues->push_back({index, message});
  };

  // Frame dimension is set by the first structurally sound sequence.
  int frame_dim = 0;
  for (const RawSequence& seq : seqs) {
    if (seq.frames.size() >= 2 && !seq.frames[0].empty()) {
      frame_dim = int(seq.frames[0].size());
      break;
    }
  }
  if (frame_dim == 0) throw ConfigError("sequences_to_dataset: no usable sequence");
  if (pca_dim > frame_dim)
    throw ConfigError("sequences_to_dataset: pca_dim " + std::to_string(pca_dim) +
                      " exceeds frame dimension " + std::to_string(frame_dim));

  const auto structurally_ok = [&](std::size_t i) -> bool {
    const RawSequence& seq = seqs[i];
    if (seq.frames.size() < 2) {
      report(i, "fewer than 2 frames");
      return false;
    }
    for (const Vector& f : seq.frames)
      if (int(f.size()) != frame_dim) {
        report(i, "frame dimension " + std::to_string(f.size()) + ", expected " +
                      std::to_string(frame_dim));
        return false;
      }
    return true;
  };

  PcaModel pca;
  const bool use_pca = pca_dim > 0;
  if (use_pca) {
    std::vector<Vector> fit_frames;
    for (std::size_t idx : pca_fit_subset) {
      if (idx >= seqs.size())
        throw ConfigError("sequences_to_dataset: pca fit index " + std::to_string(idx) +
                          " out of range");
      for (const Vector& f : seqs[idx].frames)
        if (int(f.size()) == frame_dim) fit_frames.push_back(f);
    }
    pca = pca_fit(fit_frames, pca_dim);
  }

  SpdDataset ds;
  ds.dim = use_pca ? pca_dim : frame_dim;
  int max_label = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (!structurally_ok(i)) continue;
    const RawSequence& seq = seqs[i];
    if (seq.label < 0) {
      report(i, "negative label");
      continue;
    }
    const int n = int(seq.frames.size());
    Matrix x(ds.dim, n);
    for (int t = 0; t < n; ++t) {
      const Vector col = use_pca ? pca_project(pca, seq.frames[t]) : seq.frames[t];
      for (int j = 0; j < ds.dim; ++j) x(j, t) = col[j];
    }
    try {
      SpdSample sample;
      sample.matrix = covariance_descriptor(x, lambda);
      sample.label = seq.label;
      max_label = std::max(max_label, seq.label);
      ds.samples.push_back(std::move(sample));
    } catch (const NumericError& err) {
      report(i, err.what());
    }
  }
  if (ds.samples.empty()) throw ConfigError("sequences_to_dataset: every sequence failed");
  ds.class_count = max_label + 1;
  return ds;
}

SplitResult split_str(const SpdDataset& ds, std::uint64_t seed) {
  return split_impl(ds, seed, false, 0);
}

SplitResult split_fixed(const SpdDataset& ds, int n_train_per_class, std::uint64_t seed) {
  return split_impl(ds, seed, true, n_train_per_class);
}

// Window rows of the per-class loading are scaled by this factor, so a
// class's planted 2x2 block stands out against the shared background.
constexpr double kWindowAmplification = 5.0;

SyntheticTask gen_synthetic(const SyntheticSpec& spec) {
  const int d = spec.grid;
  if (spec.classes < 2) throw ConfigError("gen_synthetic: classes must be >= 2");
  if (spec.n_per_class < 1) throw ConfigError("gen_synthetic: n_per_class must be >= 1");
  if (d < 2) throw ConfigError("gen_synthetic: grid side must be >= 2");
  const int dim = d * d;
  const int r = spec.rank == 0 ? dim : spec.rank;
  if (r < 1 || r > dim)
    throw ConfigError("gen_synthetic: rank must be in [1, " + std::to_string(dim) + "]");
  if (spec.frames < dim + 1)
    throw ConfigError("gen_synthetic: need at least " + std::to_string(dim + 1) +
                      " frames for a well-conditioned covariance");
  if (spec.sigma < 0.0) throw ConfigError("gen_synthetic: sigma must be >= 0");

  // Class windows: 2x2 windows on the grid, disjoint (even-origin) windows
  // first in row-major order, then the remaining origins row-major; class c
  // takes entry c, so no two classes share a window.
  std::vector<WindowIndexSet> all_windows = window_index_sets(d, 2, 1);
  std::stable_sort(all_windows.begin(), all_windows.end(),
                   [](const WindowIndexSet& a, const WindowIndexSet& b) {
                     const int ka = (a.origin_row % 2 != 0 || a.origin_col % 2 != 0) ? 1 : 0;
                     const int kb = (b.origin_row % 2 != 0 || b.origin_col % 2 != 0) ? 1 : 0;
                     return ka < kb;
                   });
  if (std::size_t(spec.classes) > all_windows.size())
    throw ConfigError("gen_synthetic: grid side " + std::to_string(d) + " offers only " +
                      std::to_string(all_windows.size()) + " class windows");

  SyntheticTask task;
  task.data.dim = dim;
  task.data.class_count = spec.classes;
  for (int c = 0; c < spec.classes; ++c)
    task.planted_windows.push_back(all_windows[std::size_t(c)]);

  Rng rng(spec.seed);

  // All classes share one base loading; L_c amplifies the rows covering
  // class c's window. The population covariance L_c L_c^T + sigma^2 I then
  // differs across classes only in the window's principal block (and its
  // cross terms), keeping the discriminative signal local by construction.
  const double inv_sqrt_r = 1.0 / std::sqrt(double(r));
  Matrix base(dim, r);
  for (int i = 0; i < dim; ++i)
    for (int k = 0; k < r; ++k) base(i, k) = rng.normal() * inv_sqrt_r;

  std::vector<Matrix> loadings;
  loadings.reserve(std::size_t(spec.classes));
  for (int c = 0; c < spec.classes; ++c) {
    Matrix l = base;
    for (int i : task.planted_windows[std::size_t(c)].indices)
      for (int k = 0; k < r; ++k) l(i, k) *= kWindowAmplification;
    loadings.push_back(std::move(l));
  }

  Vector z = Vector(std::size_t(r));
  Vector noise = Vector(std::size_t(dim));
  for (int c = 0; c < spec.classes; ++c) {
    for (int sample = 0; sample < spec.n_per_class; ++sample) {
      Matrix x(dim, spec.frames);
      for (int t = 0; t < spec.frames; ++t) {
        for (int k = 0; k < r; ++k) z[std::size_t(k)] = rng.normal();
        for (int i = 0; i < dim; ++i) noise[std::size_t(i)] = rng.normal();
        const Vector lx = matvec(loadings[std::size_t(c)], z);
        for (int i = 0; i < dim; ++i)
          x(i, t) = lx[std::size_t(i)] + spec.sigma * noise[std::size_t(i)];
      }
      SpdSample sam;
      sam.matrix = covariance_descriptor(x, spec.lambda);
      sam.label = c;
      task.data.samples.push_back(std::move(sam));
    }
  }
  return task;
}

double planted_baseline_accuracy(const SyntheticTask& task, std::uint64_t split_seed) {
  const SplitResult split = split_str(task.data, split_seed);
  const int classes = task.data.class_count;

  const auto features = [&](const Matrix& s) -> Vector {
    std::vector<Matrix> logs;
    for (const Matrix& p : subsec_forward(s, task.planted_windows))
      logs.push_back(logeig_forward(p));
    return trilcan_forward(logs);
  };

  std::vector<Vector> means;
  std::vector<std::size_t> counts(classes, 0);
  for (const SpdSample& s : split.train.samples) {
    const Vector f = features(s.matrix);
    if (means.empty()) means.assign(classes, Vector(f.size(), 0.0));
    for (std::size_t i = 0; i < f.size(); ++i) means[s.label][i] += f[i];
    ++counts[s.label];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw ConfigError("planted_baseline_accuracy: class without train samples");
    for (double& v : means[c]) v /= double(counts[c]);
  }

  std::size_t correct = 0;
  for (const SpdSample& s : split.test.samples) {
    const Vector f = features(s.matrix);
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double diff = f[i] - means[c][i];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (best == s.label) ++correct;
  }
  if (split.test.samples.empty()) throw ConfigError("planted_baseline_accuracy: empty test split");
  return double(correct) / double(split.test.samples.size());
}

}  // namespace msnet
