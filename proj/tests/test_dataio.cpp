#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "msnet/dataio.hpp"
#include "msnet/errors.hpp"
#include "msnet/linalg.hpp"
#include "msnet/rng.hpp"

using namespace msnet;

namespace {

std::string temp_path(const std::string& stem) {
  return "msnet_test_" + stem + ".bin";
}

SpdDataset make_dataset(Rng& rng, int dim, int classes, int per_class) {
  SpdDataset ds;
  ds.dim = dim;
  ds.class_count = classes;
  for (int c = 0; c < classes; ++c)
    for (int s = 0; s < per_class; ++s) {
      Matrix x(dim, dim + 6);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim + 6; ++j) x(i, j) = rng.normal() + (i == 0 ? 0.3 * c : 0.0);
      ds.samples.push_back({covariance_descriptor(x, 1e-3), c});
    }
  return ds;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& stem) : path(temp_path(stem)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("dataset files round-trip bitwise") {
  Rng rng(401);
  const SpdDataset ds = make_dataset(rng, 5, 3, 4);
  TempFile f("roundtrip");
  save_dataset(ds, f.path);
  const SpdDataset back = load_dataset(f.path);
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.dim == ds.dim);
  CHECK(back.class_count == ds.class_count);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].label == ds.samples[i].label);
    CHECK(bit_equal(back.samples[i].matrix, ds.samples[i].matrix));
  }
}

TEST_CASE("dataset loader distinguishes corruption from truncation") {
  Rng rng(403);
  const SpdDataset ds = make_dataset(rng, 3, 2, 2);
  TempFile f("corrupt");
  save_dataset(ds, f.path);
  std::vector<char> bytes = slurp(f.path);

  // flip one payload byte
  std::vector<char> flipped = bytes;
  flipped[bytes.size() / 2] = char(flipped[bytes.size() / 2] ^ 0x40);
  spit(f.path, flipped);
  bool checksum_error = false;
  try {
    load_dataset(f.path);
  } catch (const IoError& e) {
    checksum_error = std::string(e.what()).find("checksum") != std::string::npos;
  }
  CHECK(checksum_error);

  // chop the tail
  std::vector<char> chopped(bytes.begin(), bytes.end() - 10);
  spit(f.path, chopped);
  bool truncation_error = false;
  try {
    load_dataset(f.path);
  } catch (const IoError& e) {
    truncation_error = std::string(e.what()).find("truncat") != std::string::npos;
  }
  CHECK(truncation_error);

  // wrong magic
  std::vector<char> wrong = bytes;
  wrong[0] = 'X';
  spit(f.path, wrong);
  CHECK_THROWS_AS(load_dataset(f.path), IoError);

  CHECK_THROWS_AS(load_dataset("definitely_missing_file.bin"), IoError);
}

TEST_CASE("sequence files round-trip") {
  Rng rng(405);
  std::vector<RawSequence> seqs;
  for (int s = 0; s < 3; ++s) {
    RawSequence seq;
    seq.label = s;
    for (int t = 0; t < 5 + s; ++t) {
      Vector frame(4);
      for (double& v : frame) v = rng.normal();
      seq.frames.push_back(frame);
    }
    seqs.push_back(seq);
  }
  TempFile f("seqs");
  save_sequences(seqs, f.path);
  const std::vector<RawSequence> back = load_sequences(f.path);
  REQUIRE(back.size() == seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CHECK(back[i].label == seqs[i].label);
    REQUIRE(back[i].frames.size() == seqs[i].frames.size());
    for (std::size_t t = 0; t < seqs[i].frames.size(); ++t)
      CHECK(back[i].frames[t] == seqs[i].frames[t]);
  }
}

TEST_CASE("sequence preprocessing without projection matches direct covariance") {
  Rng rng(407);
  std::vector<RawSequence> seqs;
  for (int s = 0; s < 4; ++s) {
    RawSequence seq;
    seq.label = s % 2;
    for (int t = 0; t < 12; ++t) {
      Vector frame(3);
      for (double& v : frame) v = rng.normal();
      seq.frames.push_back(frame);
    }
    seqs.push_back(seq);
  }
  const SpdDataset ds = sequences_to_dataset(seqs, 0, 1e-3, {});
  REQUIRE(ds.samples.size() == 4);
  CHECK(ds.dim == 3);
  CHECK(ds.class_count == 2);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Matrix x(3, 12);
    for (int t = 0; t < 12; ++t)
      for (int k = 0; k < 3; ++k) x(k, t) = seqs[i].frames[t][k];
    CHECK(bit_equal(ds.samples[i].matrix, covariance_descriptor(x, 1e-3)));
  }
}

TEST_CASE("sequence preprocessing with projection reduces dimension") {
  Rng rng(409);
  std::vector<RawSequence> seqs;
  std::vector<std::size_t> fit_subset;
  for (int s = 0; s < 6; ++s) {
    RawSequence seq;
    seq.label = s % 2;
    for (int t = 0; t < 20; ++t) {
      Vector frame(8);
      for (double& v : frame) v = rng.normal();
      seq.frames.push_back(frame);
    }
    seqs.push_back(seq);
    if (s < 3) fit_subset.push_back(std::size_t(s));
  }
  const SpdDataset ds = sequences_to_dataset(seqs, 5, 1e-3, fit_subset);
  CHECK(ds.dim == 5);
  REQUIRE(ds.samples.size() == 6);
  for (const SpdSample& s : ds.samples) CHECK(assert_spd(s.matrix, 1e-12).pass);

  CHECK_THROWS_AS(sequences_to_dataset(seqs, 9, 1e-3, fit_subset), ConfigError);
}

TEST_CASE("bad sequences are reported and skipped when asked") {
  Rng rng(411);
  std::vector<RawSequence> seqs;
  for (int s = 0; s < 3; ++s) {
    RawSequence seq;
    seq.label = 0;
    for (int t = 0; t < 10; ++t) {
      Vector frame(3);
      for (double& v : frame) v = (s == 1) ? 1.0 : rng.normal();  // seq 1 is constant
      seq.frames.push_back(frame);
    }
    seqs.push_back(seq);
  }
  std::vector<SequenceIssue> issues;
  const SpdDataset ds = sequences_to_dataset(seqs, 0, 1e-3, {}, &issues);
  CHECK(ds.samples.size() == 2);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].index == 1);

  // without the report channel the same input throws
  CHECK_THROWS_AS(sequences_to_dataset(seqs, 0, 1e-3, {}), NumericError);
}

TEST_CASE("seventy-thirty split is per class, disjoint and seeded") {
  Rng rng(413);
  const SpdDataset ds = make_dataset(rng, 3, 2, 10);
  const SplitResult sp = split_str(ds, 99);
  CHECK(sp.train.samples.size() == 14);  // 7 per class
  CHECK(sp.test.samples.size() == 6);
  for (int c = 0; c < 2; ++c) {
    int train_c = 0, test_c = 0;
    for (const SpdSample& s : sp.train.samples) train_c += s.label == c;
    for (const SpdSample& s : sp.test.samples) test_c += s.label == c;
    CHECK(train_c == 7);
    CHECK(test_c == 3);
  }

  // determinism
  const SplitResult again = split_str(ds, 99);
  REQUIRE(again.train.samples.size() == sp.train.samples.size());
  for (std::size_t i = 0; i < sp.train.samples.size(); ++i)
    CHECK(bit_equal(again.train.samples[i].matrix, sp.train.samples[i].matrix));

  // partition: every sample lands in exactly one side
  const auto key = [](const Matrix& m) { return m(0, 0); };
  std::multiset<double> all, got;
  for (const SpdSample& s : ds.samples) all.insert(key(s.matrix));
  for (const SpdSample& s : sp.train.samples) got.insert(key(s.matrix));
  for (const SpdSample& s : sp.test.samples) got.insert(key(s.matrix));
  CHECK(all == got);

  // a different seed gives a different shuffle
  const SplitResult other = split_str(ds, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < sp.train.samples.size(); ++i)
    any_diff = any_diff || !bit_equal(other.train.samples[i].matrix, sp.train.samples[i].matrix);
  CHECK(any_diff);
}

TEST_CASE("fixed-count split takes the requested number per class") {
  Rng rng(415);
  const SpdDataset ds = make_dataset(rng, 3, 3, 8);
  const SplitResult sp = split_fixed(ds, 2, 7);
  CHECK(sp.train.samples.size() == 6);
  CHECK(sp.test.samples.size() == 18);
  CHECK_THROWS_AS(split_fixed(ds, 0, 7), ConfigError);
  CHECK_THROWS_AS(split_fixed(ds, 8, 7), ConfigError);  // would leave no test data
}

TEST_CASE("synthetic task generation is deterministic and well formed") {
  SyntheticSpec spec;
  spec.seed = 21;
  spec.classes = 2;
  spec.n_per_class = 10;
  spec.grid = 4;
  spec.frames = 40;
  const SyntheticTask a = gen_synthetic(spec);
  const SyntheticTask b = gen_synthetic(spec);
  REQUIRE(a.data.samples.size() == 20);
  CHECK(a.data.dim == 16);
  REQUIRE(a.planted_windows.size() == 2);
  for (std::size_t i = 0; i < a.data.samples.size(); ++i) {
    CHECK(bit_equal(a.data.samples[i].matrix, b.data.samples[i].matrix));
    CHECK(assert_spd(a.data.samples[i].matrix, 1e-12).pass);
  }
  // class windows are distinct
  CHECK(a.planted_windows[0].indices != a.planted_windows[1].indices);
}

TEST_CASE("synthetic generation rejects bad parameters") {
  SyntheticSpec spec;
  spec.n_per_class = 2;
  spec.frames = 17;
  CHECK_NOTHROW(gen_synthetic(spec));
  SyntheticSpec one_class = spec;
  one_class.classes = 1;
  CHECK_THROWS_AS(gen_synthetic(one_class), ConfigError);
  SyntheticSpec fat_rank = spec;
  fat_rank.rank = 17;
  CHECK_THROWS_AS(gen_synthetic(fat_rank), ConfigError);
  SyntheticSpec short_clip = spec;
  short_clip.frames = 16;  // sample covariance of 16x16 frames needs >= 17
  CHECK_THROWS_AS(gen_synthetic(short_clip), ConfigError);
  SyntheticSpec crowded = spec;
  crowded.classes = 10;  // only 9 stride-1 2x2 windows on a 4x4 grid
  CHECK_THROWS_AS(gen_synthetic(crowded), ConfigError);
}

TEST_CASE("planted structure is learnable by a trivial baseline") {
  // frozen before any network ran: nearest-class-mean on the planted-window
  // log-tril features must already separate a low-noise instance
  SyntheticSpec spec;
  spec.classes = 2;
  spec.n_per_class = 100;
  spec.grid = 4;
  spec.frames = 64;
  spec.sigma = 0.1;
  const SyntheticTask task = gen_synthetic(spec);
  CHECK(planted_baseline_accuracy(task, 5) >= 0.9);
}

TEST_CASE("dataset validation catches structural problems") {
  SpdDataset ds;
  ds.dim = 2;
  ds.class_count = 2;
  Matrix ok(2, 2);
  ok(0, 0) = ok(1, 1) = 1.0;
  ds.samples.push_back({ok, 0});
  CHECK_NOTHROW(validate_dataset(ds));

  SpdDataset bad_label = ds;
  bad_label.samples[0].label = 2;
  CHECK_THROWS_AS(validate_dataset(bad_label), ConfigError);

  SpdDataset bad_dim = ds;
  bad_dim.samples[0].matrix = Matrix(3, 3);
  CHECK_THROWS_AS(validate_dataset(bad_dim), ConfigError);

  SpdDataset asym = ds;
  asym.samples[0].matrix(0, 1) = 0.5;
  CHECK_THROWS_AS(validate_dataset(asym), NumericError);
}
