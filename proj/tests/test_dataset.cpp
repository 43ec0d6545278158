#include "sbthermo/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sbthermo/detail/binary_io.hpp"
#include "test_util.hpp"

namespace sbthermo::dataset {
namespace {

namespace fs = std::filesystem;
using physics::kPi;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("sbthermo_test_" + name);
}

ParamBox box_q(int q) {
  ParamBox b;
  b.sideband_count = q;
  return b;
}

GenerateOptions small_options(std::uint64_t count, std::uint64_t seed, Mode mode = Mode::kTrain) {
  GenerateOptions o;
  o.box = box_q(5);
  o.count = count;
  o.seed = seed;
  o.mode = mode;
  o.tail_epsilon = 1e-2;
  return o;
}

TEST(SampleParams, DeterministicPerSeedAndIndex) {
  const ParamBox box;
  for (std::uint64_t i : {0ull, 1ull, 999999ull}) {
    EXPECT_EQ(sample_params(box, 7, i), sample_params(box, 7, i));
    EXPECT_EQ(sample_params(box, 7, i, Mode::kTest), sample_params(box, 7, i, Mode::kTest));
  }
  EXPECT_FALSE(sample_params(box, 7, 3) == sample_params(box, 8, 3));
}

TEST(SampleParams, StaysInsideBox) {
  const ParamBox box;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const auto p = sample_params(box, 11, i, i % 2 ? Mode::kTest : Mode::kTrain);
    ASSERT_GE(p.nbar, 1.0);
    ASSERT_LE(p.nbar, 1500.0);
    ASSERT_GE(p.eta, box.eta_min);
    ASSERT_LT(p.eta, box.eta_max);
    ASSERT_GE(p.omega_t, box.omega_t_min);
    ASSERT_LT(p.omega_t, box.omega_t_max);
  }
}

TEST(SampleParams, TrainingNbarIsUniformOverIntegers) {
  // Chi-square over 15 equal-width bins of [1, 1500] (100 integers each).
  const ParamBox box;
  constexpr int kDraws = 100000, kBins = 15;
  std::vector<int> hist(kBins, 0);
  for (int i = 0; i < kDraws; ++i) {
    const double n = sample_params(box, 2024, i).nbar;
    ASSERT_EQ(n, std::floor(n));
    ++hist[static_cast<int>((n - 1.0) / 100.0)];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // 0.999 quantile of chi-square with 14 degrees of freedom.
  EXPECT_LT(chi2, 36.123);
}

TEST(SampleParams, TestModeDrawsRealNbar) {
  const ParamBox box;
  int integers = 0;
  for (int i = 0; i < 10000; ++i) {
    const double n = sample_params(box, 5, i, Mode::kTest).nbar;
    if (n == std::floor(n)) ++integers;
  }
  EXPECT_EQ(integers, 0);
}

TEST(SampleParams, TrainAndTestStreamsAreIndependent) {
  const ParamBox box;
  int same_eta = 0;
  for (std::uint64_t i = 0; i < 100; ++i)
    same_eta += sample_params(box, 3, i, Mode::kTrain).eta == sample_params(box, 3, i, Mode::kTest).eta;
  EXPECT_EQ(same_eta, 0);
}

TEST(ScaleTargets, EdgeValues) {
  EXPECT_EQ(scale_targets(750.0, kPi).y1, 0.0);
  EXPECT_EQ(scale_targets(1500.0, kPi).y1, 10.0);
  EXPECT_DOUBLE_EQ(scale_targets(1.0, 0.5 * kPi).y2, -10.0);
  EXPECT_DOUBLE_EQ(scale_targets(1.0, 2.0 * kPi).y2, 1.25);
}

TEST(ScaleTargets, InverseEdgeValues) {
  const auto a = unscale_targets(0.0, -10.0);
  EXPECT_DOUBLE_EQ(a.nbar, 750.0);
  EXPECT_DOUBLE_EQ(a.omega_t, 0.5 * kPi);
  const auto b = unscale_targets(10.0, 1.25);
  EXPECT_DOUBLE_EQ(b.nbar, 1500.0);
  EXPECT_DOUBLE_EQ(b.omega_t, 2.0 * kPi);
}

TEST(ScaleTargets, RoundTripOverBox) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> nbar(1.0, 1500.0), w(0.5 * kPi, 2.0 * kPi);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double n = nbar(gen), o = w(gen);
    const auto y = scale_targets(n, o);
    const auto back = unscale_targets(y.y1, y.y2);
    worst = std::max({worst, std::abs(back.nbar - n), std::abs(back.omega_t - o)});
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Generate, EmptyDatasetKeepsHeader) {
  const auto d = generate_dataset(small_options(0, 7));
  EXPECT_TRUE(d.empty());
  EXPECT_EQ(d.header().count, 0u);
  EXPECT_EQ(d.header().sideband_count, 5);
  EXPECT_EQ(d.header().seed, 7u);
  const auto path = temp_path("empty.pnds");
  write_binary(d, path);
  EXPECT_EQ(read_binary(path), d);
  fs::remove(path);
}

TEST(Generate, RecordsFollowSampleParamsAndPhysics) {
  const auto opts = small_options(20, 99, Mode::kTest);
  const auto d = generate_dataset(opts);
  ASSERT_EQ(d.size(), 20u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = sample_params(opts.box, 99, i, Mode::kTest);
    const auto s = d[i];
    EXPECT_EQ(s.nbar, p.nbar);
    EXPECT_EQ(s.omega_t, p.omega_t);
    EXPECT_EQ(s.eta(), p.eta);
    const auto ref = physics::spectrum(p.nbar, p.eta, p.omega_t, 5, opts.tail_epsilon);
    for (int q = 0; q < 5; ++q) EXPECT_EQ(s.populations()[q], ref.populations[q]);
    for (double v : s.input) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Generate, ByteIdenticalAcrossWorkerCounts) {
  auto opts = small_options(1000, 7);
  opts.workers = 1;
  const auto a = generate_dataset(opts);
  opts.workers = 8;
  const auto b = generate_dataset(opts);
  const auto pa = temp_path("w1.pnds"), pb = temp_path("w8.pnds");
  write_binary(a, pa);
  write_binary(b, pb);
  EXPECT_EQ(detail::read_file(pa), detail::read_file(pb));
  fs::remove(pa);
  fs::remove(pb);
}

TEST(Generate, PhysicsLimitReportsRecordIndex) {
  GenerateOptions o = small_options(3, 1);
  o.box.nbar_min = 1990.0;
  o.box.nbar_max = 2000.0;
  o.tail_epsilon = 1e-12;  // pushes n_max past the Fock cap
  try {
    generate_dataset(o);
    FAIL() << "expected a resource-limit error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kResourceLimit);
    EXPECT_NE(std::string(e.what()).find("record 0"), std::string::npos) << e.what();
  }
}

TEST(Generate, TruncatedSidebandsArePrefix) {
  GenerateOptions o = small_options(10, 4);
  o.box = box_q(8);
  const auto full = generate_dataset(o);
  o.box = box_q(3);
  const auto direct = generate_dataset(o);
  const auto cut = full.truncated(3);
  EXPECT_EQ(cut.inputs().size(), direct.inputs().size());
  for (std::size_t i = 0; i < cut.inputs().size(); ++i)
    EXPECT_EQ(cut.inputs()[i], direct.inputs()[i]);
}

TEST(ProjectionNoise, DegenerateProbabilities) {
  std::vector<double> p{0.0, 1.0, 0.0, 1.0};
  for (std::uint32_t n : {1u, 7u, 100000u}) {
    auto copy = p;
    apply_projection_noise(copy, n, 17, 0);
    EXPECT_EQ(copy, p);
  }
}

TEST(ProjectionNoise, ZeroTrialsRejected) {
  std::vector<double> p{0.5};
  EXPECT_ERROR_CODE(apply_projection_noise(p, 0, 1, 0), ErrorCode::kInvalidInput);
  const auto d = generate_dataset(small_options(2, 1));
  EXPECT_ERROR_CODE(apply_projection_noise(d, 0, 1), ErrorCode::kInvalidInput);
}

TEST(ProjectionNoise, ValuesAreCountFractions) {
  std::vector<double> p{0.3, 0.77, 0.01};
  apply_projection_noise(p, 40, 5, 2);
  for (double v : p) EXPECT_DOUBLE_EQ(v * 40, std::round(v * 40));
}

TEST(ProjectionNoise, MeanMatchesBinomialMoment) {
  // 1e4 independent readouts of P = 0.5 with N = 1e4 trials each.
  constexpr std::uint32_t kTrials = 10000;
  double sum = 0.0;
  for (std::uint64_t r = 0; r < 10000; ++r) {
    std::vector<double> p{0.5};
    apply_projection_noise(p, kTrials, 123, r);
    sum += p[0];
  }
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.015);
}

TEST(ProjectionNoise, UnbiasedAcrossPopulations) {
  // N * draws = 1e6 per probability; 3 sigma binomial bound on the mean.
  constexpr std::uint32_t kTrials = 100;
  constexpr int kDraws = 10000;
  for (double p0 : {0.02, 0.31, 0.5, 0.93}) {
    double sum = 0.0;
    for (int r = 0; r < kDraws; ++r) {
      std::vector<double> p{p0};
      apply_projection_noise(p, kTrials, 77, r);
      sum += p[0];
    }
    const double sigma = std::sqrt(p0 * (1 - p0) / (kTrials * double(kDraws)));
    EXPECT_NEAR(sum / kDraws, p0, 3 * sigma) << p0;
  }
}

TEST(ProjectionNoise, DatasetNoiseIsDeterministicAndLeavesEta) {
  const auto clean = generate_dataset(small_options(50, 3));
  const auto a = apply_projection_noise(clean, 100, 9, 1);
  const auto b = apply_projection_noise(clean, 100, 9, 4);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.header().noisy);
  EXPECT_EQ(a.header().noise_trials, 100u);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EXPECT_EQ(a[i].eta(), clean[i].eta());
    EXPECT_EQ(a[i].nbar, clean[i].nbar);
  }
  const auto c = apply_projection_noise(clean, 100, 10, 1);
  EXPECT_FALSE(a == c);
}

TEST(BinaryFormat, RoundTripAndLayout) {
  auto d = generate_dataset(small_options(12, 21, Mode::kTest));
  d = apply_projection_noise(d, 250, 4);
  const auto path = temp_path("rt.pnds");
  write_binary(d, path);
  const auto raw = detail::read_file(path);
  // 80-byte header + 12 records of (1 + 5 + 2) doubles.
  EXPECT_EQ(raw.size(), 80u + 12u * 8u * 8u);
  EXPECT_EQ(raw.substr(0, 4), "PNDS");
  EXPECT_EQ(static_cast<unsigned char>(raw[10]), 1);  // mode flag: test
  EXPECT_EQ(static_cast<unsigned char>(raw[11]), 1);  // noise flag
  const auto back = read_binary(path);
  EXPECT_EQ(back, d);
  EXPECT_EQ(read_header(path), d.header());
  fs::remove(path);
}

TEST(BinaryFormat, RejectsCorruption) {
  const auto d = generate_dataset(small_options(4, 2));
  const auto path = temp_path("bad.pnds");
  write_binary(d, path);
  const auto raw = detail::read_file(path);

  auto write_raw = [&](const std::string& bytes) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  };
  write_raw(raw.substr(0, raw.size() - 3));
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kFormat);
  write_raw(raw.substr(0, 30));
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kFormat);
  write_raw("XXXX" + raw.substr(4));
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kFormat);
  auto bad_version = raw;
  bad_version[4] = 9;
  write_raw(bad_version);
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kFormat);
  write_raw(raw + "z");
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kFormat);
  fs::remove(path);
  EXPECT_ERROR_CODE(read_binary(path), ErrorCode::kIo);
}

TEST(CsvExport, HeaderAndRowCount) {
  const auto d = generate_dataset(small_options(3, 2));
  const auto path = temp_path("d.csv");
  write_csv(d, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "eta,p1,p2,p3,p4,p5,nbar,omega_t");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  fs::remove(path);
}

TEST(ParamBox, Validation) {
  ParamBox b;
  b.nbar_max = 3000;
  EXPECT_ERROR_CODE(b.validate(), ErrorCode::kInvalidInput);
  b = ParamBox{};
  b.sideband_count = 0;
  EXPECT_ERROR_CODE(b.validate(), ErrorCode::kInvalidInput);
  b = ParamBox{};
  b.eta_min = 0.3;
  b.eta_max = 0.2;
  EXPECT_ERROR_CODE(b.validate(), ErrorCode::kInvalidInput);
}

}  // namespace
}  // namespace sbthermo::dataset
