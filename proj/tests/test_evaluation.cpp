#include "sbthermo/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "test_util.hpp"

namespace sbthermo::eval {
namespace {

namespace fs = std::filesystem;
using physics::kPi;

// Looks inputs up in a table of known answers, optionally distorting them.
class TableEstimator final : public Estimator {
 public:
  using Distort = std::function<double(double nbar, std::size_t key)>;

  explicit TableEstimator(int q, Distort distort = {}) : q_(q), distort_(std::move(distort)) {}

  void add(std::span<const double> row, double nbar, double omega_t) {
    table_[std::vector<double>(row.begin(), row.end())] = {nbar, omega_t, table_.size()};
  }
  void add(const dataset::Dataset& d) {
    for (std::size_t i = 0; i < d.size(); ++i) add(d[i].input, d[i].nbar, d[i].omega_t);
  }

  int sideband_count() const override { return q_; }
  std::string identity() const override { return "table"; }
  std::vector<nn::Estimate> estimate_batch(const nn::Matrix& x) const override {
    std::vector<nn::Estimate> out;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto it = table_.find(std::vector<double>(x.row(i).data(), x.row(i).data() + x.cols()));
      if (it == table_.end()) throw std::runtime_error("unknown row");
      const auto& e = it->second;
      out.push_back({distort_ ? distort_(e.nbar, e.key) : e.nbar, e.omega_t, false});
    }
    return out;
  }

 private:
  struct Entry {
    double nbar;
    double omega_t;
    std::size_t key;
  };
  int q_;
  Distort distort_;
  std::map<std::vector<double>, Entry> table_;
};

// nbar grows linearly with the mean population.
class LinearEstimator final : public Estimator {
 public:
  explicit LinearEstimator(int q) : q_(q) {}
  int sideband_count() const override { return q_; }
  std::string identity() const override { return "linear"; }
  std::vector<nn::Estimate> estimate_batch(const nn::Matrix& x) const override {
    std::vector<nn::Estimate> out;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out.push_back({100.0 + 1000.0 * x.row(i).tail(q_).mean(), kPi, false});
    return out;
  }

 private:
  int q_;
};

const dataset::Dataset& small_test_set() {
  static const dataset::Dataset d = [] {
    dataset::GenerateOptions o;
    o.box.sideband_count = 5;
    o.count = 1000;
    o.seed = 99;
    o.mode = dataset::Mode::kTest;
    o.tail_epsilon = 1e-3;
    return dataset::generate_dataset(o);
  }();
  return d;
}

TEST(Evaluate, TruthStubGivesZeroErrors) {
  const auto& test = small_test_set();
  TableEstimator stub(5);
  stub.add(test);
  const auto r = evaluate_model(stub, test);
  EXPECT_EQ(r.count, test.size());
  EXPECT_EQ(r.mean_rel_error, 0.0);
  EXPECT_EQ(r.mean_abs_omega_t_error, 0.0);
  EXPECT_EQ(r.window_mean_rel_error, 0.0);
  EXPECT_EQ(r.low_large_error_fraction, 0.0);
  ASSERT_EQ(r.bins.size(), 24u);
  for (const auto& b : r.bins) EXPECT_EQ(b.mean_rel_error, 0.0);
  EXPECT_EQ(r.model_identity, "table");
  EXPECT_EQ(r.header, test.header());
}

TEST(Evaluate, ReportConservation) {
  const auto& test = small_test_set();
  TableEstimator stub(5, [](double n, std::size_t k) { return n * (1.0 + 0.3 * std::sin(k)); });
  stub.add(test);
  const auto r = evaluate_model(stub, test);
  std::size_t total = 0;
  double weighted = 0.0;
  for (const auto& b : r.bins) {
    total += b.count;
    weighted += static_cast<double>(b.count) * b.mean_rel_error;
    EXPECT_GE(b.mean_rel_error, 0.0);
  }
  EXPECT_EQ(total, test.size());
  EXPECT_NEAR(weighted / static_cast<double>(total), r.mean_rel_error, 1e-12);
  EXPECT_GT(r.mean_rel_error, 0.1);
  EXPECT_GT(r.rel_error_sem, 0.0);
  EXPECT_DOUBLE_EQ(r.bins.front().nbar_lo, 1.0);
  EXPECT_NEAR(r.bins.back().nbar_hi, 1500.0, 1e-9);
}

TEST(Evaluate, StrataAndWindow) {
  const auto& test = small_test_set();
  TableEstimator stub(5, [](double n, std::size_t) { return n < 8 ? 1.2 * n : n; });
  stub.add(test);
  const auto r = evaluate_model(stub, test);
  std::size_t low = 0, window = 0;
  for (double n : test.nbar()) {
    low += n < 8;
    window += n >= 100 && n <= 1400;
  }
  EXPECT_EQ(r.low_count, low);
  EXPECT_EQ(r.window_count, window);
  EXPECT_EQ(r.window_mean_rel_error, 0.0);
  EXPECT_EQ(r.low_large_error_fraction, 1.0);
  EXPECT_NEAR(r.low_mean_rel_error, 0.2, 1e-12);
}

TEST(Evaluate, WorkerCountDoesNotChangeReport) {
  const auto model = nn::init_model(5, 16, 3);
  MlpEstimator est(model);
  EvalOptions one, many;
  many.workers = 4;
  const auto a = evaluate_model(est, small_test_set(), one);
  const auto b = evaluate_model(est, small_test_set(), many);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Evaluate, SidebandMismatch) {
  const auto model = nn::init_model(8, 16, 3);
  EXPECT_ERROR_CODE(evaluate_model(MlpEstimator(model), small_test_set()), ErrorCode::kQMismatch);
}

TEST(NoiseSweep, CleanPointMatchesEvaluate) {
  const auto model = nn::init_model(5, 16, 3);
  MlpEstimator est(model);
  const auto sweep = noise_sweep(est, small_test_set(), {100, 400}, 5);
  ASSERT_EQ(sweep.size(), 3u);
  EXPECT_EQ(sweep[0].trials, 0u);
  EXPECT_EQ(to_json(sweep[0].report).dump(), to_json(evaluate_model(est, small_test_set())).dump());
  EXPECT_EQ(sweep[1].trials, 100u);
  EXPECT_TRUE(sweep[1].report.header.noisy);
  EXPECT_EQ(to_json(sweep).dump(), to_json(noise_sweep(est, small_test_set(), {100, 400}, 5)).dump());
}

TEST(NoiseSweep, CoarserReadoutMovesEstimatesFurther) {
  const auto& test = small_test_set();
  LinearEstimator lin(5);
  const auto sweep = noise_sweep(lin, test, {10, 10000}, 1);
  EXPECT_GT(std::abs(sweep[1].report.mean_rel_error - sweep[0].report.mean_rel_error),
            std::abs(sweep[2].report.mean_rel_error - sweep[0].report.mean_rel_error));
}

TEST(NoiseSweep, RejectsBadTrials) {
  LinearEstimator lin(5);
  EXPECT_ERROR_CODE(noise_sweep(lin, small_test_set(), {}, 1), ErrorCode::kInvalidInput);
  EXPECT_ERROR_CODE(noise_sweep(lin, small_test_set(), {100, 0}, 1), ErrorCode::kInvalidInput);
}

TEST(MonteCarlo, ZeroSigmasCollapse) {
  const auto model = nn::init_model(5, 16, 3);
  MlpEstimator est(model);
  const std::vector<double> pops{0.2, 0.4, 0.5, 0.6, 0.3};
  const auto r = monte_carlo_errorbar(est, 0.1, pops, std::vector<double>(5, 0.0), 50, 1);
  EXPECT_EQ(r.nbar_std, 0.0);
  EXPECT_EQ(r.omega_t_std, 0.0);
  EXPECT_EQ(r.input_clamp_fraction, 0.0);
  const auto single = nn::predict(model, 0.1, pops);
  EXPECT_NEAR(r.nbar_mean, single.nbar, 1e-12 * single.nbar);
}

TEST(MonteCarlo, DeterministicAndPositiveSpread) {
  LinearEstimator lin(3);
  const std::vector<double> pops{0.3, 0.5, 0.7}, sig{0.02, 0.02, 0.02};
  const auto a = monte_carlo_errorbar(lin, 0.1, pops, sig, 1000, 9);
  const auto b = monte_carlo_errorbar(lin, 0.1, pops, sig, 1000, 9, 4);
  EXPECT_EQ(a.nbar_mean, b.nbar_mean);
  EXPECT_EQ(a.nbar_std, b.nbar_std);
  EXPECT_GT(a.nbar_std, 0.0);
  // std of 1000 * mean of three N(., 0.02) draws is 1000 * 0.02 / sqrt(3).
  EXPECT_NEAR(a.nbar_std, 1000 * 0.02 / std::sqrt(3.0), 1.0);
}

TEST(MonteCarlo, DoublingSigmasNeverShrinksSpread) {
  LinearEstimator lin(3);
  const std::vector<double> pops{0.3, 0.5, 0.7};
  for (double s : {0.001, 0.01, 0.05}) {
    const auto a = monte_carlo_errorbar(lin, 0.1, pops, {s, s, s}, 10000, 17);
    const auto b = monte_carlo_errorbar(lin, 0.1, pops, {2 * s, 2 * s, 2 * s}, 10000, 18);
    const double slack = 3.0 * a.nbar_std / std::sqrt(2.0 * 10000);
    EXPECT_GE(b.nbar_std, a.nbar_std - slack) << "sigma " << s;
  }
}

TEST(MonteCarlo, ClampingIsReported) {
  LinearEstimator lin(2);
  const auto r = monte_carlo_errorbar(lin, 0.1, {0.0, 1.0}, {0.1, 0.1}, 2000, 3);
  EXPECT_NEAR(r.input_clamp_fraction, 0.5, 0.05);
}

TEST(MonteCarlo, Preconditions) {
  LinearEstimator lin(2);
  EXPECT_ERROR_CODE(monte_carlo_errorbar(lin, 0.1, {0.1, 0.2}, {0, 0}, 1, 0),
                    ErrorCode::kInvalidInput);
  EXPECT_ERROR_CODE(monte_carlo_errorbar(lin, 0.1, {0.1, 0.2}, {0, -1}, 5, 0),
                    ErrorCode::kInvalidInput);
  EXPECT_ERROR_CODE(monte_carlo_errorbar(lin, 0.1, {0.1, 0.2, 0.3}, {0, 0, 0}, 5, 0),
                    ErrorCode::kQMismatch);
}

ScanTrace gaussian_trace(double a, double f0, double sigma, double b, double noise_sd,
                         std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, noise_sd);
  ScanTrace t;
  for (int i = 0; i < 41; ++i) {
    const double f = -20e3 + 1e3 * i;
    double p = a * std::exp(-(f - f0) * (f - f0) / (2 * sigma * sigma)) + b;
    if (noise_sd > 0) p = std::clamp(p + noise(gen), 0.0, 1.0);
    t.points.push_back({f, p, 100});
  }
  return t;
}

TEST(PeakFit, NoiselessRecovery) {
  const auto fit = gaussian_peak_fit(gaussian_trace(0.8, 0.0, 5e3, 0.05, 0.0, 0));
  EXPECT_NEAR(fit.amplitude, 0.8, 1e-6);
  EXPECT_NEAR(fit.center_hz, 0.0, 1e-6);
  EXPECT_NEAR(fit.width_hz, 5e3, 1e-6);
  EXPECT_NEAR(fit.baseline, 0.05, 1e-6);
  EXPECT_NEAR(fit.population(), 0.85, 1e-6);
  EXPECT_LT(fit.amplitude_se, 1e-6);
}

TEST(PeakFit, OffCenterNoiselessRecovery) {
  const auto fit = gaussian_peak_fit(gaussian_trace(0.4, 3.2e3, 2.5e3, 0.1, 0.0, 0));
  EXPECT_NEAR(fit.amplitude, 0.4, 1e-6);
  EXPECT_NEAR(fit.center_hz, 3.2e3, 1e-6);
  EXPECT_NEAR(fit.width_hz, 2.5e3, 1e-6);
  EXPECT_NEAR(fit.baseline, 0.1, 1e-6);
}

TEST(PeakFit, NoisyRecoveryRate) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    try {
      const auto fit = gaussian_peak_fit(gaussian_trace(0.8, 0.0, 5e3, 0.05, 0.02, seed));
      ok += std::abs(fit.center_hz) < 500.0 && std::abs(fit.amplitude - 0.8) < 0.03;
    } catch (const Error&) {
    }
  }
  EXPECT_GE(ok, 95);
}

TEST(PeakFit, FlatTraceIsNeverAConfidentPeak) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto trace = gaussian_trace(0.0, 0.0, 5e3, 0.2, 0.01, seed);
    try {
      const auto fit = gaussian_peak_fit(trace);
      EXPECT_FALSE(fit.amplitude > 0.05 && fit.amplitude > 3.0 * fit.amplitude_se)
          << "seed " << seed << " amplitude " << fit.amplitude << " se " << fit.amplitude_se;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFitFailure);
    }
  }
}

TEST(PeakFit, IterationCapRaisesFitFailure) {
  PeakFitOptions o;
  o.max_iterations = 1;
  try {
    gaussian_peak_fit(gaussian_trace(0.8, 4e3, 5e3, 0.05, 0.0, 0), o);
    FAIL() << "expected a fit failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFitFailure);
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
}

TEST(ScanTrace, Validation) {
  auto t = gaussian_trace(0.8, 0.0, 5e3, 0.05, 0.0, 0);
  auto short_trace = t;
  short_trace.points.resize(4);
  EXPECT_ERROR_CODE(short_trace.validate(), ErrorCode::kInvalidInput);
  auto unordered = t;
  unordered.points[3].frequency_hz = unordered.points[2].frequency_hz;
  EXPECT_ERROR_CODE(unordered.validate(), ErrorCode::kInvalidInput);
  auto bad_p = t;
  bad_p.points[0].population = 1.2;
  EXPECT_ERROR_CODE(gaussian_peak_fit(bad_p), ErrorCode::kInvalidInput);
}

TEST(ScanTrace, CsvRoundTrip) {
  const auto path = fs::temp_directory_path() / "sbthermo_scan.csv";
  {
    std::ofstream out(path);
    out << "frequency_hz,population,n_measurements\n";
    for (int i = 0; i < 6; ++i) out << -5e3 + 2e3 * i << "," << 0.1 * i << ",100\n";
  }
  const auto t = read_scan_trace(path);
  ASSERT_EQ(t.points.size(), 6u);
  EXPECT_EQ(t.points[5].population, 0.5);
  EXPECT_EQ(t.points[0].measurements, 100u);
  {
    std::ofstream out(path);
    out << "freq,population,n_measurements\n1,0.1,100\n";
  }
  EXPECT_ERROR_CODE(read_scan_trace(path), ErrorCode::kFormat);
  {
    std::ofstream out(path);
    out << "frequency_hz,population,n_measurements\n1,abc,100\n";
  }
  EXPECT_ERROR_CODE(read_scan_trace(path), ErrorCode::kFormat);
  fs::remove(path);
}

TEST(HeatingFit, ExactLine) {
  std::vector<HeatingPoint> pts;
  for (double t : {0.0, 0.5, 1.0, 2.0, 4.0}) pts.push_back({t, 10.0 + 182.0 * t});
  const auto line = fit_heating_rate(pts);
  EXPECT_EQ(line.rate, 182.0);
  EXPECT_EQ(line.intercept, 10.0);
  EXPECT_EQ(line.rate_se, 0.0);
  EXPECT_EQ(line.intercept_se, 0.0);
}

TEST(HeatingFit, TwoPointsInterpolate) {
  const auto line = fit_heating_rate({{1.5, 40.0}, {3.5, 20.0}});
  EXPECT_DOUBLE_EQ(line.rate, -10.0);
  EXPECT_DOUBLE_EQ(line.intercept, 55.0);
  EXPECT_EQ(line.rate_se, 0.0);
}

TEST(HeatingFit, NeedsTwoDistinctDurations) {
  EXPECT_ERROR_CODE(fit_heating_rate({}), ErrorCode::kInvalidInput);
  EXPECT_ERROR_CODE(fit_heating_rate({{1.0, 5.0}, {1.0, 6.0}, {1.0, 7.0}}),
                    ErrorCode::kInvalidInput);
}

TEST(HeatingFit, NoisyRecoveryWithinThreeStandardErrors) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 20.0);
    std::vector<HeatingPoint> pts;
    for (int i = 0; i <= 10; ++i) {
      const double t = 0.2 * i;
      pts.push_back({t, 10.0 + 182.0 * t + noise(gen)});
    }
    const auto line = fit_heating_rate(pts);
    ok += std::abs(line.rate - 182.0) <= 3.0 * line.rate_se;
  }
  EXPECT_GE(ok, 95);
}

TEST(HeatingFit, CsvReader) {
  const auto path = fs::temp_directory_path() / "sbthermo_heat.csv";
  std::ofstream(path) << "duration_ms,nbar\n0,10\n1,192\n\n2,374\n";
  const auto pts = read_heating_points(path);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(fit_heating_rate(pts).rate, 182.0);
  fs::remove(path);
}

TEST(LineCheck, OracleStubHasZeroDeviation) {
  const HeatingLine line{182.0, 10.0, 0.0, 0.0};
  const std::vector<double> durations{0.0, 1.0, 2.5, 5.0, 7.5};
  LineCheckOptions o;
  o.tail_epsilon = 1e-3;
  TableEstimator stub(5);
  for (double t : durations) {
    const auto s = physics::spectrum(line.at(t), o.eta, o.omega_t, 5, o.tail_epsilon);
    std::vector<double> row{o.eta};
    row.insert(row.end(), s.populations.begin(), s.populations.end());
    stub.add(row, line.at(t), o.omega_t);
  }
  const auto rows = verify_against_heating_line(stub, line, durations, o);
  ASSERT_EQ(rows.size(), durations.size());
  for (const auto& r : rows) {
    EXPECT_EQ(r.rel_deviation, 0.0);
    EXPECT_EQ(r.nbar_line, 10.0 + 182.0 * r.duration_ms);
  }
}

TEST(LineCheck, RejectsLinesLeavingTheModelRange) {
  LinearEstimator lin(5);
  EXPECT_ERROR_CODE(verify_against_heating_line(lin, {182.0, 10.0, 0, 0}, {20.0}),
                    ErrorCode::kInvalidInput);
  EXPECT_ERROR_CODE(verify_against_heating_line(lin, {-5.0, 10.0, 0, 0}, {3.0}),
                    ErrorCode::kInvalidInput);
}

}  // namespace
}  // namespace sbthermo::eval
