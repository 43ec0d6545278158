#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbthermo/dataset.hpp"
#include "sbthermo/mlp.hpp"

namespace sbthermo::eval {

// Anything that maps input rows (eta, P_up(1..Q)) to estimates.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual int sideband_count() const = 0;
  virtual std::vector<nn::Estimate> estimate_batch(const nn::Matrix& inputs) const = 0;
  virtual std::string identity() const = 0;
};

class MlpEstimator final : public Estimator {
 public:
  explicit MlpEstimator(const nn::MlpModel& model, std::string identity = "mlp");

  int sideband_count() const override { return model_->sideband_count(); }
  std::vector<nn::Estimate> estimate_batch(const nn::Matrix& inputs) const override;
  std::string identity() const override { return identity_; }

 private:
  const nn::MlpModel* model_;
  std::string identity_;
};

struct BinStats {
  double nbar_lo = 0.0;
  double nbar_hi = 0.0;
  std::size_t count = 0;
  double mean_rel_error = 0.0;
};

struct EvalOptions {
  int bins = 24;             // geometric over [bin_lo, bin_hi]
  double bin_lo = 1.0;
  double bin_hi = 1500.0;
  double window_lo = 100.0;  // headline window for mean relative error
  double window_hi = 1400.0;
  double low_nbar = 8.0;     // stratum where >= 10% errors are expected
  double large_error = 0.10;
  unsigned workers = 1;
};

struct EvalReport {
  std::vector<BinStats> bins;
  std::size_t count = 0;
  double mean_rel_error = 0.0;
  double rel_error_sem = 0.0;  // standard error of mean_rel_error
  double mean_abs_omega_t_error = 0.0;

  double window_lo = 0.0;
  double window_hi = 0.0;
  std::size_t window_count = 0;
  double window_mean_rel_error = 0.0;
  double window_rel_error_sem = 0.0;

  double low_nbar = 0.0;
  std::size_t low_count = 0;
  double low_mean_rel_error = 0.0;
  double low_large_error_fraction = 0.0;  // share of low-n records with error >= large_error

  std::size_t clamped = 0;
  std::string model_identity;
  dataset::Header header;
};

// Per-record |dn|/n and |d(Omega t)| aggregated into bins and summaries.
// Records outside the bin range fall into the nearest edge bin.
EvalReport evaluate_model(const Estimator& estimator, const dataset::Dataset& test,
                          const EvalOptions& options = {});

struct SweepPoint {
  std::uint32_t trials = 0;  // 0 = noise-free reference
  EvalReport report;
};

// Evaluates the clean set and then the set noised with each N in `trials`.
std::vector<SweepPoint> noise_sweep(const Estimator& estimator, const dataset::Dataset& test,
                                    const std::vector<std::uint32_t>& trials, std::uint64_t seed,
                                    const EvalOptions& options = {});

struct MonteCarloResult {
  double nbar_mean = 0.0;
  double nbar_std = 0.0;
  double omega_t_mean = 0.0;
  double omega_t_std = 0.0;
  std::size_t draws = 0;
  double input_clamp_fraction = 0.0;  // drawn populations pulled back into [0, 1]
  std::size_t output_clamped = 0;     // estimates pulled back into the model box
};

// Propagates independent normal uncertainties on the populations through the
// estimator. Sample standard deviations use n - 1.
MonteCarloResult monte_carlo_errorbar(const Estimator& estimator, double eta,
                                      const std::vector<double>& populations,
                                      const std::vector<double>& sigmas, std::size_t draws,
                                      std::uint64_t seed, unsigned workers = 1);

struct ScanPoint {
  double frequency_hz;
  double population;
  std::uint32_t measurements;
};

struct ScanTrace {
  std::vector<ScanPoint> points;

  void validate() const;
};

ScanTrace read_scan_trace(const std::filesystem::path& path);

struct PeakFit {
  double amplitude = 0.0;
  double center_hz = 0.0;
  double width_hz = 0.0;
  double baseline = 0.0;
  double amplitude_se = 0.0;
  double center_se = 0.0;
  double width_se = 0.0;
  double baseline_se = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;

  // Peak height a + b, clipped to [0, 1].
  double population() const;
};

struct PeakFitOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
};

// Levenberg-Marquardt fit of a exp(-(f - f0)^2 / (2 s^2)) + b, weighted by
// the per-point measurement counts.
PeakFit gaussian_peak_fit(const ScanTrace& trace, const PeakFitOptions& options = {});

struct HeatingPoint {
  double duration_ms;
  double nbar;
};

struct HeatingLine {
  double rate = 0.0;  // phonons per ms
  double intercept = 0.0;
  double rate_se = 0.0;
  double intercept_se = 0.0;

  double at(double duration_ms) const { return intercept + rate * duration_ms; }
  void validate() const;
};

HeatingLine fit_heating_rate(const std::vector<HeatingPoint>& points);
std::vector<HeatingPoint> read_heating_points(const std::filesystem::path& path);

struct LineCheckOptions {
  double eta = 0.122;
  double omega_t = physics::kPi;
  std::uint32_t noise_trials = 0;  // 0 = clean spectra
  std::uint64_t seed = 0;
  double tail_epsilon = physics::kDefaultTailEpsilon;
};

struct LineCheckRow {
  double duration_ms;
  double nbar_line;
  double nbar_estimate;
  double omega_t_estimate;
  double rel_deviation;
  bool clamped;
};

// Synthesizes the spectrum at n = line(t) for each duration and compares the
// estimate with the line.
std::vector<LineCheckRow> verify_against_heating_line(const Estimator& estimator,
                                                      const HeatingLine& line,
                                                      const std::vector<double>& durations_ms,
                                                      const LineCheckOptions& options = {});

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const std::vector<SweepPoint>& sweep);
nlohmann::json to_json(const MonteCarloResult& result);
nlohmann::json to_json(const PeakFit& fit);
nlohmann::json to_json(const HeatingLine& line);
nlohmann::json to_json(const dataset::Header& header);

void write_bins_csv(const EvalReport& report, const std::filesystem::path& path);
void write_sweep_csv(const std::vector<SweepPoint>& sweep, const std::filesystem::path& path);
void write_line_check_csv(const std::vector<LineCheckRow>& rows,
                          const std::filesystem::path& path);

}  // namespace sbthermo::eval
