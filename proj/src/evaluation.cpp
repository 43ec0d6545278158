#include "sbthermo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sbthermo/detail/binary_io.hpp"
#include "sbthermo/detail/csv.hpp"
#include "sbthermo/error.hpp"
#include "sbthermo/parallel.hpp"
#include "sbthermo/rng.hpp"

namespace sbthermo::eval {
namespace {

constexpr std::uint64_t kMonteCarloStream = 0x4D43'4542;  // "MCEB"
constexpr std::uint64_t kSweepStream = 0x5357'4550;       // "SWEP"
constexpr std::uint64_t kLineStream = 0x4C49'4E45;        // "LINE"
constexpr std::size_t kBlockRows = 512;

void check_q(const Estimator& estimator, int q) {
  if (estimator.sideband_count() != q)
    fail(ErrorCode::kQMismatch, "data carries Q=" + std::to_string(q) + ", estimator expects Q=" +
                                    std::to_string(estimator.sideband_count()));
}

// Fixed-size blocks so the result does not depend on the worker count.
std::vector<nn::Estimate> estimate_rows(const Estimator& estimator, std::span<const double> rows,
                                        std::size_t cols, unsigned workers) {
  const std::size_t n = cols == 0 ? 0 : rows.size() / cols;
  std::vector<nn::Estimate> out(n);
  const std::size_t blocks = (n + kBlockRows - 1) / kBlockRows;
  parallel_for(blocks, workers, [&](std::size_t b) {
    const std::size_t begin = b * kBlockRows;
    const std::size_t end = std::min(n, begin + kBlockRows);
    const nn::Matrix x = Eigen::Map<const nn::Matrix>(
        rows.data() + begin * cols, static_cast<Eigen::Index>(end - begin),
        static_cast<Eigen::Index>(cols));
    auto est = estimator.estimate_batch(x);
    if (est.size() != end - begin) fail(ErrorCode::kInvalidInput, "estimator dropped rows");
    std::copy(est.begin(), est.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return out;
}

struct Accumulator {
  std::size_t count = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double v) {
    ++count;
    sum += v;
    sum_sq += v * v;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  double sem() const {
    if (count < 2) return 0.0;
    const double n = static_cast<double>(count);
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    return std::sqrt(var / n);
  }
};

// Mean and sample standard deviation, shifted by the first value so that
// identical inputs give exactly that value and zero spread.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double x0 = v.front();
  double s = 0.0;
  for (double x : v) s += x - x0;
  const double mean = x0 + s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

nlohmann::json box_json(const dataset::ParamBox& b) {
  return {{"nbar", {b.nbar_min, b.nbar_max}},
          {"eta", {b.eta_min, b.eta_max}},
          {"omega_t", {b.omega_t_min, b.omega_t_max}},
          {"sideband_count", b.sideband_count}};
}

}  // namespace

MlpEstimator::MlpEstimator(const nn::MlpModel& model, std::string identity)
    : model_(&model), identity_(std::move(identity)) {}

std::vector<nn::Estimate> MlpEstimator::estimate_batch(const nn::Matrix& inputs) const {
  return nn::predict_batch(*model_, inputs);
}

EvalReport evaluate_model(const Estimator& estimator, const dataset::Dataset& test,
                          const EvalOptions& options) {
  check_q(estimator, test.sideband_count());
  if (options.bins < 1 || !(options.bin_lo > 0.0) || !(options.bin_hi > options.bin_lo))
    fail(ErrorCode::kInvalidInput, "bad bin specification");

  const auto est = estimate_rows(estimator, test.inputs(), test.input_dim(), options.workers);

  EvalReport r;
  r.model_identity = estimator.identity();
  r.header = test.header();
  r.window_lo = options.window_lo;
  r.window_hi = options.window_hi;
  r.low_nbar = options.low_nbar;

  const int nb = options.bins;
  const double log_span = std::log(options.bin_hi / options.bin_lo);
  std::vector<Accumulator> bins(static_cast<std::size_t>(nb));
  Accumulator all, window, low, omega;
  std::size_t low_large = 0;

  for (std::size_t i = 0; i < test.size(); ++i) {
    const double truth = test.nbar()[i];
    const double rel = std::abs(est[i].nbar - truth) / truth;
    all.add(rel);
    omega.add(std::abs(est[i].omega_t - test.omega_t()[i]));
    if (est[i].clamped) ++r.clamped;
    const double pos = nb * std::log(truth / options.bin_lo) / log_span;
    const int b = std::clamp(static_cast<int>(std::floor(pos)), 0, nb - 1);
    bins[static_cast<std::size_t>(b)].add(rel);
    if (truth >= options.window_lo && truth <= options.window_hi) window.add(rel);
    if (truth < options.low_nbar) {
      low.add(rel);
      if (rel >= options.large_error) ++low_large;
    }
  }

  r.count = all.count;
  r.mean_rel_error = all.mean();
  r.rel_error_sem = all.sem();
  r.mean_abs_omega_t_error = omega.mean();
  r.window_count = window.count;
  r.window_mean_rel_error = window.mean();
  r.window_rel_error_sem = window.sem();
  r.low_count = low.count;
  r.low_mean_rel_error = low.mean();
  r.low_large_error_fraction =
      low.count ? static_cast<double>(low_large) / static_cast<double>(low.count) : 0.0;
  for (int b = 0; b < nb; ++b) {
    BinStats s;
    s.nbar_lo = options.bin_lo * std::exp(log_span * b / nb);
    s.nbar_hi = options.bin_lo * std::exp(log_span * (b + 1) / nb);
    s.count = bins[static_cast<std::size_t>(b)].count;
    s.mean_rel_error = bins[static_cast<std::size_t>(b)].mean();
    r.bins.push_back(s);
  }
  return r;
}

std::vector<SweepPoint> noise_sweep(const Estimator& estimator, const dataset::Dataset& test,
                                    const std::vector<std::uint32_t>& trials, std::uint64_t seed,
                                    const EvalOptions& options) {
  if (trials.empty()) fail(ErrorCode::kInvalidInput, "noise sweep needs at least one N");
  for (auto n : trials)
    if (n < 1) fail(ErrorCode::kInvalidInput, "noise sweep N must be >= 1");
  check_q(estimator, test.sideband_count());
  std::vector<SweepPoint> out;
  out.push_back({0, evaluate_model(estimator, test, options)});
  for (auto n : trials) {
    const auto noisy = dataset::apply_projection_noise(test, n, derive_key(seed, kSweepStream, n),
                                                       options.workers);
    out.push_back({n, evaluate_model(estimator, noisy, options)});
  }
  return out;
}

MonteCarloResult monte_carlo_errorbar(const Estimator& estimator, double eta,
                                      const std::vector<double>& populations,
                                      const std::vector<double>& sigmas, std::size_t draws,
                                      std::uint64_t seed, unsigned workers) {
  if (draws < 2) fail(ErrorCode::kInvalidInput, "Monte-Carlo error bar needs at least 2 draws");
  if (sigmas.size() != populations.size())
    fail(ErrorCode::kInvalidInput, "need one sigma per population");
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s))
      fail(ErrorCode::kInvalidInput, "sigmas must be finite and >= 0");
  check_q(estimator, static_cast<int>(populations.size()));

  const std::size_t cols = populations.size() + 1;
  std::vector<double> rows(draws * cols);
  std::vector<std::size_t> clipped(draws, 0);
  parallel_for(draws, workers, [&](std::size_t d) {
    double* row = rows.data() + d * cols;
    row[0] = eta;
    CounterRng rng(derive_key(seed, kMonteCarloStream, d));
    for (std::size_t q = 0; q < populations.size(); ++q) {
      double v = populations[q];
      if (sigmas[q] > 0.0) v = std::normal_distribution<double>(v, sigmas[q])(rng);
      const double c = std::clamp(v, 0.0, 1.0);
      if (c != v) ++clipped[d];
      row[q + 1] = c;
    }
  });
  const auto est = estimate_rows(estimator, rows, cols, workers);

  std::vector<double> nbar(draws), omega(draws);
  MonteCarloResult r;
  std::size_t total_clipped = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    nbar[d] = est[d].nbar;
    omega[d] = est[d].omega_t;
    if (est[d].clamped) ++r.output_clamped;
    total_clipped += clipped[d];
  }
  std::tie(r.nbar_mean, r.nbar_std) = mean_std(nbar);
  std::tie(r.omega_t_mean, r.omega_t_std) = mean_std(omega);
  r.draws = draws;
  r.input_clamp_fraction =
      populations.empty()
          ? 0.0
          : static_cast<double>(total_clipped) / static_cast<double>(draws * populations.size());
  return r;
}

std::vector<LineCheckRow> verify_against_heating_line(const Estimator& estimator,
                                                      const HeatingLine& line,
                                                      const std::vector<double>& durations_ms,
                                                      const LineCheckOptions& options) {
  line.validate();
  const int q = estimator.sideband_count();
  const std::size_t cols = static_cast<std::size_t>(q) + 1;
  std::vector<double> rows(durations_ms.size() * cols);
  for (std::size_t i = 0; i < durations_ms.size(); ++i) {
    const double nbar = line.at(durations_ms[i]);
    if (!(nbar > 0.0) || nbar > physics::kMaxMeanPhonon)
      fail(ErrorCode::kInvalidInput, "heating line gives nbar=" + std::to_string(nbar) +
                                         " at t=" + std::to_string(durations_ms[i]) + " ms");
    const auto s = physics::spectrum(nbar, options.eta, options.omega_t, q, options.tail_epsilon);
    double* row = rows.data() + i * cols;
    row[0] = options.eta;
    std::copy(s.populations.begin(), s.populations.end(), row + 1);
    if (options.noise_trials > 0)
      dataset::apply_projection_noise(std::span<double>(row + 1, cols - 1), options.noise_trials,
                                      derive_key(options.seed, kLineStream), i);
  }
  const auto est = estimate_rows(estimator, rows, cols, 1);
  std::vector<LineCheckRow> out;
  for (std::size_t i = 0; i < durations_ms.size(); ++i) {
    const double truth = line.at(durations_ms[i]);
    out.push_back({durations_ms[i], truth, est[i].nbar, est[i].omega_t,
                   std::abs(est[i].nbar - truth) / truth, est[i].clamped});
  }
  return out;
}

nlohmann::json to_json(const dataset::Header& h) {
  return {{"format_version", h.version},
          {"sideband_count", h.sideband_count},
          {"mode", dataset::to_string(h.mode)},
          {"noisy", h.noisy},
          {"noise_trials", h.noise_trials},
          {"count", h.count},
          {"seed", h.seed},
          {"box", box_json(h.box)}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"nbar_lo", b.nbar_lo},
                    {"nbar_hi", b.nbar_hi},
                    {"count", b.count},
                    {"mean_rel_error", b.mean_rel_error}});
  return {{"model", r.model_identity},
          {"dataset", to_json(r.header)},
          {"count", r.count},
          {"mean_rel_error", r.mean_rel_error},
          {"rel_error_sem", r.rel_error_sem},
          {"mean_abs_omega_t_error", r.mean_abs_omega_t_error},
          {"window",
           {{"nbar", {r.window_lo, r.window_hi}},
            {"count", r.window_count},
            {"mean_rel_error", r.window_mean_rel_error},
            {"rel_error_sem", r.window_rel_error_sem}}},
          {"low_nbar",
           {{"below", r.low_nbar},
            {"count", r.low_count},
            {"mean_rel_error", r.low_mean_rel_error},
            {"large_error_fraction", r.low_large_error_fraction}}},
          {"clamped", r.clamped},
          {"bins", bins}};
}

nlohmann::json to_json(const std::vector<SweepPoint>& sweep) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : sweep)
    out.push_back({{"noise_trials", p.trials},
                   {"mean_rel_error", p.report.mean_rel_error},
                   {"rel_error_sem", p.report.rel_error_sem},
                   {"window_mean_rel_error", p.report.window_mean_rel_error},
                   {"window_rel_error_sem", p.report.window_rel_error_sem},
                   {"mean_abs_omega_t_error", p.report.mean_abs_omega_t_error},
                   {"clamped", p.report.clamped}});
  return out;
}

nlohmann::json to_json(const MonteCarloResult& m) {
  return {{"nbar_mean", m.nbar_mean},
          {"nbar_std", m.nbar_std},
          {"omega_t_mean", m.omega_t_mean},
          {"omega_t_std", m.omega_t_std},
          {"draws", m.draws},
          {"input_clamp_fraction", m.input_clamp_fraction},
          {"output_clamped", m.output_clamped}};
}

nlohmann::json to_json(const PeakFit& f) {
  return {{"amplitude", f.amplitude},       {"amplitude_se", f.amplitude_se},
          {"center_hz", f.center_hz},       {"center_se", f.center_se},
          {"width_hz", f.width_hz},         {"width_se", f.width_se},
          {"baseline", f.baseline},         {"baseline_se", f.baseline_se},
          {"population", f.population()},   {"residual_norm", f.residual_norm},
          {"iterations", f.iterations}};
}

nlohmann::json to_json(const HeatingLine& l) {
  return {{"rate_per_ms", l.rate},
          {"rate_se", l.rate_se},
          {"intercept", l.intercept},
          {"intercept_se", l.intercept_se}};
}

void write_bins_csv(const EvalReport& r, const std::filesystem::path& path) {
  using detail::format_double;
  std::string out = "nbar_lo,nbar_hi,count,mean_rel_error\n";
  for (const auto& b : r.bins)
    out += format_double(b.nbar_lo) + ',' + format_double(b.nbar_hi) + ',' +
           std::to_string(b.count) + ',' + format_double(b.mean_rel_error) + '\n';
  detail::write_file_atomic(path, out);
}

void write_sweep_csv(const std::vector<SweepPoint>& sweep, const std::filesystem::path& path) {
  using detail::format_double;
  std::string out = "noise_trials,mean_rel_error,rel_error_sem,window_mean_rel_error\n";
  for (const auto& p : sweep)
    out += std::to_string(p.trials) + ',' + format_double(p.report.mean_rel_error) + ',' +
           format_double(p.report.rel_error_sem) + ',' +
           format_double(p.report.window_mean_rel_error) + '\n';
  detail::write_file_atomic(path, out);
}

void write_line_check_csv(const std::vector<LineCheckRow>& rows,
                          const std::filesystem::path& path) {
  using detail::format_double;
  std::string out = "duration_ms,nbar_line,nbar_estimate,omega_t_estimate,rel_deviation,clamped\n";
  for (const auto& r : rows)
    out += format_double(r.duration_ms) + ',' + format_double(r.nbar_line) + ',' +
           format_double(r.nbar_estimate) + ',' + format_double(r.omega_t_estimate) + ',' +
           format_double(r.rel_deviation) + ',' + (r.clamped ? "1" : "0") + '\n';
  detail::write_file_atomic(path, out);
}

}  // namespace sbthermo::eval
