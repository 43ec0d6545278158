#include "sbthermo/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sbthermo/error.hpp"

namespace sbthermo::physics {
namespace {

void check_order(int q) {
  if (q < 1 || q > kMaxSidebandOrder)
    fail(ErrorCode::kInvalidInput,
         "sideband order q=" + std::to_string(q) + " outside [1, " +
             std::to_string(kMaxSidebandOrder) + "]");
}

void check_fock(int n, int cap) {
  if (n < 0) fail(ErrorCode::kInvalidInput, "negative Fock index " + std::to_string(n));
  if (n > cap)
    fail(ErrorCode::kResourceLimit,
         "Fock index " + std::to_string(n) + " exceeds cap " + std::to_string(cap));
}

void check_eta(double eta) {
  if (!(eta >= 0.0 && eta < 1.0))
    fail(ErrorCode::kInvalidInput, "Lamb-Dicke parameter " + std::to_string(eta) +
                                       " outside [0, 1)");
}

// Walks c_n = exp(-x/2) eta^q sqrt(n!/(n+q)!) L_n^q(x), x = eta^2, for
// n = 0..n_max and hands each value to visit(n, c_n).
//
// Multiplying the Laguerre recurrence
//   (n+1) L_{n+1} = (2n+1+q-x) L_n - (n+q) L_{n-1}
// through by the prefactor ratios gives
//   sqrt((n+1)(n+1+q)) c_{n+1} = (2n+1+q-x) c_n - sqrt(n(n+q)) c_{n-1},
// whose iterates stay bounded by 1.
double initial_coupling(double eta, int q) {
  if (eta == 0.0) return 0.0;
  return std::exp(-0.5 * eta * eta + q * std::log(eta) -
                  0.5 * std::lgamma(static_cast<double>(q) + 1.0));
}

// Advances (c_n, c_{n-1}) to c_{n+1}; c_prev is updated in place.
inline double coupling_step(int n, double q, double x, double c, double& c_prev) {
  const double nd = n;
  const double inv = 1.0 / std::sqrt((nd + 1.0) * (nd + 1.0 + q));
  const double next = ((2.0 * nd + 1.0 + q - x) * c - std::sqrt(nd * (nd + q)) * c_prev) * inv;
  c_prev = c;
  return next;
}

template <typename Visit>
void walk_couplings(double eta, int q, int n_max, Visit&& visit) {
  const double x = eta * eta;
  double c_prev = 0.0;
  double c = initial_coupling(eta, q);
  visit(0, c);
  const double qd = q;
  for (int n = 0; n < n_max; ++n) {
    c = coupling_step(n, qd, x, c, c_prev);
    visit(n + 1, c);
  }
}

}  // namespace

void ExperimentGeometry::validate() const {
  if (!(ion_mass > 0.0) || !std::isfinite(ion_mass))
    fail(ErrorCode::kInvalidInput, "ion mass must be positive");
  if (!(wavenumber > 0.0) || !std::isfinite(wavenumber))
    fail(ErrorCode::kInvalidInput, "wavenumber must be positive");
  if (!(angle >= 0.0 && angle <= 0.5 * kPi + 1e-15))
    fail(ErrorCode::kInvalidInput, "angle must lie in [0, pi/2]");
  constexpr double kMinTrap = 2.0 * kPi * 10e3;
  constexpr double kMaxTrap = 2.0 * kPi * 100e6;
  if (!(trap_frequency >= kMinTrap && trap_frequency <= kMaxTrap))
    fail(ErrorCode::kInvalidInput,
         "trap frequency " + std::to_string(trap_frequency) +
             " rad/s outside 2pi*[10 kHz, 100 MHz]");
}

ExperimentGeometry ExperimentGeometry::calcium40(double trap_frequency_hz, double angle) {
  return {kCalcium40IonMass, 2.0 * kPi / kCalcium729Wavelength, angle,
          2.0 * kPi * trap_frequency_hz};
}

double lamb_dicke(const ExperimentGeometry& g) {
  g.validate();
  // cos(pi/2) evaluates to ~6e-17 rather than 0.
  const double c = g.angle >= 0.5 * kPi ? 0.0 : std::cos(g.angle);
  const double eta = c * g.wavenumber * std::sqrt(kHbar / (2.0 * g.ion_mass * g.trap_frequency));
  if (!(eta < 1.0))
    fail(ErrorCode::kInvalidInput, "geometry gives eta >= 1 (outside Lamb-Dicke regime)");
  return eta;
}

double laguerre(int n, int alpha, double x, int cap) {
  check_fock(n, cap);
  if (alpha < 0) fail(ErrorCode::kInvalidInput, "Laguerre alpha must be non-negative");
  if (!(x >= 0.0) || !std::isfinite(x))
    fail(ErrorCode::kInvalidInput, "Laguerre argument must be finite and non-negative");
  double prev = 1.0;
  if (n == 0) return prev;
  double cur = 1.0 + alpha - x;
  for (int k = 1; k < n; ++k) {
    const double next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

double coupling_ratio(int n, int q, double eta, int cap) {
  check_fock(n, cap);
  check_order(q);
  check_eta(eta);
  double result = 0.0;
  walk_couplings(eta, q, n, [&](int k, double c) {
    if (k == n) result = c;
  });
  return result;
}

CouplingTable::CouplingTable(double eta, int q, int n_max, int cap) : eta_(eta), q_(q) {
  check_fock(n_max, cap);
  check_order(q);
  check_eta(eta);
  values_.resize(static_cast<std::size_t>(n_max) + 1);
  walk_couplings(eta, q, n_max, [&](int k, double c) { values_[k] = c; });
}

int ThermalDistribution::truncation_index(double nbar, double tail_epsilon) {
  if (!(nbar > 0.0 && nbar <= kMaxMeanPhonon))
    fail(ErrorCode::kInvalidInput,
         "mean phonon number " + std::to_string(nbar) + " outside (0, " +
             std::to_string(kMaxMeanPhonon) + "]");
  if (!(tail_epsilon > 0.0 && tail_epsilon <= 0.1))
    fail(ErrorCode::kInvalidInput,
         "tail epsilon " + std::to_string(tail_epsilon) + " outside (0, 0.1]");
  // Tail beyond n_max is r^(n_max+1), r = nbar/(nbar+1).
  const double log_r = -std::log1p(1.0 / nbar);
  const double log_eps = std::log(tail_epsilon);
  auto tail_log = [&](long k) { return static_cast<double>(k + 1) * log_r; };
  long k = static_cast<long>(std::floor(log_eps / log_r));
  if (k < 0) k = 0;
  while (tail_log(k) >= log_eps) ++k;
  while (k > 0 && tail_log(k - 1) < log_eps) --k;
  if (k > std::numeric_limits<int>::max() - 1)
    fail(ErrorCode::kResourceLimit, "thermal truncation index overflows");
  return static_cast<int>(k);
}

ThermalDistribution::ThermalDistribution(double nbar, double tail_epsilon)
    : nbar_(nbar), tail_epsilon_(tail_epsilon) {
  const int n_max = truncation_index(nbar, tail_epsilon);
  const double log_r = -std::log1p(1.0 / nbar);
  const double log_p0 = -std::log1p(nbar);
  probs_.resize(static_cast<std::size_t>(n_max) + 1);
  for (int n = 0; n <= n_max; ++n) probs_[n] = std::exp(log_p0 + n * log_r);
  tail_mass_ = std::exp((n_max + 1.0) * log_r);
  // Descending order adds the small terms first.
  double sum = 0.0;
  for (auto it = probs_.rbegin(); it != probs_.rend(); ++it) sum += *it;
  for (double& p : probs_) p /= sum;
}

double sideband_population(const ThermalDistribution& dist, const CouplingTable& table,
                           double omega_t) {
  if (table.size() < dist.size())
    fail(ErrorCode::kInvalidInput,
         "coupling table (" + std::to_string(table.size()) +
             " entries) shorter than thermal distribution (" + std::to_string(dist.size()) +
             ")");
  if (!(std::abs(omega_t) <= kMaxPulseArea))
    fail(ErrorCode::kInvalidInput, "pulse area outside [-4pi, 4pi]");
  const auto p = dist.probs();
  const auto k = table.values();
  double sum = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const double s = std::sin(k[n] * omega_t);
    const double term = p[n] * s * s;
    sum += term;
  }
  return std::clamp(sum, 0.0, 1.0);
}

void spectrum_into(const ThermalDistribution& dist, double eta, double omega_t,
                   std::span<double> out) {
  check_eta(eta);
  if (!(std::abs(omega_t) <= kMaxPulseArea))
    fail(ErrorCode::kInvalidInput, "pulse area outside [-4pi, 4pi]");
  const int n_max = dist.n_max();
  check_fock(n_max, kDefaultFockCap);
  const std::size_t orders = out.size();
  if (orders > static_cast<std::size_t>(kMaxSidebandOrder)) check_order(static_cast<int>(orders));

  // All orders advance together: the recurrences are independent chains, so
  // interleaving them hides the latency of each step.
  const double x = eta * eta;
  std::vector<double> c(orders), c_prev(orders, 0.0), sum(orders, 0.0);
  const auto p = dist.probs();
  for (std::size_t i = 0; i < orders; ++i) c[i] = initial_coupling(eta, static_cast<int>(i) + 1);
  for (int n = 0;; ++n) {
    for (std::size_t i = 0; i < orders; ++i) {
      const double s = std::sin(c[i] * omega_t);
      const double term = p[n] * s * s;
      sum[i] += term;
    }
    if (n == n_max) break;
    for (std::size_t i = 0; i < orders; ++i)
      c[i] = coupling_step(n, static_cast<double>(i + 1), x, c[i], c_prev[i]);
  }
  for (std::size_t i = 0; i < orders; ++i) out[i] = std::clamp(sum[i], 0.0, 1.0);
}

SidebandSpectrum spectrum(double nbar, double eta, double omega_t, int sideband_count,
                          double tail_epsilon) {
  if (sideband_count < 1)
    fail(ErrorCode::kInvalidInput, "sideband count must be at least 1");
  const ThermalDistribution dist(nbar, tail_epsilon);
  SidebandSpectrum s{eta, std::vector<double>(static_cast<std::size_t>(sideband_count))};
  spectrum_into(dist, eta, omega_t, s.populations);
  return s;
}

}  // namespace sbthermo::physics
