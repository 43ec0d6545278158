#include "sbthermo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "sbthermo/error.hpp"
#include "sbthermo/parallel.hpp"
#include "sbthermo/rng.hpp"

namespace sbthermo::dataset {
namespace {

// Stream labels keep the parameter draws and the readout noise independent
// even when they share a seed.
constexpr std::uint64_t kParamStream = 0x5041524D;  // "PARM"
constexpr std::uint64_t kNoiseStream = 0x4E4F4953;  // "NOIS"

enum Field : std::uint64_t { kFieldNbar = 0, kFieldEta = 1, kFieldOmega = 2 };

}  // namespace

const char* to_string(Mode mode) { return mode == Mode::kTrain ? "train" : "test"; }

Mode mode_from_string(const std::string& name) {
  if (name == "train") return Mode::kTrain;
  if (name == "test") return Mode::kTest;
  fail(ErrorCode::kInvalidInput, "unknown dataset mode '" + name + "'");
}

void ParamBox::validate() const {
  auto check = [](double lo, double hi, double floor, double ceil, const char* what) {
    if (!(lo <= hi) || !(lo >= floor) || !(hi <= ceil))
      fail(ErrorCode::kInvalidInput,
           std::string(what) + " range [" + std::to_string(lo) + ", " + std::to_string(hi) +
               "] invalid or outside [" + std::to_string(floor) + ", " + std::to_string(ceil) +
               "]");
  };
  check(nbar_min, nbar_max, 1e-9, physics::kMaxMeanPhonon, "nbar");
  check(eta_min, eta_max, 1e-9, 0.999, "eta");
  check(omega_t_min, omega_t_max, -physics::kMaxPulseArea, physics::kMaxPulseArea, "omega_t");
  if (sideband_count < 1 || sideband_count > physics::kMaxSidebandOrder)
    fail(ErrorCode::kInvalidInput, "sideband count " + std::to_string(sideband_count) +
                                       " outside [1, " +
                                       std::to_string(physics::kMaxSidebandOrder) + "]");
}

Params sample_params(const ParamBox& box, std::uint64_t seed, std::uint64_t index, Mode mode) {
  const CounterRng rng(derive_key(seed, kParamStream, static_cast<std::uint64_t>(mode), index));
  const double u_nbar = CounterRng::to_unit(rng.at(kFieldNbar));
  const double u_eta = CounterRng::to_unit(rng.at(kFieldEta));
  const double u_omega = CounterRng::to_unit(rng.at(kFieldOmega));

  Params p{};
  if (mode == Mode::kTrain) {
    const double lo = std::ceil(box.nbar_min);
    const double hi = std::floor(box.nbar_max);
    if (hi < lo) fail(ErrorCode::kInvalidInput, "nbar range contains no integer");
    const double levels = hi - lo + 1.0;
    p.nbar = std::min(hi, lo + std::floor(u_nbar * levels));
  } else {
    p.nbar = box.nbar_min + u_nbar * (box.nbar_max - box.nbar_min);
  }
  p.eta = box.eta_min + u_eta * (box.eta_max - box.eta_min);
  p.omega_t = box.omega_t_min + u_omega * (box.omega_t_max - box.omega_t_min);
  return p;
}

ScaledTargets scale_targets(double nbar, double omega_t) {
  return {nbar / 75.0 - 10.0, 7.5 * (omega_t / physics::kPi - 0.5) - 10.0};
}

Params unscale_targets(double y1, double y2) {
  return {(y1 + 10.0) * 75.0, 0.0, ((y2 + 10.0) / 7.5 + 0.5) * physics::kPi};
}

Dataset::Dataset(Header header) : header_(header) { resize(header.count); }

void Dataset::resize(std::size_t count) {
  inputs_.assign(count * input_dim(), 0.0);
  nbar_.assign(count, 0.0);
  omega_t_.assign(count, 0.0);
  header_.count = count;
}

void Dataset::push_back(std::span<const double> input, double nbar, double omega_t) {
  if (input.size() != input_dim())
    fail(ErrorCode::kQMismatch, "record has " + std::to_string(input.size()) +
                                    " inputs, dataset expects " + std::to_string(input_dim()));
  inputs_.insert(inputs_.end(), input.begin(), input.end());
  nbar_.push_back(nbar);
  omega_t_.push_back(omega_t);
  header_.count = nbar_.size();
}

Dataset Dataset::truncated(int sideband_count) const {
  if (sideband_count < 1 || sideband_count > header_.sideband_count)
    fail(ErrorCode::kQMismatch, "cannot truncate Q=" + std::to_string(header_.sideband_count) +
                                    " dataset to Q=" + std::to_string(sideband_count));
  Header h = header_;
  h.sideband_count = sideband_count;
  h.box.sideband_count = sideband_count;
  Dataset out(h);
  const std::size_t width = out.input_dim();
  for (std::size_t i = 0; i < size(); ++i) {
    const auto src = (*this)[i].input.first(width);
    std::copy(src.begin(), src.end(), out.input_row(i).begin());
    out.set_targets(i, nbar_[i], omega_t_[i]);
  }
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) fail(ErrorCode::kInvalidInput, "slice out of range");
  Header h = header_;
  h.count = end - begin;
  Dataset out(h);
  const std::size_t width = input_dim();
  std::copy(inputs_.begin() + begin * width, inputs_.begin() + end * width,
            out.inputs_.begin());
  std::copy(nbar_.begin() + begin, nbar_.begin() + end, out.nbar_.begin());
  std::copy(omega_t_.begin() + begin, omega_t_.begin() + end, out.omega_t_.begin());
  return out;
}

Dataset generate_dataset(const GenerateOptions& options) {
  options.box.validate();
  Header header;
  header.sideband_count = options.box.sideband_count;
  header.mode = options.mode;
  header.count = options.count;
  header.seed = options.seed;
  header.box = options.box;
  Dataset data(header);

  parallel_for(options.count, options.workers, [&](std::size_t i) {
    const Params p = sample_params(options.box, options.seed, i, options.mode);
    try {
      const physics::ThermalDistribution dist(p.nbar, options.tail_epsilon);
      auto row = data.input_row(i);
      row[0] = p.eta;
      physics::spectrum_into(dist, p.eta, p.omega_t, row.subspan(1));
    } catch (const Error& e) {
      fail(e.code(), "record " + std::to_string(i) + ": " + e.what());
    }
    data.set_targets(i, p.nbar, p.omega_t);
  });
  return data;
}

void apply_projection_noise(std::span<double> populations, std::uint32_t trials,
                            std::uint64_t seed, std::uint64_t record) {
  if (trials == 0) fail(ErrorCode::kInvalidInput, "projection noise needs N >= 1 trials");
  for (std::size_t q = 0; q < populations.size(); ++q) {
    const double p = populations[q];
    if (!(p >= 0.0 && p <= 1.0))
      fail(ErrorCode::kInvalidInput, "population " + std::to_string(p) + " outside [0, 1]");
    if (p == 0.0 || p == 1.0) continue;
    CounterRng rng(derive_key(seed, kNoiseStream, record, q));
    std::binomial_distribution<std::int64_t> draw(trials, p);
    populations[q] = static_cast<double>(draw(rng)) / trials;
  }
}

Dataset apply_projection_noise(const Dataset& clean, std::uint32_t trials, std::uint64_t seed,
                               unsigned workers) {
  if (trials == 0) fail(ErrorCode::kInvalidInput, "projection noise needs N >= 1 trials");
  Dataset noisy = clean;
  noisy.header().noisy = true;
  noisy.header().noise_trials = trials;
  parallel_for(noisy.size(), workers, [&](std::size_t i) {
    apply_projection_noise(noisy.input_row(i).subspan(1), trials, seed, i);
  });
  return noisy;
}

}  // namespace sbthermo::dataset
