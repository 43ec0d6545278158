#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sbthermo/physics.hpp"

namespace sbthermo::dataset {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Mode : std::uint8_t {
  kTrain = 0,  // integer nbar
  kTest = 1,   // real nbar
};

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct ParamBox {
  double nbar_min = 1.0;
  double nbar_max = 1500.0;
  double eta_min = 0.069;
  double eta_max = 0.217;
  double omega_t_min = 0.5 * physics::kPi;
  double omega_t_max = 2.0 * physics::kPi;
  int sideband_count = 15;

  void validate() const;

  bool operator==(const ParamBox&) const = default;
};

struct Params {
  double nbar;
  double eta;
  double omega_t;

  bool operator==(const Params&) const = default;
};

// Draws the generating parameters of record `index`. A pure function of
// (box, seed, index, mode); train and test draws are independent streams.
Params sample_params(const ParamBox& box, std::uint64_t seed, std::uint64_t index,
                     Mode mode = Mode::kTrain);

struct ScaledTargets {
  double y1;
  double y2;
};

// y1 = nbar/75 - 10, y2 = (15/2)(omega_t/pi - 1/2) - 10.
// The second map sends [0.5 pi, 2 pi] onto [-10, 1.25].
ScaledTargets scale_targets(double nbar, double omega_t);
Params unscale_targets(double y1, double y2);  // eta left at 0

struct Header {
  std::uint32_t version = kFormatVersion;
  int sideband_count = 0;
  Mode mode = Mode::kTrain;
  bool noisy = false;
  std::uint32_t noise_trials = 0;  // N of the binomial readout, 0 when clean
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  ParamBox box;

  bool operator==(const Header&) const = default;
};

// One network input row is (eta, P_up(1), ..., P_up(Q)).
struct SampleView {
  std::span<const double> input;
  double nbar;
  double omega_t;

  double eta() const { return input[0]; }
  std::span<const double> populations() const { return input.subspan(1); }
  ScaledTargets scaled() const { return scale_targets(nbar, omega_t); }
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Header header);

  const Header& header() const { return header_; }
  Header& header() { return header_; }
  int sideband_count() const { return header_.sideband_count; }
  std::size_t input_dim() const { return static_cast<std::size_t>(header_.sideband_count) + 1; }
  std::size_t size() const { return nbar_.size(); }
  bool empty() const { return nbar_.empty(); }

  SampleView operator[](std::size_t i) const {
    return {std::span<const double>(inputs_).subspan(i * input_dim(), input_dim()), nbar_[i],
            omega_t_[i]};
  }

  // Row-major (size x input_dim) feature matrix.
  std::span<const double> inputs() const { return inputs_; }
  std::span<double> inputs() { return inputs_; }
  std::span<const double> nbar() const { return nbar_; }
  std::span<const double> omega_t() const { return omega_t_; }

  void resize(std::size_t count);
  std::span<double> input_row(std::size_t i) {
    return std::span<double>(inputs_).subspan(i * input_dim(), input_dim());
  }
  void set_targets(std::size_t i, double nbar, double omega_t) {
    nbar_[i] = nbar;
    omega_t_[i] = omega_t;
  }
  void push_back(std::span<const double> input, double nbar, double omega_t);

  // Copy keeping only P_up(1..q) of every record.
  Dataset truncated(int sideband_count) const;

  // Subset of records in [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;

  bool operator==(const Dataset&) const = default;

 private:
  Header header_;
  std::vector<double> inputs_;
  std::vector<double> nbar_;
  std::vector<double> omega_t_;
};

struct GenerateOptions {
  ParamBox box;
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::kTrain;
  double tail_epsilon = physics::kDefaultTailEpsilon;
  unsigned workers = 1;  // 0 = all hardware threads
};

Dataset generate_dataset(const GenerateOptions& options);

// Replaces each population P by k/N, k ~ Binomial(N, P). The draw for
// (record, sideband) depends only on (seed, record, sideband).
Dataset apply_projection_noise(const Dataset& clean, std::uint32_t trials, std::uint64_t seed,
                               unsigned workers = 1);

// Noises one spectrum in place; `record` selects the random stream.
void apply_projection_noise(std::span<double> populations, std::uint32_t trials,
                            std::uint64_t seed, std::uint64_t record);

// Little-endian binary file; see README for the byte layout.
void write_binary(const Dataset& data, const std::filesystem::path& path);
Dataset read_binary(const std::filesystem::path& path);
Header read_header(const std::filesystem::path& path);

// eta, p1..pQ, nbar, omega_t with one header row.
void write_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace sbthermo::dataset
