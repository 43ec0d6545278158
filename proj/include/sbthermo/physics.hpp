#pragma once

// Forward model for blue-sideband spectroscopy of a single trapped ion in a
// thermal motional state.
//
// The Rabi frequency of |down,n> -> |up,n+q> relative to the bare coupling is
//
//   k_{n+q,n} = exp(-eta^2/2) eta^q sqrt(n!/(n+q)!) L_n^q(eta^2),
//
// and the excited population after a pulse of area Omega*t, with the motional
// state thermal at mean occupation nbar, is
//
//   P_up(q) = sum_n p_n sin^2(k_{n+q,n} Omega t),  p_n = nbar^n / (nbar+1)^(n+1).
//
// Relaxation during the pulse is neglected.

#include <cstddef>
#include <span>
#include <vector>

namespace sbthermo::physics {

inline constexpr double kHbar = 1.054571817e-34;  // J s
inline constexpr double kPi = 3.14159265358979323846;

// 40Ca+ mass and the 729 nm S1/2 - D5/2 quadrupole line.
inline constexpr double kCalcium40IonMass = 6.642e-26;  // kg
inline constexpr double kCalcium729Wavelength = 729e-9;  // m

inline constexpr int kDefaultFockCap = 20000;
inline constexpr int kMaxSidebandOrder = 64;
inline constexpr double kMaxMeanPhonon = 2000.0;
inline constexpr double kMaxPulseArea = 4.0 * kPi;
inline constexpr double kDefaultTailEpsilon = 1e-4;

struct ExperimentGeometry {
  double ion_mass;        // kg
  double wavenumber;      // rad/m, 2 pi / lambda
  double angle;           // rad, between wave vector and the vibration axis
  double trap_frequency;  // rad/s, angular

  void validate() const;

  static ExperimentGeometry calcium40(double trap_frequency_hz, double angle = 0.0);
};

double lamb_dicke(const ExperimentGeometry& geometry);

// Generalized Laguerre polynomial L_n^alpha(x) by the forward three-term
// recurrence. Throws kResourceLimit if n exceeds `cap`.
double laguerre(int n, int alpha, double x, int cap = kDefaultFockCap);

// k_{n+q,n}. Evaluated through a recurrence on the normalized coefficient
// itself, so nothing overflows for large n.
double coupling_ratio(int n, int q, double eta, int cap = kDefaultFockCap);

class CouplingTable {
 public:
  CouplingTable(double eta, int q, int n_max, int cap = kDefaultFockCap);

  double eta() const { return eta_; }
  int order() const { return q_; }
  int n_max() const { return static_cast<int>(values_.size()) - 1; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t n) const { return values_[n]; }

 private:
  double eta_;
  int q_;
  std::vector<double> values_;
};

inline CouplingTable coupling_table(double eta, int q, int n_max,
                                    int cap = kDefaultFockCap) {
  return CouplingTable(eta, q, n_max, cap);
}

class ThermalDistribution {
 public:
  // Truncates at the smallest n_max whose untruncated tail mass
  // (nbar/(nbar+1))^(n_max+1) is below tail_epsilon, then renormalizes.
  ThermalDistribution(double nbar, double tail_epsilon);

  double nbar() const { return nbar_; }
  double tail_epsilon() const { return tail_epsilon_; }
  // Mass discarded before renormalization.
  double tail_mass() const { return tail_mass_; }
  int n_max() const { return static_cast<int>(probs_.size()) - 1; }
  std::size_t size() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t n) const { return probs_[n]; }

  // Truncation index for given parameters without building the pmf.
  static int truncation_index(double nbar, double tail_epsilon);

 private:
  double nbar_;
  double tail_epsilon_;
  double tail_mass_;
  std::vector<double> probs_;
};

inline ThermalDistribution thermal_pmf(double nbar,
                                       double tail_epsilon = kDefaultTailEpsilon) {
  return ThermalDistribution(nbar, tail_epsilon);
}

double sideband_population(const ThermalDistribution& dist, const CouplingTable& table,
                           double omega_t);

struct SidebandSpectrum {
  double eta;
  std::vector<double> populations;  // P_up(1..Q)

  int sideband_count() const { return static_cast<int>(populations.size()); }
};

SidebandSpectrum spectrum(double nbar, double eta, double omega_t, int sideband_count,
                          double tail_epsilon = kDefaultTailEpsilon);

// Same as spectrum() but writes P_up(1..Q) into `out` (size Q) and reuses one
// distribution; used by the dataset generator.
void spectrum_into(const ThermalDistribution& dist, double eta, double omega_t,
                   std::span<double> out);

}  // namespace sbthermo::physics
