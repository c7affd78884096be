#ifndef NVREAD_EMITTER_HPP
#define NVREAD_EMITTER_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvread/rng.hpp"

namespace nvread {

// Thrown when a pmf cannot be represented within the configured count
// truncation; carries the n_max that would have sufficed.
class TruncationError : public std::runtime_error {
 public:
  TruncationError(const std::string& msg, int suggested_n_max)
      : std::runtime_error(msg), suggested_n_max(suggested_n_max) {}
  int suggested_n_max;
};

enum class ChargeState : int { kNeg = 0, kNeutral = 1 };

// Per-emitter model parameters: emission rates in the two charge states,
// charge switching rates, and the probabilities entering charge
// initialization and spin-to-charge conversion.
struct EmitterParams {
  double gamma_bright = 0.0;  // photon rate in NV-, counts/s
  double gamma_dark = 0.0;    // photon rate in NV0, counts/s
  double k_ion = 0.0;         // NV- -> NV0 rate, 1/s
  double k_rec = 0.0;         // NV0 -> NV- rate, 1/s
  double p_init_neg = 1.0;    // charge reset leaves emitter in NV-
  double p_shelf = 0.0;       // ms=1 population shelved at the ionization pulse
  double eta_ionize = 0.0;    // non-shelved NV- ionized by the red pulse

  void validate() const;

  double photon_rate(ChargeState s) const {
    return s == ChargeState::kNeg ? gamma_bright : gamma_dark;
  }
  double switch_rate(ChargeState s) const {
    return s == ChargeState::kNeg ? k_ion : k_rec;
  }
};

// Joint charge configuration of a cluster. Index convention matches spin
// labels: emitter 0 is the most significant digit, NEUTRAL counts as 1
// (so for two emitters index 0 = both NV-, index 3 = both NV0).
struct ChargeConfig {
  std::vector<ChargeState> states;

  ChargeConfig() = default;
  explicit ChargeConfig(std::vector<ChargeState> s) : states(std::move(s)) {}

  static ChargeConfig from_index(std::size_t index, std::size_t n_emitters);
  std::size_t index() const;
  std::size_t size() const { return states.size(); }
  ChargeState operator[](std::size_t i) const { return states[i]; }
};

// Ordered emitter collection plus the readout window and count truncation.
struct ClusterModel {
  std::vector<EmitterParams> emitters;
  double readout_time = 0.0;  // seconds
  int n_max = 0;              // pmf modeled over counts 0..n_max

  // n_max < 0 requests the automatic choice (product-Poisson tail bound).
  static ClusterModel make(std::vector<EmitterParams> emitters,
                           double readout_time, int n_max = -1);

  std::size_t size() const { return emitters.size(); }
  std::size_t n_charge_configs() const { return std::size_t{1} << emitters.size(); }
  double max_mean_counts() const;  // all-bright expected counts
};

// Smallest n with Poisson(lambda) tail below 1e-8, times 1.5.
int default_n_max(double lambda);

// Photon-count frequencies over 0..n_max.
struct Histogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t total_shots = 0;

  explicit Histogram(int n_max = 0) : counts(static_cast<std::size_t>(n_max) + 1, 0) {}

  int n_max() const { return static_cast<int>(counts.size()) - 1; }
  void add(std::uint64_t n);
  std::vector<double> normalized() const;
  double mean() const;
};

struct TrajectorySegment {
  ChargeState state;
  double dwell;  // seconds, > 0
};

// Gillespie realization of the two-state charge telegraph process.
// Dwell times sum to exactly T.
std::vector<TrajectorySegment> sample_charge_trajectory(const EmitterParams& params,
                                                        ChargeState init, double T,
                                                        Rng& rng);

// Poisson counts from the integrated intensity of one sampled trajectory.
std::uint64_t sample_counts(const EmitterParams& params, ChargeState init, double T,
                            Rng& rng);

// Sum of independent per-emitter counts for a joint initial configuration.
std::uint64_t sample_cluster_counts(const ClusterModel& cluster,
                                    const ChargeConfig& init, Rng& rng);

// Closed-form two-state occupancy: P(NEUTRAL at t | init), used as an
// independent oracle against the Gillespie sampler.
double neutral_occupancy(const EmitterParams& params, ChargeState init, double t);

}  // namespace nvread

#endif  // NVREAD_EMITTER_HPP
