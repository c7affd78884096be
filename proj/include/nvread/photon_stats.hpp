#ifndef NVREAD_PHOTON_STATS_HPP
#define NVREAD_PHOTON_STATS_HPP

#include <array>
#include <span>
#include <vector>

#include "nvread/emitter.hpp"

namespace nvread {

// Photon-count pmf of one switching emitter, conditioned on its initial
// charge state. Computed once per parameter set and reused.
struct ConditionalPmf {
  std::array<std::vector<double>, 2> pmf;  // indexed by ChargeState
  EmitterParams params;
  double readout_time = 0.0;
  int n_max = 0;

  const std::vector<double>& operator[](ChargeState s) const {
    return pmf[static_cast<int>(s)];
  }
};

// Integrates the count-resolved master equation of the two-state
// Markov-modulated Poisson process (fixed-step RK4, truncated at n_max).
// Throws TruncationError if tail mass beyond n_max exceeds 1e-6.
ConditionalPmf single_emitter_pmf(const EmitterParams& params, double T, int n_max);

// Discrete convolution of per-emitter conditional pmfs for one joint
// initial charge configuration.
std::vector<double> cluster_pmf(std::span<const ConditionalPmf> pmfs,
                                const ChargeConfig& init);

// Mixture over joint initial charge configurations; weights indexed by
// ChargeConfig::index(), must sum to 1 within 1e-9.
std::vector<double> mixture_pmf(std::span<const ConditionalPmf> pmfs,
                                std::span<const double> charge_weights);

// Per-emitter conditional pmfs for a cluster, all at the cluster's n_max.
std::vector<ConditionalPmf> cluster_conditional_pmfs(const ClusterModel& cluster);

std::vector<double> poisson_pmf(double lambda, int n_max);

double total_variation(std::span<const double> a, std::span<const double> b);

}  // namespace nvread

#endif  // NVREAD_PHOTON_STATS_HPP
