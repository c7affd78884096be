#ifndef NVREAD_CALIBRATION_HPP
#define NVREAD_CALIBRATION_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nvread/emitter.hpp"
#include "nvread/photon_stats.hpp"

namespace nvread {

// Box bounds on the four rate parameters; lo == hi pins a rate at that
// value and removes it from the search.
struct RateBounds {
  EmitterParams lo;
  EmitterParams hi;
};

struct FitOptions {
  int multistarts = 8;
  int max_evals = 10000;        // per start
  double rel_tol = 1e-9;        // relative NLL change convergence gate
  double jitter = 0.3;          // log-space start perturbation scale
  std::uint64_t seed = 0;
  int threads = 0;              // 0 = hardware concurrency
  // Tie charge weights to the stationary telegraph occupancy implied by the
  // rates (continuous-readout calibration); removes the weight/rate
  // degeneracy that otherwise leaves switching rates poorly identified.
  bool stationary_weights = false;
};

struct FitResult {
  std::vector<EmitterParams> emitters;   // canonical order: gamma_bright desc
  std::vector<double> charge_weights;    // indexed by ChargeConfig::index()
  double nll = 0.0;
  bool converged = false;
  int iterations = 0;  // likelihood evaluations of the winning start
};

// Negative multinomial log-likelihood of a histogram under the switching
// emitter mixture model.
double histogram_nll(const Histogram& hist, const ClusterModel& templ,
                     const std::vector<EmitterParams>& emitters,
                     const std::vector<double>& charge_weights);

// Maximum-likelihood fit of per-emitter rates and joint charge weights.
// Rates are searched in log space; multi-starts run concurrently and the
// best NLL wins. Non-convergence is flagged, not thrown.
FitResult fit_histogram(const Histogram& hist, const ClusterModel& templ,
                        const std::vector<RateBounds>& bounds,
                        const std::vector<EmitterParams>& init_guess,
                        const std::vector<double>& init_weights,
                        const FitOptions& options = {});

struct PowerSweepDataset {
  std::vector<std::pair<double, Histogram>> entries;  // (laser power, histogram)
  double readout_time = 0.0;
  int n_max = 0;

  void validate() const;
};

struct PowerLawFit {
  double amplitude = 0.0;  // rate at unit power
  double exponent = 0.0;
  double amplitude_se = 0.0;
  double exponent_se = 0.0;
};

struct PowerScalingResult {
  // per emitter, rate channels in order gamma_bright, gamma_dark, k_ion, k_rec
  std::vector<std::array<PowerLawFit, 4>> channels;
  std::vector<FitResult> fits;  // one per power, sorted by power
  bool all_converged = false;
};

inline constexpr std::array<const char*, 4> kRateChannelNames = {
    "gamma_bright", "gamma_dark", "k_ion", "k_rec"};

// Fits each power point (warm-starting from the previous one), then a
// log-log least squares line per rate channel.
PowerScalingResult fit_power_scaling(const PowerSweepDataset& sweep,
                                     const ClusterModel& templ,
                                     const std::vector<RateBounds>& bounds,
                                     const std::vector<EmitterParams>& init_guess,
                                     const std::vector<double>& init_weights,
                                     const FitOptions& options = {});

}  // namespace nvread

#endif  // NVREAD_CALIBRATION_HPP
