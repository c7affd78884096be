#include "nvread/emitter.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace nvread {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

bool is_prob(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

void EmitterParams::validate() const {
  require(finite_nonneg(gamma_bright), "gamma_bright must be finite and >= 0");
  require(finite_nonneg(gamma_dark), "gamma_dark must be finite and >= 0");
  require(finite_nonneg(k_ion), "k_ion must be finite and >= 0");
  require(finite_nonneg(k_rec), "k_rec must be finite and >= 0");
  require(gamma_bright >= gamma_dark, "gamma_bright must be >= gamma_dark");
  require(is_prob(p_init_neg), "p_init_neg must be in [0,1]");
  require(is_prob(p_shelf), "p_shelf must be in [0,1]");
  require(is_prob(eta_ionize), "eta_ionize must be in [0,1]");
}

ChargeConfig ChargeConfig::from_index(std::size_t index, std::size_t n_emitters) {
  ChargeConfig cfg;
  cfg.states.resize(n_emitters);
  for (std::size_t i = 0; i < n_emitters; ++i) {
    std::size_t bit = (index >> (n_emitters - 1 - i)) & 1u;
    cfg.states[i] = bit ? ChargeState::kNeutral : ChargeState::kNeg;
  }
  return cfg;
}

std::size_t ChargeConfig::index() const {
  std::size_t idx = 0;
  for (ChargeState s : states)
    idx = (idx << 1) | (s == ChargeState::kNeutral ? 1u : 0u);
  return idx;
}

int default_n_max(double lambda) {
  if (lambda <= 0.0) return 8;
  // walk the Poisson cdf until the tail drops below 1e-8
  double p = std::exp(-lambda);
  double cdf = p;
  int n = 0;
  while (1.0 - cdf > 1e-8 && n < 100000) {
    ++n;
    p *= lambda / n;
    cdf += p;
  }
  int bound = static_cast<int>(std::ceil(1.5 * n));
  return bound < 8 ? 8 : bound;
}

ClusterModel ClusterModel::make(std::vector<EmitterParams> emitters,
                                double readout_time, int n_max) {
  require(!emitters.empty(), "cluster needs at least one emitter");
  require(std::isfinite(readout_time) && readout_time > 0.0,
          "readout_time must be > 0");
  for (const auto& e : emitters) e.validate();

  double lambda = 0.0;
  for (const auto& e : emitters) lambda += e.gamma_bright * readout_time;
  int auto_n = default_n_max(lambda);
  if (n_max < 0) n_max = auto_n;

  // tail beyond n_max of the all-bright product Poisson must be < 1e-6
  double p = std::exp(-lambda);
  double cdf = p;
  for (int n = 1; n <= n_max; ++n) {
    p *= lambda / n;
    cdf += p;
  }
  if (1.0 - cdf > 1e-6)
    throw TruncationError("cluster n_max too small for modeled brightness", auto_n);

  ClusterModel cluster;
  cluster.emitters = std::move(emitters);
  cluster.readout_time = readout_time;
  cluster.n_max = n_max;
  return cluster;
}

double ClusterModel::max_mean_counts() const {
  double lambda = 0.0;
  for (const auto& e : emitters) lambda += e.gamma_bright * readout_time;
  return lambda;
}

void Histogram::add(std::uint64_t n) {
  if (n >= counts.size()) n = counts.size() - 1;  // clamp overflow into top bin
  ++counts[n];
  ++total_shots;
}

std::vector<double> Histogram::normalized() const {
  std::vector<double> p(counts.size(), 0.0);
  if (total_shots == 0) return p;
  for (std::size_t i = 0; i < counts.size(); ++i)
    p[i] = static_cast<double>(counts[i]) / static_cast<double>(total_shots);
  return p;
}

double Histogram::mean() const {
  if (total_shots == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    s += static_cast<double>(i) * static_cast<double>(counts[i]);
  return s / static_cast<double>(total_shots);
}

std::vector<TrajectorySegment> sample_charge_trajectory(const EmitterParams& params,
                                                        ChargeState init, double T,
                                                        Rng& rng) {
  params.validate();
  require(std::isfinite(T) && T > 0.0, "T must be > 0");

  std::vector<TrajectorySegment> segments;
  ChargeState state = init;
  double remaining = T;
  while (remaining > 0.0) {
    double rate = params.switch_rate(state);
    double dwell = rate > 0.0 ? rng.exponential(rate)
                              : std::numeric_limits<double>::infinity();
    if (dwell >= remaining) {
      segments.push_back({state, remaining});
      break;
    }
    segments.push_back({state, dwell});
    remaining -= dwell;
    state = state == ChargeState::kNeg ? ChargeState::kNeutral : ChargeState::kNeg;
  }
  return segments;
}

std::uint64_t sample_counts(const EmitterParams& params, ChargeState init, double T,
                            Rng& rng) {
  params.validate();
  if (T == 0.0) return 0;
  double intensity = 0.0;
  // inline trajectory sampling; the segment list is never materialized
  ChargeState state = init;
  double remaining = T;
  while (remaining > 0.0) {
    double rate = params.switch_rate(state);
    double dwell = rate > 0.0 ? rng.exponential(rate)
                              : std::numeric_limits<double>::infinity();
    if (dwell >= remaining) {
      intensity += params.photon_rate(state) * remaining;
      break;
    }
    intensity += params.photon_rate(state) * dwell;
    remaining -= dwell;
    state = state == ChargeState::kNeg ? ChargeState::kNeutral : ChargeState::kNeg;
  }
  return rng.poisson(intensity);
}

std::uint64_t sample_cluster_counts(const ClusterModel& cluster,
                                    const ChargeConfig& init, Rng& rng) {
  if (init.size() != cluster.size())
    throw std::invalid_argument("charge config length does not match cluster");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < cluster.size(); ++i)
    total += sample_counts(cluster.emitters[i], init[i], cluster.readout_time, rng);
  return total;
}

double neutral_occupancy(const EmitterParams& params, ChargeState init, double t) {
  double ksum = params.k_ion + params.k_rec;
  if (ksum == 0.0) return init == ChargeState::kNeutral ? 1.0 : 0.0;
  double stationary = params.k_ion / ksum;
  double start = init == ChargeState::kNeutral ? 1.0 : 0.0;
  return stationary + (start - stationary) * std::exp(-ksum * t);
}

}  // namespace nvread
