#include "nvread/photon_stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nvread {

namespace {

// d/dt P(n,c) = sum_{c'} Q_{c'c} P(n,c') + gamma_c [P(n-1,c) - P(n,c)],
// truncated at n_max; mass emitted past n_max leaves the system, so the
// deficit from 1 is exactly the tail mass.
void derivative(const EmitterParams& p, int M, const double* y, double* dy) {
  const double* neg = y;
  const double* neu = y + M;
  double* dneg = dy;
  double* dneu = dy + M;
  const double gb = p.gamma_bright, gd = p.gamma_dark;
  const double ki = p.k_ion, kr = p.k_rec;
  dneg[0] = -(ki + gb) * neg[0] + kr * neu[0];
  dneu[0] = -(kr + gd) * neu[0] + ki * neg[0];
  for (int n = 1; n < M; ++n) {
    dneg[n] = -(ki + gb) * neg[n] + kr * neu[n] + gb * neg[n - 1];
    dneu[n] = -(kr + gd) * neu[n] + ki * neg[n] + gd * neu[n - 1];
  }
}

std::vector<double> integrate(const EmitterParams& p, ChargeState init, double T,
                              int n_max, double* tail_out) {
  const int M = n_max + 1;
  std::vector<double> y(2 * M, 0.0);
  y[static_cast<int>(init) * M] = 1.0;

  double stiffness = p.gamma_bright + p.k_ion + p.k_rec;
  double bound = T / 100.0;
  if (stiffness > 0.0) bound = std::min(bound, 1.0 / (10.0 * stiffness));
  bound *= 0.5;  // margin below the step bound
  int steps = static_cast<int>(std::ceil(T / bound));
  double h = T / steps;

  std::vector<double> k1(2 * M), k2(2 * M), k3(2 * M), k4(2 * M), tmp(2 * M);
  for (int s = 0; s < steps; ++s) {
    derivative(p, M, y.data(), k1.data());
    for (int i = 0; i < 2 * M; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    derivative(p, M, tmp.data(), k2.data());
    for (int i = 0; i < 2 * M; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    derivative(p, M, tmp.data(), k3.data());
    for (int i = 0; i < 2 * M; ++i) tmp[i] = y[i] + h * k3[i];
    derivative(p, M, tmp.data(), k4.data());
    for (int i = 0; i < 2 * M; ++i)
      y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }

  std::vector<double> pmf(M);
  double sum = 0.0;
  for (int n = 0; n < M; ++n) {
    double v = y[n] + y[M + n];
    if (v < 0.0) v = 0.0;  // clip integrator round-off
    pmf[n] = v;
    sum += v;
  }
  *tail_out = 1.0 - sum;
  for (double& v : pmf) v /= sum;
  return pmf;
}

}  // namespace

ConditionalPmf single_emitter_pmf(const EmitterParams& params, double T, int n_max) {
  params.validate();
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  if (!(std::isfinite(T) && T >= 0.0)) throw std::invalid_argument("T must be >= 0");

  ConditionalPmf out;
  out.params = params;
  out.readout_time = T;
  out.n_max = n_max;

  if (T == 0.0) {
    for (auto& v : out.pmf) {
      v.assign(static_cast<std::size_t>(n_max) + 1, 0.0);
      v[0] = 1.0;
    }
    return out;
  }

  for (ChargeState init : {ChargeState::kNeg, ChargeState::kNeutral}) {
    double tail = 0.0;
    auto pmf = integrate(params, init, T, n_max, &tail);
    if (tail > 1e-6)
      throw TruncationError("single_emitter_pmf: tail mass beyond n_max exceeds 1e-6",
                            default_n_max(params.gamma_bright * T));
    out.pmf[static_cast<int>(init)] = std::move(pmf);
  }
  return out;
}

std::vector<double> cluster_pmf(std::span<const ConditionalPmf> pmfs,
                                const ChargeConfig& init) {
  if (pmfs.empty()) throw std::invalid_argument("cluster_pmf: no emitters");
  if (init.size() != pmfs.size())
    throw std::invalid_argument("cluster_pmf: config length mismatch");
  const int n_max = pmfs[0].n_max;
  for (const auto& p : pmfs)
    if (p.n_max != n_max)
      throw std::invalid_argument("cluster_pmf: pmfs must share n_max");

  std::vector<double> acc = pmfs[0][init[0]];
  std::vector<double> next(acc.size());
  for (std::size_t e = 1; e < pmfs.size(); ++e) {
    const auto& q = pmfs[e][init[e]];
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (acc[i] == 0.0) continue;
      const std::size_t jmax = acc.size() - i;
      for (std::size_t j = 0; j < jmax; ++j) next[i + j] += acc[i] * q[j];
    }
    acc.swap(next);
  }
  double sum = 0.0;
  for (double v : acc) sum += v;
  if (1.0 - sum > 1e-6)
    throw TruncationError("cluster_pmf: tail mass beyond n_max exceeds 1e-6",
                          static_cast<int>(std::ceil(1.5 * n_max)));
  for (double& v : acc) v /= sum;
  return acc;
}

std::vector<double> mixture_pmf(std::span<const ConditionalPmf> pmfs,
                                std::span<const double> charge_weights) {
  const std::size_t n_configs = std::size_t{1} << pmfs.size();
  if (charge_weights.size() != n_configs)
    throw std::invalid_argument("mixture_pmf: need one weight per charge config");
  double wsum = 0.0;
  for (double w : charge_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture_pmf: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture_pmf: weights must sum to 1");

  std::vector<double> out(static_cast<std::size_t>(pmfs[0].n_max) + 1, 0.0);
  for (std::size_t c = 0; c < n_configs; ++c) {
    if (charge_weights[c] == 0.0) continue;
    auto p = cluster_pmf(pmfs, ChargeConfig::from_index(c, pmfs.size()));
    for (std::size_t n = 0; n < out.size(); ++n) out[n] += charge_weights[c] * p[n];
  }
  return out;
}

std::vector<ConditionalPmf> cluster_conditional_pmfs(const ClusterModel& cluster) {
  std::vector<ConditionalPmf> pmfs;
  pmfs.reserve(cluster.size());
  for (const auto& e : cluster.emitters)
    pmfs.push_back(single_emitter_pmf(e, cluster.readout_time, cluster.n_max));
  return pmfs;
}

std::vector<double> poisson_pmf(double lambda, int n_max) {
  std::vector<double> p(static_cast<std::size_t>(n_max) + 1);
  p[0] = std::exp(-lambda);
  for (int n = 1; n <= n_max; ++n) p[n] = p[n - 1] * lambda / n;
  return p;
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  std::size_t n = std::max(a.size(), b.size());
  double tv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = i < a.size() ? a[i] : 0.0;
    double y = i < b.size() ? b[i] : 0.0;
    tv += std::abs(x - y);
  }
  return 0.5 * tv;
}

}  // namespace nvread
