#include "nvread/scc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "nvread/photon_stats.hpp"
#include "nvread/threads.hpp"

namespace nvread {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Runs fn(i) for i in [0, n) across hardware threads. Work items must be
// independent; determinism comes from per-item RNG streams.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  unsigned hw = static_cast<unsigned>(max_threads());
  if (hw <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> threads;
  unsigned count = std::min<std::size_t>(hw, n);
  threads.reserve(count);
  for (unsigned t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

std::size_t checked_n_emitters(std::size_t label_size) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < label_size) ++n;
  if ((std::size_t{1} << n) != label_size)
    throw std::invalid_argument("spin label size must be a power of two");
  return n;
}

}  // namespace

SpinStateLabel SpinStateLabel::point_mass(std::size_t basis_index,
                                          std::size_t n_emitters) {
  SpinStateLabel label;
  label.probs.assign(std::size_t{1} << n_emitters, 0.0);
  label.probs.at(basis_index) = 1.0;
  return label;
}

std::size_t SpinStateLabel::n_emitters() const {
  return checked_n_emitters(probs.size());
}

void SpinStateLabel::validate() const {
  checked_n_emitters(probs.size());
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("spin label entries must be in [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("spin label must sum to 1");
}

double scc_survival(const EmitterParams& params, int spin) {
  params.validate();
  double survive_unshelved = 1.0 - params.eta_ionize;
  if (spin == 0) return survive_unshelved;
  return params.p_shelf + (1.0 - params.p_shelf) * survive_unshelved;
}

std::uint64_t generate_shot(const ClusterModel& cluster, const SpinStateLabel& label,
                            Rng& rng) {
  label.validate();
  if (label.n_emitters() != cluster.size())
    throw std::invalid_argument("spin label does not match cluster size");

  std::size_t spin_config = rng.discrete(label.probs);
  const std::size_t n = cluster.size();
  std::vector<ChargeState> charges(n, ChargeState::kNeutral);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = cluster.emitters[i];
    if (rng.bernoulli(e.p_init_neg)) {
      int spin = static_cast<int>((spin_config >> (n - 1 - i)) & 1u);
      if (rng.bernoulli(scc_survival(e, spin))) charges[i] = ChargeState::kNeg;
    }
  }
  return sample_cluster_counts(cluster, ChargeConfig{std::move(charges)}, rng);
}

Histogram measure_histogram(const ClusterModel& cluster, const SpinStateLabel& label,
                            std::uint64_t shots, Rng& rng) {
  Histogram h(cluster.n_max);
  for (std::uint64_t i = 0; i < shots; ++i) h.add(generate_shot(cluster, label, rng));
  return h;
}

std::vector<ExperimentRecord> generate_basis_dataset(const ClusterModel& cluster,
                                                     std::uint64_t shots_per_state,
                                                     Rng& rng) {
  if (shots_per_state < 1000)
    throw std::invalid_argument("basis dataset needs >= 1000 shots per state");
  const std::size_t n_states = std::size_t{1} << cluster.size();
  std::uint64_t base = rng.engine()();
  std::vector<ExperimentRecord> records(n_states);
  parallel_for(n_states, [&](std::size_t s) {
    Rng stream = Rng::stream(base, s);
    ExperimentRecord rec;
    rec.truth = SpinStateLabel::point_mass(s, cluster.size());
    rec.hist = measure_histogram(cluster, rec.truth, shots_per_state, stream);
    rec.thetas.assign(cluster.size(), 0.0);
    for (std::size_t i = 0; i < cluster.size(); ++i)
      if ((s >> (cluster.size() - 1 - i)) & 1u) rec.thetas[i] = kPi;
    rec.id = s;
    records[s] = std::move(rec);
  });
  return records;
}

SpinStateLabel rabi_label(std::span<const double> thetas) {
  const std::size_t n = thetas.size();
  SpinStateLabel label;
  label.probs.assign(std::size_t{1} << n, 1.0);
  for (std::size_t idx = 0; idx < label.probs.size(); ++idx) {
    for (std::size_t i = 0; i < n; ++i) {
      double p1 = std::sin(thetas[i] / 2.0);
      p1 *= p1;
      bool one = (idx >> (n - 1 - i)) & 1u;
      label.probs[idx] *= one ? p1 : 1.0 - p1;
    }
  }
  return label;
}

Expectations expectations(const SpinStateLabel& label) {
  label.validate();
  const std::size_t n = label.n_emitters();
  Expectations e;
  e.sz.assign(n, 0.0);
  e.szsz.assign(n * (n - 1) / 2, 0.0);
  for (std::size_t idx = 0; idx < label.probs.size(); ++idx) {
    double p = label.probs[idx];
    if (p == 0.0) continue;
    std::size_t pair = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double szi = ((idx >> (n - 1 - i)) & 1u) ? -0.5 : 0.5;
      e.sz[i] += p * szi;
      for (std::size_t j = i + 1; j < n; ++j, ++pair) {
        double szj = ((idx >> (n - 1 - j)) & 1u) ? -0.5 : 0.5;
        e.szsz[pair] += p * szi * szj;
      }
    }
  }
  return e;
}

Readout oracle_readout() {
  return [](const ExperimentRecord& rec) { return rec.truth; };
}

std::vector<TomographyRow> run_rabi_tomography(const ClusterModel& cluster,
                                               const Readout& readout,
                                               std::span<const double> thetas,
                                               int hists_per_theta,
                                               std::uint64_t shots_per_hist, Rng& rng) {
  if (hists_per_theta < 2)
    throw std::invalid_argument("need >= 2 histograms per theta");
  std::uint64_t base = rng.engine()();
  const std::size_t n = cluster.size();
  std::vector<TomographyRow> rows(thetas.size());

  for (std::size_t t = 0; t < thetas.size(); ++t) {
    std::vector<double> joint(n, thetas[t]);
    SpinStateLabel truth = rabi_label(joint);
    std::vector<Expectations> samples(hists_per_theta);
    parallel_for(static_cast<std::size_t>(hists_per_theta), [&](std::size_t h) {
      Rng stream = Rng::stream(base, t * 100000 + h);
      ExperimentRecord rec;
      rec.truth = truth;
      rec.thetas = joint;
      rec.id = t * 100000 + h;
      rec.hist = measure_histogram(cluster, truth, shots_per_hist, stream);
      auto est = readout(rec);
      if (est.probs.size() != truth.probs.size())
        throw std::invalid_argument("readout output dimension mismatch");
      samples[h] = expectations(est);
    });

    TomographyRow row;
    row.theta = thetas[t];
    row.mean.sz.assign(n, 0.0);
    row.mean.szsz.assign(n * (n - 1) / 2, 0.0);
    row.stddev = row.mean;
    for (const auto& s : samples) {
      for (std::size_t i = 0; i < row.mean.sz.size(); ++i) row.mean.sz[i] += s.sz[i];
      for (std::size_t i = 0; i < row.mean.szsz.size(); ++i)
        row.mean.szsz[i] += s.szsz[i];
    }
    for (double& v : row.mean.sz) v /= hists_per_theta;
    for (double& v : row.mean.szsz) v /= hists_per_theta;
    for (const auto& s : samples) {
      for (std::size_t i = 0; i < row.mean.sz.size(); ++i) {
        double d = s.sz[i] - row.mean.sz[i];
        row.stddev.sz[i] += d * d;
      }
      for (std::size_t i = 0; i < row.mean.szsz.size(); ++i) {
        double d = s.szsz[i] - row.mean.szsz[i];
        row.stddev.szsz[i] += d * d;
      }
    }
    for (double& v : row.stddev.sz) v = std::sqrt(v / (hists_per_theta - 1));
    for (double& v : row.stddev.szsz) v = std::sqrt(v / (hists_per_theta - 1));
    rows[t] = std::move(row);
  }
  return rows;
}

SensingResult run_correlated_sensing(const ClusterModel& cluster,
                                     const Readout& readout, int n_blocks,
                                     std::uint64_t shots_per_block, bool anticorrelated,
                                     Rng& rng) {
  const std::size_t n = cluster.size();
  if (n < 2) throw std::invalid_argument("correlated sensing needs >= 2 emitters");
  std::uint64_t base = rng.engine()();
  std::vector<bool> flip(n_blocks);
  for (int b = 0; b < n_blocks; ++b) flip[b] = rng.bernoulli(0.5);

  std::vector<Expectations> est(n_blocks);
  parallel_for(static_cast<std::size_t>(n_blocks), [&](std::size_t b) {
    Rng stream = Rng::stream(base, b);
    std::vector<double> thetas(n, flip[b] ? kPi : 0.0);
    if (anticorrelated) thetas[1] = flip[b] ? 0.0 : kPi;
    ExperimentRecord rec;
    rec.truth = rabi_label(thetas);
    rec.thetas = thetas;
    rec.id = b;
    rec.hist = measure_histogram(cluster, rec.truth, shots_per_block, stream);
    est[b] = expectations(readout(rec));
  });

  SensingResult res;
  res.blocks = n_blocks;
  res.sz_mean.assign(n, 0.0);
  double parity_sum = 0.0, parity_sq = 0.0, xy = 0.0;
  for (const auto& e : est) {
    for (std::size_t i = 0; i < n; ++i) res.sz_mean[i] += e.sz[i];
    parity_sum += e.szsz[0];
    parity_sq += e.szsz[0] * e.szsz[0];
    xy += e.sz[0] * e.sz[1];
  }
  for (double& v : res.sz_mean) v /= n_blocks;
  res.parity_mean = parity_sum / n_blocks;
  res.parity_std =
      std::sqrt(std::max(0.0, parity_sq / n_blocks - res.parity_mean * res.parity_mean));
  res.covariance = xy / n_blocks - res.sz_mean[0] * res.sz_mean[1];
  return res;
}

OdmrTraces run_odmr_demux(const ClusterModel& cluster,
                          std::span<const OdmrResonance> resonances,
                          std::span<const double> freq_grid, std::uint64_t shots,
                          Rng& rng) {
  if (cluster.size() != 2 || resonances.size() != 2)
    throw std::invalid_argument("ODMR demux is defined for N=2 clusters");

  // expected counts per joint charge config; peaks must be separated
  const double T = cluster.readout_time;
  std::vector<std::pair<double, std::size_t>> peaks;  // (mean counts, config)
  for (std::size_t c = 0; c < 4; ++c) {
    auto cfg = ChargeConfig::from_index(c, 2);
    double mean = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      mean += cluster.emitters[i].photon_rate(cfg[i]) * T;
    peaks.push_back({mean, c});
  }
  std::sort(peaks.begin(), peaks.end());
  for (std::size_t i = 1; i < peaks.size(); ++i)
    if (peaks[i].first - peaks[i - 1].first < 1.0)
      throw std::invalid_argument(
          "emitters indistinguishable by brightness; use the NN readout path");

  // digitization thresholds at the valleys of the equal-weight 4-peak pmf
  auto pmfs = cluster_conditional_pmfs(cluster);
  std::vector<double> w(4, 0.25);
  auto mix = mixture_pmf(pmfs, w);
  OdmrTraces out;
  for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
    int lo = static_cast<int>(std::floor(peaks[i].first));
    int hi = static_cast<int>(std::ceil(peaks[i + 1].first));
    int valley = lo;
    for (int nn = lo; nn <= hi && nn <= cluster.n_max; ++nn)
      if (mix[nn] < mix[valley]) valley = nn;
    out.thresholds.push_back(valley);
  }

  // peak bin 1 is the config where NV1 is dark (its rate dips when NV1's
  // spin flips and survives ionization); bin 2 reads NV2 likewise
  std::size_t cfg_bin1 = peaks[1].second;
  bool nv1_dark_in_bin1 =
      ChargeConfig::from_index(cfg_bin1, 2)[0] == ChargeState::kNeutral;

  std::uint64_t base = rng.engine()();
  out.freqs.assign(freq_grid.begin(), freq_grid.end());
  out.trace_nv1.assign(freq_grid.size(), 0.0);
  out.trace_nv2.assign(freq_grid.size(), 0.0);
  parallel_for(freq_grid.size(), [&](std::size_t f) {
    Rng stream = Rng::stream(base, f);
    std::vector<double> thetas(2);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& r = resonances[i];
      double hw = r.linewidth / 2.0;
      double det = freq_grid[f] - r.center;
      double p_flip = r.amplitude * hw * hw / (det * det + hw * hw);
      thetas[i] = 2.0 * std::asin(std::sqrt(p_flip));
    }
    auto label = rabi_label(thetas);
    std::uint64_t bin1 = 0, bin2 = 0;
    for (std::uint64_t s = 0; s < shots; ++s) {
      auto count = generate_shot(cluster, label, stream);
      int bin = 0;
      for (int thr : out.thresholds)
        if (count > static_cast<std::uint64_t>(thr)) ++bin;
      if (bin == 1) ++bin1;
      if (bin == 2) ++bin2;
    }
    double r1 = static_cast<double>(bin1) / shots;
    double r2 = static_cast<double>(bin2) / shots;
    out.trace_nv1[f] = nv1_dark_in_bin1 ? r1 : r2;
    out.trace_nv2[f] = nv1_dark_in_bin1 ? r2 : r1;
  });
  return out;
}

std::vector<ExperimentRecord> generate_rabi_dataset(const ClusterModel& cluster,
                                                    const DatasetOptions& options,
                                                    std::uint64_t id_base, Rng& rng) {
  std::vector<double> grid = options.theta_grid;
  if (grid.empty()) grid = {0.0, kPi / 4, kPi / 2, 3 * kPi / 4, kPi};
  const std::size_t n = cluster.size();

  double combos_d = std::pow(static_cast<double>(grid.size()), static_cast<double>(n));
  std::vector<std::vector<double>> points;
  if (combos_d <= static_cast<double>(options.max_points)) {
    std::size_t combos = static_cast<std::size_t>(combos_d + 0.5);
    for (std::size_t c = 0; c < combos; ++c) {
      std::vector<double> thetas(n);
      std::size_t rest = c;
      for (std::size_t i = 0; i < n; ++i) {
        thetas[i] = grid[rest % grid.size()];
        rest /= grid.size();
      }
      points.push_back(std::move(thetas));
    }
  } else {
    for (std::size_t c = 0; c < options.max_points; ++c) {
      std::vector<double> thetas(n);
      for (std::size_t i = 0; i < n; ++i)
        thetas[i] = grid[static_cast<std::size_t>(rng.uniform() * grid.size())];
      points.push_back(std::move(thetas));
    }
  }

  std::uint64_t base = rng.engine()();
  const std::size_t total = points.size() * options.hists_per_point;
  std::vector<ExperimentRecord> records(total);
  parallel_for(total, [&](std::size_t k) {
    const auto& thetas = points[k / options.hists_per_point];
    Rng stream = Rng::stream(base, k);
    ExperimentRecord rec;
    rec.truth = rabi_label(thetas);
    rec.thetas = thetas;
    rec.id = id_base + k;
    rec.hist = measure_histogram(cluster, rec.truth, options.shots, stream);
    records[k] = std::move(rec);
  });
  return records;
}

ClusterModel make_spread_cluster(int n_emitters, double spread,
                                 const EmitterParams& base, double readout_time,
                                 std::uint64_t seed) {
  if (n_emitters < 1) throw std::invalid_argument("need >= 1 emitter");
  if (spread < 0.0) throw std::invalid_argument("spread must be >= 0");

  std::vector<double> mult(n_emitters, 1.0);
  for (int i = 0; i < n_emitters; ++i) {
    double frac = n_emitters > 1 ? static_cast<double>(i) / (n_emitters - 1) : 0.5;
    mult[i] = 1.0 + spread * (0.5 - frac);  // descending across emitters
  }
  auto shuffled = [&](std::uint64_t salt) {
    auto m = mult;
    Rng r = Rng::stream(seed, salt);
    for (std::size_t i = m.size(); i > 1; --i)
      std::swap(m[i - 1], m[static_cast<std::size_t>(r.uniform() * i)]);
    return m;
  };
  auto ki_mult = shuffled(1);
  auto kr_mult = shuffled(2);

  std::vector<EmitterParams> emitters(n_emitters, base);
  for (int i = 0; i < n_emitters; ++i) {
    emitters[i].gamma_bright = base.gamma_bright * mult[i];
    emitters[i].gamma_dark = base.gamma_dark * mult[i];
    emitters[i].k_ion = base.k_ion * ki_mult[i];
    emitters[i].k_rec = base.k_rec * kr_mult[i];
  }
  auto cluster = ClusterModel::make(std::move(emitters), readout_time, -1);

  // joint-state bookkeeping grows as 2^N * n_max; refuse absurd requests
  double cells = std::pow(2.0, n_emitters) * (cluster.n_max + 1);
  if (cells > 5e7)
    throw TruncationError("scaling dataset exceeds the 2^N * n_max memory bound",
                          static_cast<int>(5e7 / std::pow(2.0, n_emitters)) - 1);
  return cluster;
}

ScalingDataset generate_scaling_dataset(int n_emitters, double spread,
                                        const EmitterParams& base, double readout_time,
                                        const DatasetOptions& train_options,
                                        const DatasetOptions& test_options,
                                        std::uint64_t basis_shots, Rng& rng) {
  ScalingDataset ds;
  std::uint64_t cluster_seed = rng.engine()();
  ds.cluster = make_spread_cluster(n_emitters, spread, base, readout_time, cluster_seed);
  ds.basis = generate_basis_dataset(ds.cluster, basis_shots, rng);
  ds.train = generate_rabi_dataset(ds.cluster, train_options, 1u << 20, rng);
  ds.test = generate_rabi_dataset(ds.cluster, test_options, 1u << 28, rng);
  return ds;
}

}  // namespace nvread
