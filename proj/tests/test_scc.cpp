#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "nvread/photon_stats.hpp"
#include "nvread/scc.hpp"
#include "test_util.hpp"

using namespace nvread;

namespace {

constexpr double kPi = 3.14159265358979323846;

EmitterParams realistic_nv(double gb, double gd, double ki, double kr) {
  EmitterParams p;
  p.gamma_bright = gb;
  p.gamma_dark = gd;
  p.k_ion = ki;
  p.k_rec = kr;
  p.p_init_neg = 0.9;
  p.p_shelf = 0.3;
  p.eta_ionize = 0.9;
  return p;
}

ClusterModel two_emitter_cluster() {
  // 2:1 brightness ratio, lambda = 40 / 20 at T = 1 ms
  auto nv1 = realistic_nv(4.0e4, 1.2e3, 500.0, 500.0);
  auto nv2 = realistic_nv(2.0e4, 0.6e3, 500.0, 500.0);
  return ClusterModel::make({nv1, nv2}, 1.0e-3, -1);
}

}  // namespace

TEST_CASE("scc_survival matches the branch arithmetic") {
  auto p = realistic_nv(4.0e4, 1.2e3, 500.0, 500.0);
  p.eta_ionize = 0.9;
  p.p_shelf = 0.3;
  CHECK(scc_survival(p, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(scc_survival(p, 1) == doctest::Approx(0.37).epsilon(1e-12));

  p.p_shelf = 0.0;
  CHECK(scc_survival(p, 0) == doctest::Approx(scc_survival(p, 1)).epsilon(1e-12));
}

TEST_CASE("scc_survival contrast has fixed sign") {
  Rng rng(41);
  for (int i = 0; i < 50; ++i) {
    auto p = realistic_nv(4.0e4, 1.0e3, 500.0, 500.0);
    p.p_shelf = 0.01 + 0.98 * rng.uniform();
    p.eta_ionize = 0.01 + 0.98 * rng.uniform();
    CHECK(scc_survival(p, 1) >= scc_survival(p, 0));
  }
}

TEST_CASE("spin labels validate") {
  auto l = SpinStateLabel::point_mass(2, 2);
  CHECK(l.probs == std::vector<double>{0.0, 0.0, 1.0, 0.0});
  CHECK(l.n_emitters() == 2);
  l.validate();

  SpinStateLabel bad;
  bad.probs = {0.5, 0.3, 0.2};  // not a power of two
  CHECK_THROWS(bad.validate());
  bad.probs = {0.7, 0.6, -0.3, 0.0};
  CHECK_THROWS(bad.validate());
  bad.probs = {0.7, 0.1, 0.1, 0.0};  // sums to 0.9
  CHECK_THROWS(bad.validate());
}

TEST_CASE("forced ionization reduces to the dark Poisson distribution") {
  auto nv1 = realistic_nv(4.0e4, 1.2e3, 0.0, 0.0);
  auto nv2 = realistic_nv(2.0e4, 0.6e3, 0.0, 0.0);
  nv1.eta_ionize = nv2.eta_ionize = 1.0;
  nv1.p_init_neg = nv2.p_init_neg = 1.0;
  auto cluster = ClusterModel::make({nv1, nv2}, 1.0e-3, -1);
  auto label = SpinStateLabel::point_mass(0, 2);  // spin 00, all ionized

  Rng rng(7);
  const std::size_t shots = 200000;
  auto hist = measure_histogram(cluster, label, shots, rng);

  double lambda = (nv1.gamma_dark + nv2.gamma_dark) * cluster.readout_time;
  auto model = poisson_pmf(lambda, cluster.n_max);

  int dof = 0;
  double stat = testutil::chi2_statistic(hist.counts, model, shots, &dof);
  CHECK(stat < testutil::chi2_critical(dof, 0.01));
}

TEST_CASE("fully protected 11 state reproduces the bright cluster pmf") {
  auto nv1 = realistic_nv(4.0e4, 1.2e3, 500.0, 500.0);
  auto nv2 = realistic_nv(2.0e4, 0.6e3, 500.0, 500.0);
  nv1.eta_ionize = nv2.eta_ionize = 1.0;
  nv1.p_shelf = nv2.p_shelf = 1.0;
  nv1.p_init_neg = nv2.p_init_neg = 1.0;
  auto cluster = ClusterModel::make({nv1, nv2}, 1.0e-3, -1);
  auto label = SpinStateLabel::point_mass(3, 2);  // spin 11, all shelved

  Rng rng(11);
  auto hist = measure_histogram(cluster, label, 200000, rng);
  auto pmfs = cluster_conditional_pmfs(cluster);
  auto bright = cluster_pmf(
      pmfs, ChargeConfig{{ChargeState::kNeg, ChargeState::kNeg}});
  CHECK(total_variation(hist.normalized(), bright) < 0.01);
}

TEST_CASE("00 and 11 histograms are distinguishable at realistic params") {
  auto cluster = two_emitter_cluster();
  Rng rng(13);
  auto h00 = measure_histogram(cluster, SpinStateLabel::point_mass(0, 2), 10000, rng);
  auto h11 = measure_histogram(cluster, SpinStateLabel::point_mass(3, 2), 10000, rng);
  CHECK(total_variation(h00.normalized(), h11.normalized()) > 0.1);
}

TEST_CASE("double-negative initialization probability matches 0.63^2") {
  // eta_ionize = 0 keeps every initialized NV- negative through readout,
  // so the fraction of shots initialized doubly negative is p_init_neg^2
  auto nv = realistic_nv(4.0e4, 0.0, 0.0, 0.0);
  nv.eta_ionize = 0.0;
  nv.p_init_neg = 0.63;
  auto cluster = ClusterModel::make({nv, nv}, 1.0e-3, -1);
  auto label = SpinStateLabel::point_mass(0, 2);

  Rng rng(17);
  const int shots = 100000;
  int both = 0;
  for (int i = 0; i < shots; ++i)
    if (generate_shot(cluster, label, rng) > 60) ++both;  // both-bright peak at 80
  double frac = static_cast<double>(both) / shots;
  CHECK(frac == doctest::Approx(0.63 * 0.63).epsilon(0.02));
  CHECK(frac == doctest::Approx(0.40).epsilon(0.03));
}

TEST_CASE("basis dataset covers every joint state") {
  auto cluster = two_emitter_cluster();
  Rng rng(19);
  auto records = generate_basis_dataset(cluster, 2000, rng);
  REQUIRE(records.size() == 4);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(records[s].truth.probs[s] == 1.0);
    CHECK(records[s].hist.total_shots == 2000);
    CHECK(records[s].id == s);
  }
  CHECK(records[1].thetas == std::vector<double>{0.0, kPi});
  CHECK(records[2].thetas == std::vector<double>{kPi, 0.0});

  // 2:1 brightness ratio makes 01 and 10 distinguishable
  CHECK(total_variation(records[1].hist.normalized(), records[2].hist.normalized()) >
        0.02);

  auto nv3 = ClusterModel::make({cluster.emitters[0], cluster.emitters[1],
                                 realistic_nv(1.0e4, 0.3e3, 500.0, 500.0)},
                                1.0e-3, -1);
  CHECK(generate_basis_dataset(nv3, 1000, rng).size() == 8);
  CHECK_THROWS(generate_basis_dataset(cluster, 500, rng));
}

TEST_CASE("rabi labels: endpoints, uniform point, and 2pi wrap") {
  std::vector<double> t00{0.0, 0.0};
  CHECK(rabi_label(t00).probs == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  std::vector<double> tpp{kPi, kPi};
  auto l11 = rabi_label(tpp);
  CHECK(l11.probs[3] == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> th{kPi / 2, kPi / 2};
  auto lu = rabi_label(th);
  for (double p : lu.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  for (double theta : {0.3, 0.9, 1.7, 2.5, 3.0}) {
    std::vector<double> a{theta, 0.5};
    std::vector<double> b{2 * kPi - theta, 0.5};
    auto la = rabi_label(a), lb = rabi_label(b);
    for (std::size_t i = 0; i < la.probs.size(); ++i)
      CHECK(la.probs[i] == doctest::Approx(lb.probs[i]).epsilon(1e-12));
  }

  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> t{rng.uniform() * kPi, rng.uniform() * kPi,
                          rng.uniform() * kPi};
    auto l = rabi_label(t);
    l.validate();
  }
}

TEST_CASE("expectations on point masses and the uniform label") {
  auto e00 = expectations(SpinStateLabel::point_mass(0, 2));
  CHECK(e00.sz == std::vector<double>{0.5, 0.5});
  CHECK(e00.szsz == std::vector<double>{0.25});

  auto e01 = expectations(SpinStateLabel::point_mass(1, 2));
  CHECK(e01.sz == std::vector<double>{0.5, -0.5});
  CHECK(e01.szsz == std::vector<double>{-0.25});

  std::vector<double> th{kPi / 2, kPi / 2};
  auto eu = expectations(rabi_label(th));
  CHECK(eu.sz[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(eu.sz[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(eu.szsz[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("expectations is linear in the label") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    SpinStateLabel a, b;
    a.probs.resize(8);
    b.probs.resize(8);
    double sa = 0, sb = 0;
    for (int i = 0; i < 8; ++i) {
      a.probs[i] = rng.uniform();
      b.probs[i] = rng.uniform();
      sa += a.probs[i];
      sb += b.probs[i];
    }
    for (int i = 0; i < 8; ++i) {
      a.probs[i] /= sa;
      b.probs[i] /= sb;
    }
    double alpha = rng.uniform();
    SpinStateLabel mix;
    mix.probs.resize(8);
    for (int i = 0; i < 8; ++i)
      mix.probs[i] = alpha * a.probs[i] + (1 - alpha) * b.probs[i];

    auto ea = expectations(a), eb = expectations(b), em = expectations(mix);
    for (std::size_t i = 0; i < em.sz.size(); ++i)
      CHECK(em.sz[i] ==
            doctest::Approx(alpha * ea.sz[i] + (1 - alpha) * eb.sz[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < em.szsz.size(); ++i)
      CHECK(em.szsz[i] ==
            doctest::Approx(alpha * ea.szsz[i] + (1 - alpha) * eb.szsz[i])
                .epsilon(1e-9));
  }
}

TEST_CASE("oracle tomography reproduces the analytic Rabi curves") {
  auto cluster = two_emitter_cluster();
  std::vector<double> thetas{0.0, kPi / 4, kPi / 2, 3 * kPi / 4, kPi};
  Rng rng(31);
  auto rows = run_rabi_tomography(cluster, oracle_readout(), thetas, 4, 100, rng);
  REQUIRE(rows.size() == thetas.size());
  for (const auto& row : rows) {
    double sz = std::cos(row.theta) / 2.0;
    double pair = std::cos(row.theta) * std::cos(row.theta) / 4.0;
    CHECK(row.mean.sz[0] == doctest::Approx(sz).epsilon(1e-9));
    CHECK(row.mean.sz[1] == doctest::Approx(sz).epsilon(1e-9));
    CHECK(row.mean.szsz[0] == doctest::Approx(pair).epsilon(1e-9));
    CHECK(row.stddev.sz[0] == doctest::Approx(0.0).epsilon(1e-9));
    // parity stays non-negative under the oracle, zero at pi/2
    CHECK(row.mean.szsz[0] >= -row.stddev.szsz[0] - 1e-12);
  }
  CHECK(rows[2].mean.szsz[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ideal correlated sensing gives zero means and +-1/4 parity") {
  auto cluster = two_emitter_cluster();
  Rng rng(37);
  auto res = run_correlated_sensing(cluster, oracle_readout(), 400, 100, false, rng);
  CHECK(res.blocks == 400);
  // per-block sz is +-1/2 equally likely; 3 sigma over 400 blocks = 0.075
  CHECK(std::abs(res.sz_mean[0]) < 0.075);
  CHECK(std::abs(res.sz_mean[1]) < 0.075);
  CHECK(res.parity_mean == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(res.parity_std == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(res.covariance == doctest::Approx(0.25).epsilon(0.05));

  Rng rng2(38);
  auto anti = run_correlated_sensing(cluster, oracle_readout(), 400, 100, true, rng2);
  CHECK(anti.parity_mean == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(anti.covariance == doctest::Approx(-0.25).epsilon(0.05));
}

TEST_CASE("odmr demux separates the two resonances") {
  // milder ionization keeps the intermediate peaks populated (that is what
  // makes the occurrence-rate traces responsive) and slow switching keeps
  // the four peaks resolved during readout
  auto nv1 = realistic_nv(4.0e4, 1.2e3, 50.0, 50.0);
  auto nv2 = realistic_nv(2.0e4, 0.6e3, 50.0, 50.0);
  nv1.eta_ionize = nv2.eta_ionize = 0.5;
  nv1.p_shelf = nv2.p_shelf = 0.6;
  nv1.p_init_neg = nv2.p_init_neg = 0.95;
  auto cluster = ClusterModel::make({nv1, nv2}, 1.0e-3, -1);

  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(2.80 + 0.005 * i);  // 2.80-3.00 GHz
  const std::uint64_t shots = 8000;
  const double noise = std::sqrt(0.25 / static_cast<double>(shots));

  SUBCASE("zero flip amplitude gives flat traces") {
    std::vector<OdmrResonance> res{{2.85, 0.01, 0.0}, {2.95, 0.01, 0.0}};
    Rng rng(43);
    auto traces = run_odmr_demux(cluster, res, grid, shots, rng);
    REQUIRE(traces.thresholds.size() == 3);
    auto spread = [](const std::vector<double>& v) {
      auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      return *hi - *lo;
    };
    CHECK(spread(traces.trace_nv1) < 8.0 * noise);
    CHECK(spread(traces.trace_nv2) < 8.0 * noise);
  }

  SUBCASE("only emitter 1 resonant dips only trace 1") {
    std::vector<OdmrResonance> res{{2.87, 0.012, 0.95}, {5.0, 0.012, 0.95}};
    Rng rng(47);
    auto traces = run_odmr_demux(cluster, res, grid, shots, rng);

    auto at = [&](const std::vector<double>& v, double f) {
      std::size_t best = 0;
      for (std::size_t i = 0; i < grid.size(); ++i)
        if (std::abs(grid[i] - f) < std::abs(grid[best] - f)) best = i;
      return v[best];
    };
    double off1 = 0.5 * (at(traces.trace_nv1, 2.80) + at(traces.trace_nv1, 3.00));
    double off2 = 0.5 * (at(traces.trace_nv2, 2.80) + at(traces.trace_nv2, 3.00));
    CHECK(off1 - at(traces.trace_nv1, 2.87) > 5.0 * noise);
    // trace 2 bumps at the foreign resonance but never dips below baseline
    double min2 = *std::min_element(traces.trace_nv2.begin(), traces.trace_nv2.end());
    CHECK(off2 - min2 < 5.0 * noise);
  }

  SUBCASE("both resonant gives one dip per trace") {
    std::vector<OdmrResonance> res{{2.85, 0.012, 0.95}, {2.95, 0.012, 0.95}};
    Rng rng(53);
    auto traces = run_odmr_demux(cluster, res, grid, shots, rng);
    auto argmin = [&](const std::vector<double>& v) {
      return grid[std::min_element(v.begin(), v.end()) - v.begin()];
    };
    CHECK(argmin(traces.trace_nv1) == doctest::Approx(2.85).epsilon(0.01));
    CHECK(argmin(traces.trace_nv2) == doctest::Approx(2.95).epsilon(0.01));
  }

  SUBCASE("identical emitters are rejected") {
    auto nv = realistic_nv(4.0e4, 1.2e3, 500.0, 500.0);
    auto same = ClusterModel::make({nv, nv}, 1.0e-3, -1);
    std::vector<OdmrResonance> res{{2.85, 0.01, 0.5}, {2.95, 0.01, 0.5}};
    Rng rng(59);
    CHECK_THROWS(run_odmr_demux(same, res, grid, 1000, rng));
  }
}

TEST_CASE("rabi dataset enumerates the product grid deterministically") {
  auto cluster = two_emitter_cluster();
  DatasetOptions opts;
  opts.theta_grid = {0.0, kPi / 2, kPi};
  opts.hists_per_point = 2;
  opts.shots = 500;
  Rng rng(61);
  auto ds = generate_rabi_dataset(cluster, opts, 1000, rng);
  REQUIRE(ds.size() == 9 * 2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds[i].id == 1000 + i);
    ds[i].truth.validate();
    CHECK(ds[i].hist.total_shots == opts.shots);
  }

  Rng rng2(61);
  auto ds2 = generate_rabi_dataset(cluster, opts, 1000, rng2);
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(ds[i].hist.counts == ds2[i].hist.counts);

  opts.max_points = 5;  // force random subsetting
  Rng rng3(67);
  auto sub = generate_rabi_dataset(cluster, opts, 0, rng3);
  CHECK(sub.size() == 5 * 2);
}

TEST_CASE("spread-zero clusters are exchange symmetric") {
  auto base = realistic_nv(3.0e4, 0.9e3, 500.0, 500.0);
  auto cluster = make_spread_cluster(2, 0.0, base, 1.0e-3, 71);
  CHECK(cluster.emitters[0].gamma_bright ==
        doctest::Approx(cluster.emitters[1].gamma_bright));

  Rng rng(73);
  auto records = generate_basis_dataset(cluster, 20000, rng);
  // 01 and 10 identical up to sampling noise; TV of two iid empirical pmfs
  // concentrates around sqrt(bins / (2 pi shots)) per bin summed — bound it
  // loosely at 3x that scale
  double tv =
      total_variation(records[1].hist.normalized(), records[2].hist.normalized());
  double bound = 3.0 * std::sqrt(static_cast<double>(cluster.n_max) / 20000.0);
  CHECK(tv < bound);
}

TEST_CASE("spread clusters separate basis states at N=3") {
  auto base = realistic_nv(2.5e4, 0.75e3, 500.0, 500.0);
  auto cluster = make_spread_cluster(3, 0.5, base, 1.0e-3, 79);
  CHECK(cluster.emitters[0].gamma_bright > cluster.emitters[2].gamma_bright);
  CHECK(cluster.emitters[0].gamma_bright / cluster.emitters[2].gamma_bright ==
        doctest::Approx(1.25 / 0.75).epsilon(1e-9));

  Rng rng(83);
  auto records = generate_basis_dataset(cluster, 4000, rng);
  REQUIRE(records.size() == 8);
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = a + 1; b < 8; ++b)
      CHECK(total_variation(records[a].hist.normalized(),
                            records[b].hist.normalized()) > 0.0);
}

TEST_CASE("scaling dataset bundles cluster, basis, train, and test") {
  auto base = realistic_nv(2.0e4, 0.6e3, 500.0, 500.0);
  DatasetOptions train_opts, test_opts;
  train_opts.theta_grid = {0.0, kPi};
  train_opts.hists_per_point = 2;
  train_opts.shots = 500;
  test_opts = train_opts;
  test_opts.hists_per_point = 1;

  Rng rng(89);
  auto ds = generate_scaling_dataset(2, 2.0 / 3.0, base, 1.0e-3, train_opts,
                                     test_opts, 1000, rng);
  CHECK(ds.cluster.size() == 2);
  // default spread of 2/3 yields a 2:1 brightness ratio
  CHECK(ds.cluster.emitters[0].gamma_bright / ds.cluster.emitters[1].gamma_bright ==
        doctest::Approx(2.0).epsilon(1e-9));
  CHECK(ds.basis.size() == 4);
  CHECK(ds.train.size() == 4 * 2);
  CHECK(ds.test.size() == 4);

  // train and test ids never collide
  for (const auto& tr : ds.train)
    for (const auto& te : ds.test) CHECK(tr.id != te.id);
}
