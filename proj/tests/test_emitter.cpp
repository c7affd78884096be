#include <cmath>

#include "doctest.h"
#include "nvread/emitter.hpp"
#include "nvread/photon_stats.hpp"
#include "test_util.hpp"

using namespace nvread;

namespace {

EmitterParams realistic_nv() {
  EmitterParams p;
  p.gamma_bright = 1e5;
  p.gamma_dark = 1e3;
  p.k_ion = 50.0;
  p.k_rec = 10.0;
  return p;
}

}  // namespace

TEST_CASE("parameter validation rejects bad values") {
  EmitterParams p = realistic_nv();
  p.k_ion = std::nan("");
  Rng rng(1);
  CHECK_THROWS_AS(sample_charge_trajectory(p, ChargeState::kNeg, 1.0, rng),
                  std::invalid_argument);
  p = realistic_nv();
  p.gamma_dark = 2e5;  // brighter than bright state
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = realistic_nv();
  p.p_shelf = 1.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("no switching gives a single full-length segment") {
  EmitterParams p;
  p.gamma_bright = 10.0;
  Rng rng(7);
  auto traj = sample_charge_trajectory(p, ChargeState::kNeg, 1.0, rng);
  REQUIRE(traj.size() == 1);
  CHECK(traj[0].state == ChargeState::kNeg);
  CHECK(traj[0].dwell == 1.0);
}

TEST_CASE("huge ionization rate flips the state almost immediately") {
  EmitterParams p;
  p.gamma_bright = 1.0;
  p.k_ion = 1e9;
  int ended_neutral = 0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(1000 + i);
    auto traj = sample_charge_trajectory(p, ChargeState::kNeg, 1.0, rng);
    CHECK(traj[0].dwell < 1e-6);
    if (traj.back().state == ChargeState::kNeutral) ++ended_neutral;
  }
  CHECK(ended_neutral == 100);
}

TEST_CASE("dwell times are positive and sum exactly to T") {
  EmitterParams p = realistic_nv();
  p.k_ion = 500.0;
  p.k_rec = 300.0;
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    auto traj = sample_charge_trajectory(p, ChargeState::kNeg, 0.05, rng);
    double sum = 0.0;
    for (std::size_t s = 0; s < traj.size(); ++s) {
      CHECK(traj[s].dwell > 0.0);
      if (s > 0) CHECK(traj[s].state != traj[s - 1].state);
      sum += traj[s].dwell;
    }
    CHECK(sum == doctest::Approx(0.05).epsilon(1e-12));
  }
}

TEST_CASE("end-state occupancy matches the two-state closed form") {
  EmitterParams p;
  p.gamma_bright = 1.0;
  p.k_ion = 50.0;
  p.k_rec = 10.0;
  const double T = 0.01;
  const int n = 1000000;
  Rng rng(99);
  int neutral = 0;
  for (int i = 0; i < n; ++i) {
    auto traj = sample_charge_trajectory(p, ChargeState::kNeg, T, rng);
    if (traj.back().state == ChargeState::kNeutral) ++neutral;
  }
  double expect = neutral_occupancy(p, ChargeState::kNeg, T);
  double sigma = std::sqrt(expect * (1.0 - expect) / n);
  CHECK(std::abs(static_cast<double>(neutral) / n - expect) < 3.0 * sigma);
}

TEST_CASE("zero-switching counts are Poisson") {
  EmitterParams p;
  p.gamma_bright = 2.0;
  Rng rng(5);
  const int shots = 1000000;
  Histogram h(30);
  for (int i = 0; i < shots; ++i) h.add(sample_counts(p, ChargeState::kNeg, 1.0, rng));
  auto emp = h.normalized();
  CHECK(emp[0] == doctest::Approx(std::exp(-2.0)).epsilon(0.01));

  int dof = 0;
  double stat = testutil::chi2_statistic(h.counts, poisson_pmf(2.0, 30), shots, &dof);
  CHECK(stat < testutil::chi2_critical(dof, 0.01));
}

TEST_CASE("zero readout time gives zero counts") {
  Rng rng(3);
  CHECK(sample_counts(realistic_nv(), ChargeState::kNeg, 0.0, rng) == 0);
}

TEST_CASE("cluster counts add independent Poissons") {
  EmitterParams a, b;
  a.gamma_bright = 1.0;
  b.gamma_bright = 2.0;
  auto cluster = ClusterModel::make({a, b}, 1.0, 30);
  ChargeConfig both_neg = ChargeConfig::from_index(0, 2);
  Rng rng(11);
  auto emp = testutil::empirical_pmf(
      [&] { return sample_cluster_counts(cluster, both_neg, rng); }, 500000, 30);
  CHECK(emp[0] == doctest::Approx(std::exp(-3.0)).epsilon(0.03));
  CHECK(total_variation(emp, poisson_pmf(3.0, 30)) < 0.005);
}

TEST_CASE("single-emitter cluster reduces to sample_counts") {
  auto cluster = ClusterModel::make({realistic_nv()}, 1e-3, 200);
  ChargeConfig neg = ChargeConfig::from_index(0, 1);
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i)
    CHECK(sample_cluster_counts(cluster, neg, a) ==
          sample_counts(realistic_nv(), ChargeState::kNeg, 1e-3, b));
}

TEST_CASE("mismatched charge config length is rejected") {
  auto cluster = ClusterModel::make({realistic_nv()}, 1e-3, 200);
  Rng rng(1);
  CHECK_THROWS_AS(sample_cluster_counts(cluster, ChargeConfig::from_index(0, 2), rng),
                  std::invalid_argument);
}

TEST_CASE("2:1 brightness pair yields a four-peak histogram") {
  EmitterParams nv1 = realistic_nv();
  EmitterParams nv2 = realistic_nv();
  nv2.gamma_bright = 5e4;
  nv2.gamma_dark = 5e2;
  auto cluster = ClusterModel::make({nv1, nv2}, 1e-3, -1);
  Rng rng(2024);
  // mix over all four initial charge configs so all peaks are populated
  std::vector<double> emp(cluster.n_max + 1, 0.0);
  const int shots = 200000;
  for (int i = 0; i < shots; ++i) {
    auto cfg = ChargeConfig::from_index(i % 4, 2);
    auto n = sample_cluster_counts(cluster, cfg, rng);
    if (n <= static_cast<std::uint64_t>(cluster.n_max)) emp[n] += 1.0 / shots;
  }
  int window = static_cast<int>(std::sqrt(150.0));  // ~sqrt(lambda) smoothing
  CHECK(testutil::count_modes(emp, window, 1e-3) == 4);
}

TEST_CASE("same seed replays the identical trajectory and counts") {
  EmitterParams p = realistic_nv();
  p.k_ion = 2000.0;
  p.k_rec = 1500.0;
  Rng r1(77), r2(77);
  auto t1 = sample_charge_trajectory(p, ChargeState::kNeg, 1e-3, r1);
  auto t2 = sample_charge_trajectory(p, ChargeState::kNeg, 1e-3, r2);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].state == t2[i].state);
    CHECK(t1[i].dwell == t2[i].dwell);
  }
  CHECK(sample_counts(p, ChargeState::kNeg, 1e-3, r1) ==
        sample_counts(p, ChargeState::kNeg, 1e-3, r2));
}

TEST_CASE("histogram invariants") {
  Histogram h(10);
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) h.add(rng.poisson(3.0));
  std::uint64_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == h.total_shots);
  double sum = 0.0;
  for (double v : h.normalized()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}
