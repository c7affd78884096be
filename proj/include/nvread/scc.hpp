#ifndef NVREAD_SCC_HPP
#define NVREAD_SCC_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nvread/emitter.hpp"
#include "nvread/rng.hpp"

namespace nvread {

// Joint spin-state probability vector over the 2^N basis states, ordered
// lexicographically with emitter 0 as the most significant digit
// (N=2: 00, 01, 10, 11).
struct SpinStateLabel {
  std::vector<double> probs;

  static SpinStateLabel point_mass(std::size_t basis_index, std::size_t n_emitters);
  std::size_t n_emitters() const;
  void validate() const;
};

// Probability the emitter is still NV- after the spin-to-charge sequence:
// spin 1 is shelved in the metastable singlet with probability p_shelf and
// thereby protected from the ionization pulse.
double scc_survival(const EmitterParams& params, int spin);

// One full shot: sample joint spin from the label, charge-initialize each
// emitter, apply SCC, read out the cluster charge state as photon counts.
std::uint64_t generate_shot(const ClusterModel& cluster, const SpinStateLabel& label,
                            Rng& rng);

// Repeated generate_shot into a histogram at the cluster's n_max.
Histogram measure_histogram(const ClusterModel& cluster, const SpinStateLabel& label,
                            std::uint64_t shots, Rng& rng);

struct ExperimentRecord {
  SpinStateLabel truth;
  Histogram hist;
  std::vector<double> thetas;  // rotation angle per emitter, radians
  std::uint64_t id = 0;        // unique within a dataset; seeds the RNG stream
};

// One histogram per joint spin basis state.
std::vector<ExperimentRecord> generate_basis_dataset(const ClusterModel& cluster,
                                                     std::uint64_t shots_per_state,
                                                     Rng& rng);

// Independent-product state after per-emitter rotations by theta:
// p(spin=1) = sin^2(theta/2).
SpinStateLabel rabi_label(std::span<const double> thetas);

struct Expectations {
  std::vector<double> sz;    // <Sz_i>, eigenvalues +-1/2
  std::vector<double> szsz;  // <Sz_i Sz_j> for pairs i<j, lexicographic
};

Expectations expectations(const SpinStateLabel& label);

// State estimator: trained model, or an oracle that returns the record's
// ground truth.
using Readout = std::function<SpinStateLabel(const ExperimentRecord&)>;

Readout oracle_readout();

struct TomographyRow {
  double theta = 0.0;
  Expectations mean;
  Expectations stddev;
};

// Rotate all emitters jointly by each theta, measure hists_per_theta
// histograms, estimate each, and report mean and standard deviation of the
// per-histogram expectation values.
std::vector<TomographyRow> run_rabi_tomography(const ClusterModel& cluster,
                                               const Readout& readout,
                                               std::span<const double> thetas,
                                               int hists_per_theta,
                                               std::uint64_t shots_per_hist, Rng& rng);

struct SensingResult {
  std::vector<double> sz_mean;  // per-emitter mean over blocks
  double parity_mean = 0.0;     // mean of per-block <Sz_0 Sz_1>
  double parity_std = 0.0;
  double covariance = 0.0;      // cov of per-block (sz_0, sz_1) estimates
  int blocks = 0;
};

// Correlated zero-mean signal: each block applies jointly theta = 0 or pi
// with probability 1/2 (anticorrelated: opposite pulses on the two
// emitters). Single-spin means vanish; the parity channel keeps the signal.
SensingResult run_correlated_sensing(const ClusterModel& cluster,
                                     const Readout& readout, int n_blocks,
                                     std::uint64_t shots_per_block, bool anticorrelated,
                                     Rng& rng);

struct OdmrResonance {
  double center = 0.0;     // probed-frequency units
  double linewidth = 0.0;  // FWHM of the Lorentzian flip profile
  double amplitude = 0.0;  // on-resonance spin-flip probability
};

struct OdmrTraces {
  std::vector<double> freqs;
  std::vector<double> trace_nv1;  // occurrence rate of the peak that dips at
  std::vector<double> trace_nv2;  // the corresponding emitter's resonance
  std::vector<int> thresholds;    // count-valley digitization boundaries
};

// Demultiplexed ODMR for an N=2 cluster: shots are digitized into the four
// charge-state peaks by pmf-valley thresholds; the two intermediate-peak
// occurrence traces read out the two spins individually.
OdmrTraces run_odmr_demux(const ClusterModel& cluster,
                          std::span<const OdmrResonance> resonances,
                          std::span<const double> freq_grid, std::uint64_t shots,
                          Rng& rng);

struct DatasetOptions {
  std::vector<double> theta_grid;  // per-axis angles; empty = {0..pi} in pi/4 steps
  int hists_per_point = 64;
  std::uint64_t shots = 10000;
  std::size_t max_points = 400;  // random subset of the product grid beyond this
};

// Rabi-grid training data: every product combination of theta_grid across
// emitters (or a random subset when the grid explodes), hists_per_point
// histograms per combination. Records get sequential unique ids starting
// at id_base.
std::vector<ExperimentRecord> generate_rabi_dataset(const ClusterModel& cluster,
                                                    const DatasetOptions& options,
                                                    std::uint64_t id_base, Rng& rng);

struct ScalingDataset {
  ClusterModel cluster;
  std::vector<ExperimentRecord> basis;
  std::vector<ExperimentRecord> train;
  std::vector<ExperimentRecord> test;
};

// Cluster of n emitters whose brightness and switching rates are spread
// around base by the given relative dispersion (evenly spaced multipliers,
// shuffled per channel so brightness and rate orderings differ).
ClusterModel make_spread_cluster(int n_emitters, double spread,
                                 const EmitterParams& base, double readout_time,
                                 std::uint64_t seed);

ScalingDataset generate_scaling_dataset(int n_emitters, double spread,
                                        const EmitterParams& base, double readout_time,
                                        const DatasetOptions& train_options,
                                        const DatasetOptions& test_options,
                                        std::uint64_t basis_shots, Rng& rng);

}  // namespace nvread

#endif  // NVREAD_SCC_HPP
