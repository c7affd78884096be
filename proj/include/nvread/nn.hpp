#ifndef NVREAD_NN_HPP
#define NVREAD_NN_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvread/scc.hpp"

namespace nvread {

// One training example: shot-normalized histogram and the joint spin
// probability target.
struct Sample {
  std::vector<double> x;
  std::vector<double> y;
  std::uint64_t id = 0;
};

std::vector<Sample> to_samples(std::span<const ExperimentRecord> records);

// Throws if any id appears in both sets ("training and test data are kept
// separate" is enforced, not assumed).
void check_disjoint(std::span<const Sample> train, std::span<const Sample> test);

struct DenseLayer {
  int in = 0, out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

struct ConvLayer {
  int kernel = 0, channels = 0;
  std::vector<double> w;  // channels x kernel
  std::vector<double> b;  // channels
};

// hist (n_max+1) -> conv/ReLU -> maxpool -> dense/ReLU -> dense/ReLU ->
// linear output over the 2^N joint basis.
struct ReadoutModel {
  int input_len = 0;
  int pool = 2;
  ConvLayer conv;
  DenseLayer dense1, dense2, output;

  static ReadoutModel make(int input_len, int n_outputs, std::uint64_t seed,
                           int kernel = 5, int channels = 8, int pool = 2,
                           int hidden1 = 64, int hidden2 = 32);

  int conv_len() const { return input_len - conv.kernel + 1; }
  int pooled_len() const { return conv_len() / pool; }
  int flat_len() const { return pooled_len() * conv.channels; }
  int n_outputs() const { return output.out; }

  // Raw regression output; thread-safe on a const model.
  std::vector<double> forward_raw(std::span<const double> input) const;
  // Raw output clamped to [0,1] and renormalized into a valid label.
  SpinStateLabel forward(std::span<const double> input) const;
};

SpinStateLabel calibrate_output(std::span<const double> raw);

// Mean squared error over batch and components plus lambda * sum w^2 over
// all weight tensors (biases excluded).
double weight_penalty(const ReadoutModel& model);
double loss(std::span<const std::vector<double>> predictions,
            std::span<const std::vector<double>> labels, const ReadoutModel& model,
            double lambda);

// Gradient of the single-sample loss (squared error mean over components;
// the L2 term is added by the caller via weight_penalty's gradient 2*lambda*w).
// Mirrors the model's parameter layout.
struct Gradients {
  ConvLayer conv;
  DenseLayer dense1, dense2, output;
};

double backward(const ReadoutModel& model, std::span<const double> input,
                std::span<const double> target, Gradients& grads);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 2000;
  int batch_size = 32;
  double lambda = 1e-4;
  std::uint64_t seed = 0;
  int patience = 100;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss;  // per completed epoch
  std::vector<double> val_loss;
  int best_epoch = -1;
  bool early_stopped = false;
};

// Adam minimization of MSE + L2; deterministic given seed (seeded shuffle,
// fixed summation order). Keeps the best-validation weights. Throws on NaN
// loss with learning-rate guidance.
TrainReport train(ReadoutModel& model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config);

struct Pearson {
  double r = 0.0;
  bool degenerate = false;
};

Pearson pearson(std::span<const double> a, std::span<const double> b);

// Flattened over all output components of all samples; model predictions
// are the calibrated labels.
Pearson evaluate(const ReadoutModel& model, std::span<const Sample> test_set);
std::vector<Pearson> evaluate_per_component(const ReadoutModel& model,
                                            std::span<const Sample> test_set);

// Readout adapter for the experiment drivers.
Readout model_readout(const ReadoutModel& model);

void save_model(const ReadoutModel& model, const std::string& path);
ReadoutModel load_model(const std::string& path);

struct ScalingRow {
  int n_emitters = 0;
  Pearson r;
  std::string error;  // training failure, recorded; study continues
};

// One model per dataset with identical hyperparameters; validation split
// taken from the tail of each training set.
std::vector<ScalingRow> run_scaling_study(std::span<const ScalingDataset> datasets,
                                          const TrainConfig& config);

}  // namespace nvread

#endif  // NVREAD_NN_HPP
