#include "nvread/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "nvread/rng.hpp"

namespace nvread {

namespace {

void zero(Gradients& g, const ReadoutModel& m) {
  g.conv = m.conv;
  g.dense1 = m.dense1;
  g.dense2 = m.dense2;
  g.output = m.output;
  for (auto* layer : {&g.dense1, &g.dense2, &g.output}) {
    std::fill(layer->w.begin(), layer->w.end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }
  std::fill(g.conv.w.begin(), g.conv.w.end(), 0.0);
  std::fill(g.conv.b.begin(), g.conv.b.end(), 0.0);
}

struct ParamRef {
  double* value;
  double* grad;
  bool is_weight;
};

std::vector<ParamRef> param_refs(ReadoutModel& m, Gradients& g) {
  std::vector<ParamRef> refs;
  auto add = [&](std::vector<double>& v, std::vector<double>& gv, bool is_weight) {
    for (std::size_t i = 0; i < v.size(); ++i) refs.push_back({&v[i], &gv[i], is_weight});
  };
  add(m.conv.w, g.conv.w, true);
  add(m.conv.b, g.conv.b, false);
  add(m.dense1.w, g.dense1.w, true);
  add(m.dense1.b, g.dense1.b, false);
  add(m.dense2.w, g.dense2.w, true);
  add(m.dense2.b, g.dense2.b, false);
  add(m.output.w, g.output.w, true);
  add(m.output.b, g.output.b, false);
  return refs;
}

// Activations kept for backpropagation.
struct ForwardCache {
  std::vector<double> conv_pre;   // channels x conv_len, pre-ReLU
  std::vector<double> flat;       // pooled ReLU activations, channel-major
  std::vector<int> argmax;        // winning conv index per pooled cell
  std::vector<double> h1_pre, h1;
  std::vector<double> h2_pre, h2;
  std::vector<double> out;
};

void dense_forward(const DenseLayer& d, std::span<const double> x,
                   std::vector<double>& pre) {
  pre.assign(d.out, 0.0);
  for (int o = 0; o < d.out; ++o) {
    double acc = d.b[o];
    const double* row = &d.w[static_cast<std::size_t>(o) * d.in];
    for (int i = 0; i < d.in; ++i) acc += row[i] * x[i];
    pre[o] = acc;
  }
}

void run_forward(const ReadoutModel& m, std::span<const double> x, ForwardCache& c) {
  const int cl = m.conv_len();
  const int ch = m.conv.channels;
  const int k = m.conv.kernel;
  c.conv_pre.assign(static_cast<std::size_t>(ch) * cl, 0.0);
  for (int o = 0; o < ch; ++o) {
    const double* w = &m.conv.w[static_cast<std::size_t>(o) * k];
    for (int t = 0; t < cl; ++t) {
      double acc = m.conv.b[o];
      for (int j = 0; j < k; ++j) acc += w[j] * x[t + j];
      c.conv_pre[static_cast<std::size_t>(o) * cl + t] = acc;
    }
  }
  const int pl = m.pooled_len();
  c.flat.assign(static_cast<std::size_t>(ch) * pl, 0.0);
  c.argmax.assign(static_cast<std::size_t>(ch) * pl, 0);
  for (int o = 0; o < ch; ++o) {
    for (int p = 0; p < pl; ++p) {
      int base = p * m.pool;
      int best = base;
      double bv = c.conv_pre[static_cast<std::size_t>(o) * cl + base];
      for (int j = 1; j < m.pool; ++j) {
        double v = c.conv_pre[static_cast<std::size_t>(o) * cl + base + j];
        if (v > bv) {
          bv = v;
          best = base + j;
        }
      }
      c.argmax[static_cast<std::size_t>(o) * pl + p] = best;
      c.flat[static_cast<std::size_t>(o) * pl + p] = bv > 0.0 ? bv : 0.0;  // ReLU
    }
  }
  dense_forward(m.dense1, c.flat, c.h1_pre);
  c.h1 = c.h1_pre;
  for (double& v : c.h1) v = v > 0.0 ? v : 0.0;
  dense_forward(m.dense2, c.h1, c.h2_pre);
  c.h2 = c.h2_pre;
  for (double& v : c.h2) v = v > 0.0 ? v : 0.0;
  dense_forward(m.output, c.h2, c.out);
}

void check_input(const ReadoutModel& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.input_len)
    throw std::invalid_argument("input length does not match model");
  double sum = std::accumulate(x.begin(), x.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("input histogram must be normalized to unit mass");
}

// Backprop through a dense layer: accumulates weight/bias grads and returns
// the gradient w.r.t. its input.
std::vector<double> dense_backward(const DenseLayer& d, std::span<const double> x,
                                   std::span<const double> dout, DenseLayer& grad) {
  std::vector<double> dx(d.in, 0.0);
  for (int o = 0; o < d.out; ++o) {
    grad.b[o] += dout[o];
    const double* row = &d.w[static_cast<std::size_t>(o) * d.in];
    double* grow = &grad.w[static_cast<std::size_t>(o) * d.in];
    for (int i = 0; i < d.in; ++i) {
      grow[i] += dout[o] * x[i];
      dx[i] += dout[o] * row[i];
    }
  }
  return dx;
}

}  // namespace

std::vector<Sample> to_samples(std::span<const ExperimentRecord> records) {
  std::vector<Sample> samples;
  samples.reserve(records.size());
  int n_max = records.empty() ? 0 : records.front().hist.n_max();
  for (const auto& rec : records) {
    if (rec.hist.n_max() != n_max)
      throw std::invalid_argument("dataset mixes histograms with different n_max");
    samples.push_back({rec.hist.normalized(), rec.truth.probs, rec.id});
  }
  return samples;
}

void check_disjoint(std::span<const Sample> train, std::span<const Sample> test) {
  std::unordered_set<std::uint64_t> ids;
  for (const auto& s : train) ids.insert(s.id);
  for (const auto& s : test)
    if (ids.count(s.id))
      throw std::invalid_argument("train and test sets share record id " +
                                  std::to_string(s.id));
}

ReadoutModel ReadoutModel::make(int input_len, int n_outputs, std::uint64_t seed,
                                int kernel, int channels, int pool, int hidden1,
                                int hidden2) {
  if (input_len < kernel || n_outputs < 1 || kernel < 1 || channels < 1 || pool < 1)
    throw std::invalid_argument("invalid model shape");
  ReadoutModel m;
  m.input_len = input_len;
  m.pool = pool;
  m.conv.kernel = kernel;
  m.conv.channels = channels;
  Rng rng(seed);
  auto init = [&](std::vector<double>& w, int fan_in, std::size_t n) {
    w.resize(n);
    double scale = std::sqrt(2.0 / fan_in);  // He init for the ReLU stack
    for (double& v : w) v = rng.normal(0.0, scale);
  };
  init(m.conv.w, kernel, static_cast<std::size_t>(channels) * kernel);
  m.conv.b.assign(channels, 0.0);
  int flat = (input_len - kernel + 1) / pool * channels;
  m.dense1.in = flat;
  m.dense1.out = hidden1;
  init(m.dense1.w, flat, static_cast<std::size_t>(hidden1) * flat);
  m.dense1.b.assign(hidden1, 0.0);
  m.dense2.in = hidden1;
  m.dense2.out = hidden2;
  init(m.dense2.w, hidden1, static_cast<std::size_t>(hidden2) * hidden1);
  m.dense2.b.assign(hidden2, 0.0);
  m.output.in = hidden2;
  m.output.out = n_outputs;
  init(m.output.w, hidden2, static_cast<std::size_t>(n_outputs) * hidden2);
  m.output.b.assign(n_outputs, 0.0);
  return m;
}

std::vector<double> ReadoutModel::forward_raw(std::span<const double> input) const {
  check_input(*this, input);
  ForwardCache c;
  run_forward(*this, input, c);
  return c.out;
}

SpinStateLabel ReadoutModel::forward(std::span<const double> input) const {
  return calibrate_output(forward_raw(input));
}

SpinStateLabel calibrate_output(std::span<const double> raw) {
  SpinStateLabel label;
  label.probs.assign(raw.begin(), raw.end());
  double sum = 0.0;
  for (double& p : label.probs) {
    p = std::clamp(p, 0.0, 1.0);
    sum += p;
  }
  if (sum <= 0.0)
    label.probs.assign(label.probs.size(), 1.0 / label.probs.size());
  else
    for (double& p : label.probs) p /= sum;
  return label;
}

double weight_penalty(const ReadoutModel& model) {
  double acc = 0.0;
  for (const auto* w :
       {&model.conv.w, &model.dense1.w, &model.dense2.w, &model.output.w})
    for (double v : *w) acc += v * v;
  return acc;
}

double loss(std::span<const std::vector<double>> predictions,
            std::span<const std::vector<double>> labels, const ReadoutModel& model,
            double lambda) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw std::invalid_argument("prediction/label batch mismatch");
  double mse = 0.0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    if (predictions[s].size() != labels[s].size())
      throw std::invalid_argument("prediction/label shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions[s].size(); ++i) {
      double d = predictions[s][i] - labels[s][i];
      acc += d * d;
    }
    mse += acc / predictions[s].size();
  }
  return mse / predictions.size() + lambda * weight_penalty(model);
}

double backward(const ReadoutModel& model, std::span<const double> input,
                std::span<const double> target, Gradients& grads) {
  check_input(model, input);
  if (static_cast<int>(target.size()) != model.n_outputs())
    throw std::invalid_argument("target size does not match model output");
  ForwardCache c;
  run_forward(model, input, c);

  const int n_out = model.n_outputs();
  double sample_loss = 0.0;
  std::vector<double> dout(n_out);
  for (int i = 0; i < n_out; ++i) {
    double d = c.out[i] - target[i];
    sample_loss += d * d / n_out;
    dout[i] = 2.0 * d / n_out;
  }

  auto dh2 = dense_backward(model.output, c.h2, dout, grads.output);
  for (int i = 0; i < model.dense2.out; ++i)
    if (c.h2_pre[i] <= 0.0) dh2[i] = 0.0;
  auto dh1 = dense_backward(model.dense2, c.h1, dh2, grads.dense2);
  for (int i = 0; i < model.dense1.out; ++i)
    if (c.h1_pre[i] <= 0.0) dh1[i] = 0.0;
  auto dflat = dense_backward(model.dense1, c.flat, dh1, grads.dense1);

  // route pooled gradients back to the argmax conv cell, through ReLU
  const int cl = model.conv_len();
  const int pl = model.pooled_len();
  const int ch = model.conv.channels;
  const int k = model.conv.kernel;
  std::vector<double> dconv(static_cast<std::size_t>(ch) * cl, 0.0);
  for (int o = 0; o < ch; ++o)
    for (int p = 0; p < pl; ++p) {
      std::size_t cell = static_cast<std::size_t>(o) * pl + p;
      int t = c.argmax[cell];
      if (c.conv_pre[static_cast<std::size_t>(o) * cl + t] > 0.0)
        dconv[static_cast<std::size_t>(o) * cl + t] += dflat[cell];
    }
  for (int o = 0; o < ch; ++o) {
    double* gw = &grads.conv.w[static_cast<std::size_t>(o) * k];
    for (int t = 0; t < cl; ++t) {
      double g = dconv[static_cast<std::size_t>(o) * cl + t];
      if (g == 0.0) continue;
      grads.conv.b[o] += g;
      for (int j = 0; j < k; ++j) gw[j] += g * input[t + j];
    }
  }
  return sample_loss;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || epochs < 1 || batch_size < 1 || lambda < 0.0 ||
      patience < 1)
    throw std::invalid_argument("invalid training configuration");
}

TrainReport train(ReadoutModel& model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  for (const auto& s : train_set)
    if (static_cast<int>(s.x.size()) != model.input_len ||
        static_cast<int>(s.y.size()) != model.n_outputs())
      throw std::invalid_argument("sample shape does not match model");

  Gradients grads;
  zero(grads, model);
  auto refs = param_refs(model, grads);
  std::vector<double> adam_m(refs.size(), 0.0), adam_v(refs.size(), 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto val_loss = [&] {
    if (val_set.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const auto& s : val_set) {
      auto out = model.forward_raw(s.x);
      double e = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        double d = out[i] - s.y[i];
        e += d * d;
      }
      acc += e / out.size();
    }
    return acc / val_set.size() + config.lambda * weight_penalty(model);
  };

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) best_params[i] = *refs[i].value;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform() * i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::size_t batch = stop - start;
      for (auto& r : refs) *r.grad = 0.0;
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = train_set[order[i]];
        batch_loss += backward(model, s.x, s.y, grads);
      }
      batch_loss /= batch;
      for (auto& r : refs) {
        *r.grad /= batch;
        if (r.is_weight) *r.grad += 2.0 * config.lambda * *r.value;
      }
      batch_loss += config.lambda * weight_penalty(model);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error(
            "training loss is not finite; reduce the learning rate");
      epoch_loss += batch_loss * batch;

      ++step;
      double bc1 = 1.0 - std::pow(beta1, step);
      double bc2 = 1.0 - std::pow(beta2, step);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * *refs[i].grad;
        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * *refs[i].grad * *refs[i].grad;
        *refs[i].value -= config.learning_rate * (adam_m[i] / bc1) /
                          (std::sqrt(adam_v[i] / bc2) + eps);
      }
    }
    report.train_loss.push_back(epoch_loss / order.size());

    double vl = val_loss();
    report.val_loss.push_back(vl);
    double monitor = val_set.empty() ? report.train_loss.back() : vl;
    if (monitor < best_val) {
      best_val = monitor;
      report.best_epoch = epoch;
      for (std::size_t i = 0; i < refs.size(); ++i) best_params[i] = *refs[i].value;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      report.early_stopped = true;
      break;
    }
  }
  for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = best_params[i];
  return report;
}

Pearson pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("pearson needs >= 2 paired samples");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return {0.0, true};
  return {sab / std::sqrt(saa * sbb), false};
}

namespace {
std::pair<std::vector<double>, std::vector<double>> flatten_predictions(
    const ReadoutModel& model, std::span<const Sample> test_set) {
  std::vector<double> pred, truth;
  for (const auto& s : test_set) {
    auto label = model.forward(s.x);
    pred.insert(pred.end(), label.probs.begin(), label.probs.end());
    truth.insert(truth.end(), s.y.begin(), s.y.end());
  }
  return {std::move(pred), std::move(truth)};
}
}  // namespace

Pearson evaluate(const ReadoutModel& model, std::span<const Sample> test_set) {
  auto [pred, truth] = flatten_predictions(model, test_set);
  return pearson(pred, truth);
}

std::vector<Pearson> evaluate_per_component(const ReadoutModel& model,
                                            std::span<const Sample> test_set) {
  const int n_out = model.n_outputs();
  std::vector<std::vector<double>> pred(n_out), truth(n_out);
  for (const auto& s : test_set) {
    auto label = model.forward(s.x);
    for (int i = 0; i < n_out; ++i) {
      pred[i].push_back(label.probs[i]);
      truth[i].push_back(s.y[i]);
    }
  }
  std::vector<Pearson> out(n_out);
  for (int i = 0; i < n_out; ++i) out[i] = pearson(pred[i], truth[i]);
  return out;
}

Readout model_readout(const ReadoutModel& model) {
  return [model](const ExperimentRecord& rec) {
    return model.forward(rec.hist.normalized());
  };
}

namespace {
constexpr int kModelFormatVersion = 1;

nlohmann::json dense_to_json(const DenseLayer& d) {
  return {{"in", d.in}, {"out", d.out}, {"w", d.w}, {"b", d.b}};
}

DenseLayer dense_from_json(const nlohmann::json& j) {
  DenseLayer d;
  d.in = j.at("in").get<int>();
  d.out = j.at("out").get<int>();
  d.w = j.at("w").get<std::vector<double>>();
  d.b = j.at("b").get<std::vector<double>>();
  if (d.w.size() != static_cast<std::size_t>(d.in) * d.out ||
      d.b.size() != static_cast<std::size_t>(d.out))
    throw std::runtime_error("model file: dense layer shape mismatch");
  return d;
}
}  // namespace

void save_model(const ReadoutModel& model, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["input_len"] = model.input_len;
  j["pool"] = model.pool;
  j["conv"] = {{"kernel", model.conv.kernel},
               {"channels", model.conv.channels},
               {"w", model.conv.w},
               {"b", model.conv.b}};
  j["dense1"] = dense_to_json(model.dense1);
  j["dense2"] = dense_to_json(model.dense2);
  j["output"] = dense_to_json(model.output);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("failed writing model file: " + path);
}

ReadoutModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt model file " + path + ": " + e.what());
  }
  if (j.value("format_version", -1) != kModelFormatVersion)
    throw std::runtime_error("unsupported model format version in " + path);
  ReadoutModel m;
  m.input_len = j.at("input_len").get<int>();
  m.pool = j.at("pool").get<int>();
  const auto& c = j.at("conv");
  m.conv.kernel = c.at("kernel").get<int>();
  m.conv.channels = c.at("channels").get<int>();
  m.conv.w = c.at("w").get<std::vector<double>>();
  m.conv.b = c.at("b").get<std::vector<double>>();
  if (m.conv.w.size() != static_cast<std::size_t>(m.conv.channels) * m.conv.kernel ||
      m.conv.b.size() != static_cast<std::size_t>(m.conv.channels))
    throw std::runtime_error("model file: conv layer shape mismatch");
  m.dense1 = dense_from_json(j.at("dense1"));
  m.dense2 = dense_from_json(j.at("dense2"));
  m.output = dense_from_json(j.at("output"));
  if (m.dense1.in != m.flat_len() || m.dense2.in != m.dense1.out ||
      m.output.in != m.dense2.out)
    throw std::runtime_error("model file: layer shapes do not chain");
  return m;
}

std::vector<ScalingRow> run_scaling_study(std::span<const ScalingDataset> datasets,
                                          const TrainConfig& config) {
  std::vector<ScalingRow> rows;
  for (const auto& ds : datasets) {
    ScalingRow row;
    row.n_emitters = static_cast<int>(ds.cluster.size());
    try {
      auto train_samples = to_samples(ds.train);
      auto test_samples = to_samples(ds.test);
      check_disjoint(train_samples, test_samples);
      // tail of the shuffled-by-construction training set as validation
      std::size_t n_val = std::max<std::size_t>(1, train_samples.size() / 10);
      std::span<const Sample> all(train_samples);
      auto tr = all.subspan(0, all.size() - n_val);
      auto val = all.subspan(all.size() - n_val);
      auto model = ReadoutModel::make(ds.cluster.n_max + 1,
                                      static_cast<int>(ds.basis.size()), config.seed);
      train(model, tr, val, config);
      row.r = evaluate(model, test_samples);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace nvread
