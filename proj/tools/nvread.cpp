// Command-line front end: simulation, calibration, NN training/prediction,
// and experiment reproduction, all seeded and file-based.
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nvread/calibration.hpp"
#include "nvread/io.hpp"
#include "nvread/nn.hpp"
#include "nvread/photon_stats.hpp"
#include "nvread/scc.hpp"
#include "nvread/threads.hpp"

namespace fs = std::filesystem;
using namespace nvread;

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitIo = 4;

struct CommonOpts {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config, "cluster config file");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "global RNG seed");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--threads", opts.threads,
                  "worker thread budget (default: NVREAD_THREADS or all cores)");
}

struct Loaded {
  ClusterModel cluster;
  Provenance prov;
};

Loaded load_common(const CommonOpts& opts) {
  if (opts.threads > 0) set_max_threads(opts.threads);
  fs::create_directories(opts.out);
  std::uint64_t hash = 0;
  auto cluster = load_cluster_config(opts.config, &hash);
  return {std::move(cluster), Provenance{opts.seed, hash}};
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
  return (fs::path(opts.out) / name).string();
}

std::vector<double> parse_theta_grid(const std::string& spec) {
  std::vector<double> grid;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    auto comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    grid.push_back(std::stod(spec.substr(pos, comma - pos)) * kPi);
    pos = comma + 1;
  }
  if (grid.empty()) throw std::invalid_argument("empty theta grid");
  return grid;
}

std::string state_bits(std::size_t index, std::size_t n) {
  std::string bits(n, '0');
  for (std::size_t i = 0; i < n; ++i)
    if ((index >> (n - 1 - i)) & 1u) bits[i] = '1';
  return bits;
}

// --- simulate ---------------------------------------------------------------

int cmd_simulate(const CommonOpts& opts, std::uint64_t shots, int state) {
  auto [cluster, prov] = load_common(opts);
  const std::size_t n_states = std::size_t{1} << cluster.size();
  std::vector<std::size_t> states;
  if (state < 0)
    for (std::size_t s = 0; s < n_states; ++s) states.push_back(s);
  else if (static_cast<std::size_t>(state) < n_states)
    states.push_back(static_cast<std::size_t>(state));
  else
    throw std::invalid_argument("basis state index out of range");

  Rng rng(opts.seed);
  nlohmann::json manifest;
  manifest["tool_version"] = std::string(tool_version());
  manifest["seed"] = opts.seed;
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016" PRIx64, prov.config_hash);
  manifest["config_hash"] = hash_buf;
  manifest["n_max"] = cluster.n_max;
  manifest["shots"] = shots;
  manifest["histograms"] = nlohmann::json::array();

  for (std::size_t s : states) {
    Rng stream = Rng::stream(opts.seed, s);
    auto hist = measure_histogram(
        cluster, SpinStateLabel::point_mass(s, cluster.size()), shots, stream);
    std::string name = "hist_" + state_bits(s, cluster.size()) + ".txt";
    write_histogram(out_path(opts, name), hist, prov);
    manifest["histograms"].push_back(
        {{"file", name}, {"state", state_bits(s, cluster.size())}});
  }
  write_file(out_path(opts, "manifest.json"), manifest.dump(1) + "\n");
  std::printf("wrote %zu histogram(s) to %s\n", states.size(), opts.out.c_str());
  return 0;
}

// --- fit --------------------------------------------------------------------

std::vector<RateBounds> default_bounds(const ClusterModel& templ,
                                       bool pin_gamma_dark) {
  std::vector<RateBounds> bounds;
  for (const auto& e : templ.emitters) {
    RateBounds b{e, e};
    auto widen = [](double v, double* lo, double* hi) {
      *lo = v / 100.0;
      *hi = v * 100.0;
    };
    widen(e.gamma_bright, &b.lo.gamma_bright, &b.hi.gamma_bright);
    if (!pin_gamma_dark && e.gamma_dark > 0.0)
      widen(e.gamma_dark, &b.lo.gamma_dark, &b.hi.gamma_dark);
    widen(e.k_ion, &b.lo.k_ion, &b.hi.k_ion);
    widen(e.k_rec, &b.lo.k_rec, &b.hi.k_rec);
    bounds.push_back(b);
  }
  return bounds;
}

std::vector<double> stationary_weights_of(const ClusterModel& cluster) {
  const std::size_t n = cluster.size();
  std::vector<double> w(cluster.n_charge_configs(), 1.0);
  for (std::size_t c = 0; c < w.size(); ++c)
    for (std::size_t e = 0; e < n; ++e) {
      const auto& em = cluster.emitters[e];
      double ksum = em.k_ion + em.k_rec;
      double p_neg = ksum > 0.0 ? em.k_rec / ksum : 1.0;
      w[c] *= ((c >> (n - 1 - e)) & 1u) ? 1.0 - p_neg : p_neg;
    }
  return w;
}

void write_fit_report(const std::string& path, const FitResult& fit,
                      const Provenance& prov) {
  std::string text = prov.header();
  text += "converged: " + std::string(fit.converged ? "yes" : "no") + "\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "nll: %.17g\n", fit.nll);
  text += buf;
  for (std::size_t e = 0; e < fit.emitters.size(); ++e) {
    const auto& p = fit.emitters[e];
    std::snprintf(buf, sizeof(buf),
                  "emitter %zu: gamma_bright %.17g gamma_dark %.17g k_ion %.17g "
                  "k_rec %.17g\n",
                  e, p.gamma_bright, p.gamma_dark, p.k_ion, p.k_rec);
    text += buf;
  }
  text += "charge_weights:";
  for (double w : fit.charge_weights) {
    std::snprintf(buf, sizeof(buf), " %.17g", w);
    text += buf;
  }
  text += "\n";
  write_file(path, text);
}

int cmd_fit(const CommonOpts& opts, const std::string& hist_path,
            const std::string& sweep_path, bool stationary, bool pin_gamma_dark,
            int multistarts) {
  auto [templ, prov] = load_common(opts);
  FitOptions fopts;
  fopts.seed = opts.seed;
  fopts.multistarts = multistarts;
  fopts.stationary_weights = stationary;
  auto bounds = default_bounds(templ, pin_gamma_dark);
  auto init_weights = stationary_weights_of(templ);

  if (!sweep_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_file(sweep_path));
    PowerSweepDataset sweep;
    sweep.readout_time = templ.readout_time;
    sweep.n_max = templ.n_max;
    fs::path base = fs::path(sweep_path).parent_path();
    for (const auto& entry : j.at("entries"))
      sweep.entries.push_back(
          {entry.at("power").get<double>(),
           read_histogram((base / entry.at("file").get<std::string>()).string())});
    auto result =
        fit_power_scaling(sweep, templ, bounds, templ.emitters, init_weights, fopts);
    std::vector<std::string> cols{"emitter", "channel", "amplitude", "exponent",
                                  "exponent_se"};
    std::vector<std::vector<double>> rows;
    for (std::size_t e = 0; e < result.channels.size(); ++e)
      for (int f = 0; f < 4; ++f)
        rows.push_back({static_cast<double>(e), static_cast<double>(f),
                        result.channels[e][f].amplitude,
                        result.channels[e][f].exponent,
                        result.channels[e][f].exponent_se});
    write_table(out_path(opts, "power_scaling.tsv"), cols, rows, prov);
    for (std::size_t i = 0; i < result.fits.size(); ++i)
      write_fit_report(
          out_path(opts, "fit_power_" + std::to_string(i) + ".txt"),
          result.fits[i], prov);
    std::printf("power scaling written to %s\n", opts.out.c_str());
    return result.all_converged ? 0 : kExitConvergence;
  }

  if (hist_path.empty())
    throw std::invalid_argument("fit needs --hist or --sweep");
  auto hist = read_histogram(hist_path);
  if (hist.n_max() != templ.n_max)
    throw std::invalid_argument("histogram n_max does not match config");
  auto fit =
      fit_histogram(hist, templ, bounds, templ.emitters, init_weights, fopts);
  write_fit_report(out_path(opts, "fit_report.txt"), fit, prov);
  std::printf("fit %s, nll %.6f\n", fit.converged ? "converged" : "NOT converged",
              fit.nll);
  return fit.converged ? 0 : kExitConvergence;
}

// --- train ------------------------------------------------------------------

int cmd_train(const CommonOpts& opts, const std::string& grid_spec, int hists,
              std::uint64_t shots, TrainConfig tcfg) {
  auto [cluster, prov] = load_common(opts);
  DatasetOptions dopts;
  dopts.theta_grid = parse_theta_grid(grid_spec);
  dopts.hists_per_point = hists;
  dopts.shots = shots;

  Rng rng(opts.seed);
  auto train_recs = generate_rabi_dataset(cluster, dopts, 0, rng);
  DatasetOptions test_opts = dopts;
  test_opts.hists_per_point = std::max(1, hists / 8);
  auto test_recs = generate_rabi_dataset(cluster, test_opts, 1u << 28, rng);

  auto train_samples = to_samples(train_recs);
  auto test_samples = to_samples(test_recs);
  check_disjoint(train_samples, test_samples);

  std::size_t n_val = std::max<std::size_t>(1, train_samples.size() / 10);
  std::span<const Sample> all(train_samples);
  auto tr = all.subspan(0, all.size() - n_val);
  auto val = all.subspan(all.size() - n_val);

  tcfg.seed = opts.seed;
  auto model = ReadoutModel::make(cluster.n_max + 1,
                                  static_cast<int>(cluster.n_charge_configs()),
                                  opts.seed);
  auto report = train(model, tr, val, tcfg);
  save_model(model, out_path(opts, "model.json"));

  std::vector<std::vector<double>> curve;
  for (std::size_t e = 0; e < report.train_loss.size(); ++e)
    curve.push_back(
        {static_cast<double>(e), report.train_loss[e], report.val_loss[e]});
  write_table(out_path(opts, "loss_curve.tsv"),
              {"epoch", "train_loss", "val_loss"}, curve, prov);

  auto r = evaluate(model, test_samples);
  auto per = evaluate_per_component(model, test_samples);
  std::string text = prov.header();
  char buf[128];
  std::snprintf(buf, sizeof(buf), "test_pearson_r: %.6f%s\n", r.r,
                r.degenerate ? " (degenerate)" : "");
  text += buf;
  for (std::size_t i = 0; i < per.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "component_%zu_r: %.6f\n", i, per[i].r);
    text += buf;
  }
  std::snprintf(buf, sizeof(buf), "epochs_completed: %zu\nbest_epoch: %d\n",
                report.train_loss.size(), report.best_epoch);
  text += buf;
  write_file(out_path(opts, "train_report.txt"), text);
  std::printf("test Pearson r = %.4f; artifacts in %s\n", r.r, opts.out.c_str());
  return 0;
}

// --- predict ----------------------------------------------------------------

// number of emitters implied by an output width
std::size_t model_n_outputs_bits(std::size_t width) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < width) ++n;
  return n;
}

int cmd_predict(const CommonOpts& opts, const std::string& model_path,
                const std::string& hist_path) {
  if (opts.threads > 0) set_max_threads(opts.threads);
  fs::create_directories(opts.out);
  auto model = load_model(model_path);
  auto hist = read_histogram(hist_path);
  Provenance prov{opts.seed, fnv1a(read_file(model_path))};

  auto raw = model.forward_raw(hist.normalized());
  auto label = calibrate_output(raw);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < raw.size(); ++i)
    rows.push_back({static_cast<double>(i), label.probs[i], raw[i]});
  write_table(out_path(opts, "prediction.tsv"),
              {"basis_state", "probability", "raw_output"}, rows, prov);
  for (std::size_t i = 0; i < label.probs.size(); ++i)
    std::printf("%s  %.4f\n",
                state_bits(i, model_n_outputs_bits(raw.size())).c_str(),
                label.probs[i]);
  return 0;
}

// --- tomography -------------------------------------------------------------

Readout make_readout(const std::string& model_path, ReadoutModel* storage) {
  if (model_path.empty()) return oracle_readout();
  *storage = load_model(model_path);
  return model_readout(*storage);
}

int cmd_tomography(const CommonOpts& opts, const std::string& model_path,
                   const std::string& grid_spec, int hists, std::uint64_t shots) {
  auto [cluster, prov] = load_common(opts);
  ReadoutModel storage;
  auto readout = make_readout(model_path, &storage);
  auto thetas = parse_theta_grid(grid_spec);
  Rng rng(opts.seed);
  auto rows = run_rabi_tomography(cluster, readout, thetas, hists, shots, rng);

  std::vector<std::string> cols{"theta"};
  const std::size_t n = cluster.size();
  for (std::size_t i = 0; i < n; ++i) {
    cols.push_back("sz" + std::to_string(i + 1) + "_mean");
    cols.push_back("sz" + std::to_string(i + 1) + "_std");
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::string pair = std::to_string(i + 1) + std::to_string(j + 1);
      cols.push_back("szsz" + pair + "_mean");
      cols.push_back("szsz" + pair + "_std");
    }
  std::vector<std::vector<double>> data;
  for (const auto& row : rows) {
    std::vector<double> r{row.theta};
    for (std::size_t i = 0; i < row.mean.sz.size(); ++i) {
      r.push_back(row.mean.sz[i]);
      r.push_back(row.stddev.sz[i]);
    }
    for (std::size_t i = 0; i < row.mean.szsz.size(); ++i) {
      r.push_back(row.mean.szsz[i]);
      r.push_back(row.stddev.szsz[i]);
    }
    data.push_back(std::move(r));
  }
  write_table(out_path(opts, "tomography.tsv"), cols, data, prov);
  std::printf("tomography table written to %s\n", opts.out.c_str());
  return 0;
}

// --- sense ------------------------------------------------------------------

int cmd_sense(const CommonOpts& opts, const std::string& model_path, int blocks,
              std::uint64_t shots, bool anticorrelated) {
  auto [cluster, prov] = load_common(opts);
  ReadoutModel storage;
  auto readout = make_readout(model_path, &storage);
  Rng rng(opts.seed);
  auto res =
      run_correlated_sensing(cluster, readout, blocks, shots, anticorrelated, rng);

  std::string text = prov.header();
  char buf[160];
  for (std::size_t i = 0; i < res.sz_mean.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "sz%zu_mean: %.17g\n", i + 1, res.sz_mean[i]);
    text += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "parity_mean: %.17g\nparity_std: %.17g\ncovariance: %.17g\n"
                "blocks: %d\n",
                res.parity_mean, res.parity_std, res.covariance, res.blocks);
  text += buf;
  write_file(out_path(opts, "sense_report.txt"), text);
  std::printf("parity %.4f over %d blocks\n", res.parity_mean, res.blocks);
  return 0;
}

// --- scale ------------------------------------------------------------------

int cmd_scale(const CommonOpts& opts, const std::string& n_list_spec, double spread,
              const std::string& grid_spec, int hists, std::uint64_t shots,
              std::uint64_t basis_shots, TrainConfig tcfg) {
  auto [base_cluster, prov] = load_common(opts);
  const EmitterParams base = base_cluster.emitters.front();

  std::vector<int> n_list;
  std::size_t pos = 0;
  while (pos <= n_list_spec.size()) {
    auto comma = n_list_spec.find(',', pos);
    if (comma == std::string::npos) comma = n_list_spec.size();
    n_list.push_back(std::stoi(n_list_spec.substr(pos, comma - pos)));
    pos = comma + 1;
  }

  DatasetOptions train_opts;
  train_opts.theta_grid = parse_theta_grid(grid_spec);
  train_opts.hists_per_point = hists;
  train_opts.shots = shots;
  DatasetOptions test_opts = train_opts;
  test_opts.hists_per_point = std::max(1, hists / 8);

  Rng rng(opts.seed);
  std::vector<ScalingDataset> datasets;
  for (int n : n_list)
    datasets.push_back(generate_scaling_dataset(n, spread, base,
                                                base_cluster.readout_time,
                                                train_opts, test_opts,
                                                basis_shots, rng));
  tcfg.seed = opts.seed;
  auto study = run_scaling_study(datasets, tcfg);

  std::vector<std::vector<double>> rows;
  for (const auto& row : study) {
    if (!row.error.empty())
      std::fprintf(stderr, "N=%d failed: %s\n", row.n_emitters, row.error.c_str());
    rows.push_back({static_cast<double>(row.n_emitters), row.r.r,
                    row.r.degenerate ? 1.0 : 0.0, row.error.empty() ? 0.0 : 1.0});
  }
  write_table(out_path(opts, "scaling.tsv"),
              {"n_emitters", "pearson_r", "degenerate", "failed"}, rows, prov);
  std::printf("scaling table written to %s\n", opts.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photon-histogram simulation, calibration, and NN spin readout "
               "for blinking emitter clusters"};
  app.require_subcommand(1);

  CommonOpts sim_opts;
  std::uint64_t sim_shots = 10000;
  int sim_state = -1;
  auto* sim = app.add_subcommand("simulate", "basis-state histograms + manifest");
  add_common(sim, sim_opts);
  sim->add_option("--shots", sim_shots, "shots per histogram");
  sim->add_option("--state", sim_state, "basis state index (default: all)");

  CommonOpts fit_opts;
  std::string fit_hist, fit_sweep;
  bool fit_stationary = false, fit_pin_gd = false;
  int fit_starts = 8;
  auto* fit = app.add_subcommand("fit", "MLE rate calibration from histograms");
  add_common(fit, fit_opts);
  fit->add_option("--hist", fit_hist, "histogram file to fit");
  fit->add_option("--sweep", fit_sweep, "power sweep manifest (JSON)");
  fit->add_flag("--stationary-weights", fit_stationary,
                "tie charge weights to stationary occupancy");
  fit->add_flag("--pin-gamma-dark", fit_pin_gd,
                "pin gamma_dark at the config value");
  fit->add_option("--multistarts", fit_starts, "optimizer multi-starts");

  CommonOpts train_opts_c;
  std::string train_grid = "0,0.25,0.5,0.75,1";
  int train_hists = 64;
  std::uint64_t train_shots = 10000;
  TrainConfig train_cfg;
  auto* tr = app.add_subcommand("train", "generate Rabi dataset and train readout");
  add_common(tr, train_opts_c);
  tr->add_option("--grid", train_grid, "theta grid in units of pi");
  tr->add_option("--hists", train_hists, "histograms per grid point");
  tr->add_option("--shots", train_shots, "shots per histogram");
  tr->add_option("--epochs", train_cfg.epochs);
  tr->add_option("--lr", train_cfg.learning_rate);
  tr->add_option("--lambda", train_cfg.lambda);
  tr->add_option("--batch", train_cfg.batch_size);
  tr->add_option("--patience", train_cfg.patience);

  CommonOpts pred_opts;
  std::string pred_model, pred_hist;
  auto* pred = app.add_subcommand("predict", "predict a spin label from a histogram");
  add_common(pred, pred_opts, false);
  pred->add_option("--model", pred_model, "model file")->required();
  pred->add_option("--hist", pred_hist, "histogram file")->required();

  CommonOpts tomo_opts;
  std::string tomo_model, tomo_grid = "0,0.25,0.5,0.75,1";
  int tomo_hists = 64;
  std::uint64_t tomo_shots = 10000;
  auto* tomo = app.add_subcommand("tomography", "Rabi tomography table");
  add_common(tomo, tomo_opts);
  tomo->add_option("--model", tomo_model, "model file (default: oracle readout)");
  tomo->add_option("--grid", tomo_grid, "theta grid in units of pi");
  tomo->add_option("--hists", tomo_hists, "histograms per theta");
  tomo->add_option("--shots", tomo_shots, "shots per histogram");

  CommonOpts sense_opts;
  std::string sense_model;
  int sense_blocks = 200;
  std::uint64_t sense_shots = 10000;
  bool sense_anti = false;
  auto* sense = app.add_subcommand("sense", "correlated sensing report");
  add_common(sense, sense_opts);
  sense->add_option("--model", sense_model, "model file (default: oracle readout)");
  sense->add_option("--blocks", sense_blocks, "random 0/pi blocks");
  sense->add_option("--shots-per-block", sense_shots);
  sense->add_flag("--anticorrelated", sense_anti, "opposite pulses on the emitters");

  CommonOpts scale_opts;
  std::string scale_n = "2,3,4,5,6", scale_grid = "0,0.25,0.5,0.75,1";
  double scale_spread = 2.0 / 3.0;
  int scale_hists = 16;
  std::uint64_t scale_shots = 10000, scale_basis_shots = 1000;
  TrainConfig scale_cfg;
  auto* scale = app.add_subcommand("scale", "Pearson r vs cluster size study");
  add_common(scale, scale_opts);
  scale->add_option("--n-list", scale_n, "cluster sizes, comma separated");
  scale->add_option("--spread", scale_spread, "relative parameter dispersion");
  scale->add_option("--grid", scale_grid, "theta grid in units of pi");
  scale->add_option("--hists", scale_hists, "histograms per grid point");
  scale->add_option("--shots", scale_shots, "shots per histogram");
  scale->add_option("--basis-shots", scale_basis_shots);
  scale->add_option("--epochs", scale_cfg.epochs);
  scale->add_option("--lr", scale_cfg.learning_rate);
  scale->add_option("--lambda", scale_cfg.lambda);
  scale->add_option("--batch", scale_cfg.batch_size);
  scale->add_option("--patience", scale_cfg.patience);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts, sim_shots, sim_state);
    if (fit->parsed())
      return cmd_fit(fit_opts, fit_hist, fit_sweep, fit_stationary, fit_pin_gd,
                     fit_starts);
    if (tr->parsed())
      return cmd_train(train_opts_c, train_grid, train_hists, train_shots,
                       train_cfg);
    if (pred->parsed()) return cmd_predict(pred_opts, pred_model, pred_hist);
    if (tomo->parsed())
      return cmd_tomography(tomo_opts, tomo_model, tomo_grid, tomo_hists,
                            tomo_shots);
    if (sense->parsed())
      return cmd_sense(sense_opts, sense_model, sense_blocks, sense_shots,
                       sense_anti);
    if (scale->parsed())
      return cmd_scale(scale_opts, scale_n, scale_spread, scale_grid, scale_hists,
                       scale_shots, scale_basis_shots, scale_cfg);
  } catch (const TruncationError& e) {
    std::fprintf(stderr, "error: %s (suggested n_max: %d)\n", e.what(),
                 e.suggested_n_max);
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitValidation;
}
