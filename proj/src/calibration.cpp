#include "nvread/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <numeric>

#include "nvread/rng.hpp"

namespace nvread {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double get_rate(const EmitterParams& p, int field) {
  switch (field) {
    case 0: return p.gamma_bright;
    case 1: return p.gamma_dark;
    case 2: return p.k_ion;
    default: return p.k_rec;
  }
}

void set_rate(EmitterParams& p, int field, double v) {
  switch (field) {
    case 0: p.gamma_bright = v; break;
    case 1: p.gamma_dark = v; break;
    case 2: p.k_ion = v; break;
    default: p.k_rec = v; break;
  }
}

// Maps between the free optimizer vector (log rates + weight logits) and
// the natural parameters. Rates with lo == hi are pinned.
struct ParamSpace {
  struct FreeRate {
    std::size_t emitter;
    int field;
    double log_lo, log_hi;
  };

  std::vector<FreeRate> free_rates;
  std::vector<EmitterParams> base;  // carries pinned rates + non-rate fields
  std::size_t n_configs = 0;
  bool tie_stationary = false;

  ParamSpace(const ClusterModel& templ, const std::vector<RateBounds>& bounds,
             bool stationary)
      : tie_stationary(stationary) {
    base = templ.emitters;
    n_configs = templ.n_charge_configs();
    for (std::size_t e = 0; e < base.size(); ++e) {
      const RateBounds& b = bounds.size() == 1 ? bounds[0] : bounds[e];
      for (int f = 0; f < 4; ++f) {
        double lo = get_rate(b.lo, f), hi = get_rate(b.hi, f);
        if (!(lo <= hi)) throw std::invalid_argument("fit bounds not well-ordered");
        if (lo == hi) {
          set_rate(base[e], f, lo);
        } else {
          if (!(lo > 0.0))
            throw std::invalid_argument("free rate bounds must be positive");
          free_rates.push_back({e, f, std::log(lo), std::log(hi)});
        }
      }
    }
  }

  std::size_t dim() const {
    return free_rates.size() + (tie_stationary ? 0 : n_configs - 1);
  }

  std::vector<double> encode(const std::vector<EmitterParams>& emitters,
                             const std::vector<double>& weights) const {
    std::vector<double> x;
    x.reserve(dim());
    for (const auto& fr : free_rates) {
      double v = get_rate(emitters[fr.emitter], fr.field);
      double lv = std::log(std::max(v, 1e-300));
      x.push_back(std::clamp(lv, fr.log_lo, fr.log_hi));
    }
    if (!tie_stationary) {
      double wlast = std::max(weights.back(), 1e-12);
      for (std::size_t c = 0; c + 1 < n_configs; ++c)
        x.push_back(std::log(std::max(weights[c], 1e-12) / wlast));
    }
    return x;
  }

  void decode(const std::vector<double>& x, std::vector<EmitterParams>* emitters,
              std::vector<double>* weights) const {
    *emitters = base;
    for (std::size_t i = 0; i < free_rates.size(); ++i) {
      const auto& fr = free_rates[i];
      double lv = std::clamp(x[i], fr.log_lo, fr.log_hi);
      set_rate((*emitters)[fr.emitter], fr.field, std::exp(lv));
    }
    // NV0 must stay at or below NV- brightness
    for (auto& e : *emitters) e.gamma_dark = std::min(e.gamma_dark, e.gamma_bright);

    weights->assign(n_configs, 0.0);
    if (tie_stationary) {
      const std::size_t n = emitters->size();
      for (std::size_t c = 0; c < n_configs; ++c) {
        double w = 1.0;
        for (std::size_t e = 0; e < n; ++e) {
          const auto& em = (*emitters)[e];
          double ksum = em.k_ion + em.k_rec;
          double p_neg = ksum > 0.0 ? em.k_rec / ksum : 1.0;
          bool neutral = (c >> (n - 1 - e)) & 1u;
          w *= neutral ? 1.0 - p_neg : p_neg;
        }
        (*weights)[c] = w;
      }
      return;
    }
    double zmax = 0.0;
    for (std::size_t c = 0; c + 1 < n_configs; ++c)
      zmax = std::max(zmax, x[free_rates.size() + c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < n_configs; ++c) {
      double z = c + 1 < n_configs ? x[free_rates.size() + c] : 0.0;
      (*weights)[c] = std::exp(z - zmax);
      sum += (*weights)[c];
    }
    for (double& w : *weights) w /= sum;
  }
};

// Emitter pmf at the cluster truncation, integrating only up to the
// emitter's own support and zero-padding the rest.
ConditionalPmf padded_emitter_pmf(const EmitterParams& p, double T, int cluster_n_max) {
  int own = std::min(cluster_n_max, default_n_max(p.gamma_bright * T));
  auto c = single_emitter_pmf(p, T, own);
  if (own < cluster_n_max) {
    for (auto& v : c.pmf) v.resize(static_cast<std::size_t>(cluster_n_max) + 1, 0.0);
    c.n_max = cluster_n_max;
  }
  return c;
}

double nll_of(const Histogram& hist, const ClusterModel& templ,
              const std::vector<EmitterParams>& emitters,
              const std::vector<double>& weights) {
  std::vector<ConditionalPmf> pmfs;
  pmfs.reserve(emitters.size());
  for (const auto& e : emitters)
    pmfs.push_back(padded_emitter_pmf(e, templ.readout_time, templ.n_max));
  auto mix = mixture_pmf(pmfs, weights);
  double nll = 0.0;
  for (std::size_t n = 0; n < hist.counts.size() && n < mix.size(); ++n) {
    if (hist.counts[n] == 0) continue;
    nll -= static_cast<double>(hist.counts[n]) * std::log(std::max(mix[n], 1e-300));
  }
  return nll;
}

struct NelderMeadResult {
  std::vector<double> x;
  double f = kInf;
  bool converged = false;
  int evals = 0;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                             const std::vector<double>& x0, double step,
                             int max_evals, double rel_tol) {
  const std::size_t n = x0.size();
  NelderMeadResult res;
  std::vector<std::vector<double>> simplex(n + 1, x0);
  std::vector<double> fval(n + 1);
  for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
  for (std::size_t i = 0; i <= n; ++i) fval[i] = fn(simplex[i]);
  res.evals = static_cast<int>(n) + 1;

  auto order = [&] {
    std::vector<std::size_t> idx(n + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return fval[a] < fval[b]; });
    std::vector<std::vector<double>> s2;
    std::vector<double> f2;
    for (auto i : idx) {
      s2.push_back(simplex[i]);
      f2.push_back(fval[i]);
    }
    simplex.swap(s2);
    fval.swap(f2);
  };

  order();
  while (res.evals < max_evals) {
    double spread = std::abs(fval[n] - fval[0]) / (std::abs(fval[0]) + 1e-12);
    if (spread < rel_tol) {
      res.converged = true;
      break;
    }
    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;

    auto blend = [&](double coeff) {
      std::vector<double> x(n);
      for (std::size_t j = 0; j < n; ++j)
        x[j] = centroid[j] + coeff * (simplex[n][j] - centroid[j]);
      return x;
    };

    auto xr = blend(-1.0);
    double fr = fn(xr);
    ++res.evals;
    if (fr < fval[0]) {
      auto xe = blend(-2.0);
      double fe = fn(xe);
      ++res.evals;
      if (fe < fr) {
        simplex[n] = xe;
        fval[n] = fe;
      } else {
        simplex[n] = xr;
        fval[n] = fr;
      }
    } else if (fr < fval[n - 1]) {
      simplex[n] = xr;
      fval[n] = fr;
    } else {
      auto xc = blend(fr < fval[n] ? -0.5 : 0.5);
      double fc = fn(xc);
      ++res.evals;
      if (fc < std::min(fr, fval[n])) {
        simplex[n] = xc;
        fval[n] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          for (std::size_t j = 0; j < n; ++j)
            simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
          fval[i] = fn(simplex[i]);
        }
        res.evals += static_cast<int>(n);
      }
    }
    order();
  }
  res.x = simplex[0];
  res.f = fval[0];
  return res;
}

// Reorders emitters by gamma_bright descending and permutes the joint
// charge-weight indices to match.
void canonicalize(FitResult* r) {
  const std::size_t n = r->emitters.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return r->emitters[a].gamma_bright > r->emitters[b].gamma_bright;
  });

  std::vector<EmitterParams> em(n);
  for (std::size_t i = 0; i < n; ++i) em[i] = r->emitters[perm[i]];
  r->emitters = std::move(em);

  std::vector<double> w(r->charge_weights.size(), 0.0);
  for (std::size_t old_idx = 0; old_idx < w.size(); ++old_idx) {
    std::size_t new_idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bit = (old_idx >> (n - 1 - perm[i])) & 1u;
      new_idx |= bit << (n - 1 - i);
    }
    w[new_idx] = r->charge_weights[old_idx];
  }
  r->charge_weights = std::move(w);
}

}  // namespace

double histogram_nll(const Histogram& hist, const ClusterModel& templ,
                     const std::vector<EmitterParams>& emitters,
                     const std::vector<double>& charge_weights) {
  return nll_of(hist, templ, emitters, charge_weights);
}

FitResult fit_histogram(const Histogram& hist, const ClusterModel& templ,
                        const std::vector<RateBounds>& bounds,
                        const std::vector<EmitterParams>& init_guess,
                        const std::vector<double>& init_weights,
                        const FitOptions& options) {
  if (hist.total_shots < 1000)
    throw std::invalid_argument("fit_histogram: need at least 1000 shots");
  int occupied = 0;
  for (auto c : hist.counts)
    if (c > 0) ++occupied;
  if (occupied < 2)
    throw std::invalid_argument("fit_histogram: degenerate single-bin histogram");
  if (init_guess.size() != templ.size())
    throw std::invalid_argument("fit_histogram: init guess size mismatch");
  if (bounds.size() != 1 && bounds.size() != templ.size())
    throw std::invalid_argument("fit_histogram: bounds size mismatch");

  ParamSpace space(templ, bounds, options.stationary_weights);
  std::vector<double> weights = init_weights;
  if (weights.empty())
    weights.assign(templ.n_charge_configs(), 1.0 / templ.n_charge_configs());

  auto objective = [&](const std::vector<double>& x) {
    std::vector<EmitterParams> em;
    std::vector<double> w;
    space.decode(x, &em, &w);
    try {
      return nll_of(hist, templ, em, w);
    } catch (const TruncationError&) {
      return kInf;
    }
  };

  std::vector<double> x0 = space.encode(init_guess, weights);
  std::vector<std::vector<double>> starts;
  starts.push_back(x0);
  Rng rng(options.seed ^ 0x5CCFE1DULL);
  for (int s = 1; s < options.multistarts; ++s) {
    auto x = x0;
    for (std::size_t i = 0; i < space.free_rates.size(); ++i)
      x[i] += rng.normal(0.0, options.jitter);
    for (std::size_t i = space.free_rates.size(); i < x.size(); ++i)
      x[i] += rng.normal(0.0, 0.5);
    starts.push_back(std::move(x));
  }

  std::vector<std::future<NelderMeadResult>> futures;
  for (auto& start : starts)
    futures.push_back(std::async(std::launch::async, [&, start] {
      return nelder_mead(objective, start, 0.15, options.max_evals, options.rel_tol);
    }));

  NelderMeadResult best;
  for (auto& fut : futures) {
    auto r = fut.get();
    if (r.f < best.f) best = std::move(r);
  }

  FitResult result;
  space.decode(best.x, &result.emitters, &result.charge_weights);
  result.nll = best.f;
  result.converged = best.converged;
  result.iterations = best.evals;
  canonicalize(&result);
  return result;
}

void PowerSweepDataset::validate() const {
  std::vector<double> powers;
  for (const auto& [p, h] : entries) {
    if (!(p > 0.0)) throw std::invalid_argument("powers must be > 0");
    powers.push_back(p);
  }
  std::sort(powers.begin(), powers.end());
  powers.erase(std::unique(powers.begin(), powers.end()), powers.end());
  if (powers.size() < 3)
    throw std::invalid_argument("power sweep needs >= 3 distinct powers");
}

namespace {

PowerLawFit loglog_ols(const std::vector<double>& power,
                       const std::vector<double>& rate) {
  PowerLawFit fit;
  const std::size_t m = power.size();
  std::vector<double> lx(m), ly(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(rate[i] > 0.0)) {
      fit.exponent_se = fit.amplitude_se = std::numeric_limits<double>::quiet_NaN();
      return fit;
    }
    lx[i] = std::log(power[i]);
    ly[i] = std::log(rate[i]);
  }
  double xbar = std::accumulate(lx.begin(), lx.end(), 0.0) / m;
  double ybar = std::accumulate(ly.begin(), ly.end(), 0.0) / m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (lx[i] - xbar) * (lx[i] - xbar);
    sxy += (lx[i] - xbar) * (ly[i] - ybar);
  }
  double slope = sxy / sxx;
  double intercept = ybar - slope * xbar;
  double ssr = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double r = ly[i] - (intercept + slope * lx[i]);
    ssr += r * r;
  }
  double sigma2 = m > 2 ? ssr / (m - 2) : 0.0;
  fit.exponent = slope;
  fit.amplitude = std::exp(intercept);
  fit.exponent_se = std::sqrt(sigma2 / sxx);
  fit.amplitude_se = fit.amplitude * std::sqrt(sigma2 * (1.0 / m + xbar * xbar / sxx));
  return fit;
}

}  // namespace

PowerScalingResult fit_power_scaling(const PowerSweepDataset& sweep,
                                     const ClusterModel& templ,
                                     const std::vector<RateBounds>& bounds,
                                     const std::vector<EmitterParams>& init_guess,
                                     const std::vector<double>& init_weights,
                                     const FitOptions& options) {
  sweep.validate();
  auto entries = sweep.entries;
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  PowerScalingResult result;
  result.all_converged = true;
  FitOptions opts = options;
  opts.stationary_weights = true;  // continuous readout: weights follow the rates
  std::vector<EmitterParams> guess = init_guess;
  std::vector<double> wguess = init_weights;
  for (const auto& [power, hist] : entries) {
    auto fit = fit_histogram(hist, templ, bounds, guess, wguess, opts);
    result.all_converged = result.all_converged && fit.converged;
    guess = fit.emitters;
    wguess = fit.charge_weights;
    result.fits.push_back(std::move(fit));
  }

  std::vector<double> powers;
  for (const auto& [p, h] : entries) powers.push_back(p);
  result.channels.resize(templ.size());
  for (std::size_t e = 0; e < templ.size(); ++e) {
    for (int f = 0; f < 4; ++f) {
      std::vector<double> rates;
      for (const auto& fit : result.fits) rates.push_back(get_rate(fit.emitters[e], f));
      result.channels[e][f] = loglog_ols(powers, rates);
    }
  }
  return result;
}

}  // namespace nvread
