#ifndef NVREAD_RNG_HPP
#define NVREAD_RNG_HPP

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace nvread {

// SplitMix64 step; used only for seed derivation.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seedable, splittable RNG. stream(seed, id) derives statistically
// independent streams from one master seed, so Monte Carlo batches can run
// in parallel while staying reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    std::seed_seq seq{splitmix64_next(s), splitmix64_next(s),
                      splitmix64_next(s), splitmix64_next(s)};
    engine_.seed(seq);
  }

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = seed ^ 0xA3C59AC2F1AE0E75ULL;
    std::uint64_t mixed = splitmix64_next(s) ^ (stream_id * 0xD6E8FEB86659FD93ULL);
    return Rng(splitmix64_next(mixed));
  }

  Rng split(std::uint64_t stream_id) {
    std::uint64_t base = engine_();
    return Rng::stream(base, stream_id);
  }

  double uniform() { return unit_(engine_); }

  double exponential(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate must be > 0");
    return std::exponential_distribution<double>(rate)(engine_);
  }

  std::uint64_t poisson(double mean) {
    if (mean < 0.0) throw std::invalid_argument("poisson: negative mean");
    if (mean == 0.0) return 0;
    return std::poisson_distribution<std::uint64_t>(mean)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Index sampled proportionally to non-negative weights.
  std::size_t discrete(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace nvread

#endif  // NVREAD_RNG_HPP
