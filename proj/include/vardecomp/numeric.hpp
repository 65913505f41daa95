#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vardecomp {

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) noexcept {
    add(v);
    return *this;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_mean(std::span<const double> xs);

/// Sample variance with the n-1 denominator (two-pass, compensated).
double sample_variance(std::span<const double> xs);
double sample_sd(std::span<const double> xs);

/// Linear-interpolation quantile (R type 7). Copies and partially sorts.
double quantile(std::span<const double> xs, double prob);
double median(std::span<const double> xs);

/// Counter-based seed derivation: stream `index` of master `seed`.
/// Any replicate can be regenerated in isolation from (seed, index).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Shortest round-trip decimal form.
std::string format_double(double v);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(substream_seed(seed, index));
}

}  // namespace vardecomp
