#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace hetplan {

// Bus bandwidth (bytes/s) as a polynomial in x = log2(message bytes).
// Evaluation clamps x to the measured range.
struct BandwidthModel {
  std::vector<double> coefficients;  // c0 + c1*x + c2*x^2 + ...
  double min_bytes = 1.0;
  double max_bytes = 1.0;

  double bandwidth(double bytes) const;

  static BandwidthModel constant(double bytes_per_second, double min_bytes = 1.0,
                                 double max_bytes = double(int64_t{1} << 40));

  friend bool operator==(const BandwidthModel&, const BandwidthModel&) = default;
};

struct BandwidthSample {
  double bytes;
  double seconds;
};

struct BandwidthFit {
  BandwidthModel model;
  double residual_sum_squares = 0.0;  // in (bytes/s)^2
};

inline constexpr int kDefaultBandwidthDegree = 3;

// Least-squares fit of bandwidth = bytes/seconds against log2(bytes).
// Throws DegenerateFit when fewer than degree+1 distinct sizes are given or the
// design matrix is rank deficient, ConsistencyError on non-positive samples.
BandwidthFit fit_bandwidth(std::span<const BandwidthSample> samples,
                           int degree = kDefaultBandwidthDegree);

// Seconds to move `bytes` over a link described by `model`. Zero for empty messages.
double comm_time(const BandwidthModel& model, double bytes);

}  // namespace hetplan
