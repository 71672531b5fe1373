#include "hetplan/bandwidth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "hetplan/errors.hpp"

namespace hetplan {

double BandwidthModel::bandwidth(double bytes) const {
  const double lo = std::log2(min_bytes);
  const double hi = std::log2(std::max(min_bytes, max_bytes));
  const double x = std::clamp(std::log2(bytes), lo, hi);
  double acc = 0.0;
  for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) acc = acc * x + *it;
  return acc;
}

BandwidthModel BandwidthModel::constant(double bytes_per_second, double min_bytes, double max_bytes) {
  return BandwidthModel{{bytes_per_second}, min_bytes, max_bytes};
}

BandwidthFit fit_bandwidth(std::span<const BandwidthSample> samples, int degree) {
  if (degree < 0) throw DegenerateFit("negative polynomial degree");
  std::set<double> sizes;
  for (const auto& s : samples) {
    if (!(s.bytes > 0) || !(s.seconds > 0)) {
      throw ConsistencyError("bandwidth samples need positive sizes and times");
    }
    sizes.insert(s.bytes);
  }
  if (static_cast<int>(sizes.size()) < degree + 1) {
    throw DegenerateFit("need at least " + std::to_string(degree + 1) +
                        " distinct message sizes, got " + std::to_string(sizes.size()));
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd design(n, degree + 1);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    const double x = std::log2(s.bytes);
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      design(i, k) = p;
      p *= x;
    }
    target(i) = s.bytes / s.seconds;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < degree + 1) throw DegenerateFit("design matrix is rank deficient");
  const Eigen::VectorXd coef = qr.solve(target);

  BandwidthFit fit;
  fit.model.coefficients.assign(coef.data(), coef.data() + coef.size());
  fit.model.min_bytes = *sizes.begin();
  fit.model.max_bytes = *sizes.rbegin();
  fit.residual_sum_squares = (design * coef - target).squaredNorm();
  return fit;
}

double comm_time(const BandwidthModel& model, double bytes) {
  if (bytes <= 0) return 0.0;
  return bytes / model.bandwidth(bytes);
}

}  // namespace hetplan
