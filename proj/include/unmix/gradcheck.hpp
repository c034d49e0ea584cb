// Central-difference gradient verification.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unmix/core.hpp"

namespace unmix::diff {

// A scalar loss together with its analytic gradient, both evaluated at an
// arbitrary parameter point.
struct GradTarget {
  std::function<double(const std::vector<Matrix>&)> value;
  std::function<std::vector<Matrix>(const std::vector<Matrix>&)> gradient;
};

// Perturbs every coordinate by +/- h and returns the worst relative
// disagreement between the analytic gradient and central differences:
// max |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
inline double grad_check(const GradTarget& f, std::vector<Matrix> params, double h) {
  const std::vector<Matrix> analytic = f.gradient(params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& theta = params[p];
    for (long j = 0; j < theta.size(); ++j) {
      const double saved = theta.data()[j];
      theta.data()[j] = saved + h;
      const double up = f.value(params);
      theta.data()[j] = saved - h;
      const double down = f.value(params);
      theta.data()[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic[p].data()[j];
      const double rel = std::abs(exact - numeric) /
                         (std::abs(exact) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace unmix::diff
