// Evaluation metrics: RMSE, spectral angle, and permutation-safe
// abundance-column alignment.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/error.hpp"

namespace unmix::metrics {

// sqrt(||X - Xref||_F^2 / element count).
inline double rmse(const Matrix& x, const Matrix& x_ref) {
  if (x.rows() != x_ref.rows() || x.cols() != x_ref.cols())
    throw ShapeError("rmse: shapes disagree");
  return std::sqrt((x - x_ref).squaredNorm() / static_cast<double>(x.size()));
}

// Angle in radians between two spectra; scale invariant. The cosine is
// clamped to [-1, 1] before acos.
inline double spectral_angle(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("spectral_angle: lengths disagree");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("spectral_angle: zero vector");
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

struct Alignment {
  std::vector<int> permutation;  // column permutation[k] of the estimate matches truth column k
  Matrix aligned;                // estimate with columns reordered
  double rmse = 0.0;
};

// Exhaustively searches column permutations (P <= 8) for the one that
// minimizes RMSE against the reference. Estimated abundances are only
// identifiable up to endmember order, so all reported RMSE_A go through
// this first.
inline Alignment align_columns(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw ShapeError("align_columns: shapes disagree");
  const int p = static_cast<int>(truth.cols());
  if (p > 8) throw ShapeError("align_columns: more than 8 columns");
  std::vector<int> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_sq = std::numeric_limits<double>::infinity();
  do {
    double sq = 0.0;
    for (int k = 0; k < p; ++k)
      sq += (estimate.col(perm[k]) - truth.col(k)).squaredNorm();
    if (sq < best_sq) {
      best_sq = sq;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Alignment out;
  out.permutation = best;
  out.aligned.resize(estimate.rows(), estimate.cols());
  for (int k = 0; k < p; ++k) out.aligned.col(k) = estimate.col(best[k]);
  out.rmse = std::sqrt(best_sq / static_cast<double>(estimate.size()));
  return out;
}

struct EvalReport {
  double rmse_a = std::numeric_limits<double>::quiet_NaN();
  double rmse_y = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> endmember_angles;
  std::vector<int> permutation;
  double seconds = 0.0;

  // Flat key-value document, one `key = value` per line.
  std::string to_key_value() const {
    std::string s;
    s += "rmse_a = " + format_double(rmse_a) + "\n";
    s += "rmse_y = " + format_double(rmse_y) + "\n";
    s += "angles = " + join(endmember_angles) + "\n";
    s += "permutation = " + join_ints(permutation) + "\n";
    s += "seconds = " + format_double(seconds) + "\n";
    return s;
  }

  static std::string csv_header() { return "rmse_a,rmse_y,angles,permutation,seconds"; }

  // Same fields and values as the key-value form, in header order.
  std::string to_csv_row() const {
    return format_double(rmse_a) + "," + format_double(rmse_y) + "," +
           join(endmember_angles) + "," + join_ints(permutation) + "," +
           format_double(seconds);
  }

 private:
  static std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ";";
      s += format_double(v[i]);
    }
    return s;
  }
  static std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ";";
      s += std::to_string(v[i]);
    }
    return s;
  }
};

}  // namespace unmix::metrics
