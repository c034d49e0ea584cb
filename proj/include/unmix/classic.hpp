// Classical unmixing building blocks: Moore-Penrose pseudoinverse via the
// normal equations, vertex component analysis for endmember extraction,
// and the fully constrained least squares baseline on top of an active-set
// nonnegative least squares solver.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "unmix/core.hpp"
#include "unmix/error.hpp"
#include "unmix/simdata.hpp"

namespace unmix::classic {

// Q = (M^T M)^-1 M^T, solved with a Cholesky factorization of the P x P
// normal matrix. Errors out when the normal matrix looks worse than 1e12.
inline Matrix pseudoinverse(const Matrix& m) {
  if (m.rows() < m.cols() || m.cols() < 1)
    throw ShapeError("pseudoinverse: matrix must be tall (L >= P >= 1)");
  require_finite(m, "pseudoinverse input");
  const Matrix normal = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(normal);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw NumericError("pseudoinverse: rank-deficient matrix (condition estimate " +
                       format_double(lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity()) +
                       ")");
  Eigen::LLT<Matrix> chol(normal);
  if (chol.info() != Eigen::Success)
    throw NumericError("pseudoinverse: Cholesky factorization failed");
  return chol.solve(m.transpose());
}

struct VcaResult {
  sim::EndmemberMatrix endmembers;  // L x P columns copied from the cube
  std::vector<long> indices;        // selected pixel rows, in selection order
};

// Vertex component analysis, PCA branch: project the pixels onto the
// top-P eigenvectors of the (uncentered) data covariance, then repeatedly
// pick the pixel with the largest |projection| onto a random direction
// orthogonal to everything picked so far. The uncentered projection keeps
// the simplex vertices linearly independent in the P coordinates, so on
// noiseless data whose convex hull contains the pure pixels this recovers
// them.
inline VcaResult vca(const sim::HsiCube& cube, int count, std::uint64_t seed) {
  const long n = cube.pixel_count();
  const long bands = cube.band_count();
  if (count < 1 || n < count || bands < count)
    throw ShapeError("vca: need at least P pixels and P bands");
  require_finite(cube.pixels, "vca input");

  const Matrix second_moment =
      cube.pixels.transpose() * cube.pixels / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(second_moment);
  const double top = eig.eigenvalues()(bands - 1);
  const double pth = eig.eigenvalues()(bands - count);
  if (!(top > 0.0) || pth <= 1e-15 * top)
    throw NumericError("vca: degenerate covariance (data does not span P dimensions)");

  // Eigenvalues come out ascending; keep the top-P directions.
  Matrix basis(bands, count);
  for (int k = 0; k < count; ++k) basis.col(k) = eig.eigenvectors().col(bands - 1 - k);
  const Matrix projected = cube.pixels * basis;  // n x P coordinates

  Rng rng(mix_seed(seed, 0x5CA));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<long> picked;
  Matrix ortho(count, 0);  // orthonormal basis of the picked coordinates

  for (int step = 0; step < count; ++step) {
    long best = -1;
    for (int attempt = 0; attempt < 64 && best < 0; ++attempt) {
      Vector direction(count);
      for (int j = 0; j < count; ++j) direction(j) = gauss(rng);
      if (ortho.cols() > 0) direction -= ortho * (ortho.transpose() * direction);
      const double norm = direction.norm();
      if (norm < 1e-12) continue;
      direction /= norm;
      const Vector response = projected * direction;
      long arg = 0;
      response.cwiseAbs().maxCoeff(&arg);
      bool duplicate = false;
      for (long p : picked) duplicate = duplicate || p == arg;
      if (!duplicate) best = arg;
    }
    if (best < 0) throw NumericError("vca: could not find a new extreme pixel");
    picked.push_back(best);
    // Extend the orthonormal basis with the new pixel's coordinates.
    Vector coord = projected.row(best).transpose();
    if (ortho.cols() > 0) coord -= ortho * (ortho.transpose() * coord);
    const double norm = coord.norm();
    if (norm > 1e-12) {
      ortho.conservativeResize(Eigen::NoChange, ortho.cols() + 1);
      ortho.col(ortho.cols() - 1) = coord / norm;
    }
  }

  Matrix m(bands, count);
  for (int k = 0; k < count; ++k) m.col(k) = cube.pixels.row(picked[k]).transpose();
  VcaResult out{{std::move(m), sim::EndmemberMatrix::Provenance::extracted}, std::move(picked)};
  out.endmembers.validate();
  return out;
}

// Lawson-Hanson style active-set NNLS on precomputed cross products:
// minimizes ||A x - b||^2 with x >= 0 given G = A^T A and h = A^T b.
// Throws after 3n passive-set changes without convergence.
inline Vector nnls_normal(const Matrix& gram, const Vector& rhs) {
  const int n = static_cast<int>(gram.rows());
  if (gram.cols() != n || rhs.size() != n) throw ShapeError("nnls: dimension mismatch");
  Vector x = Vector::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff());
  const int max_changes = 3 * n;
  int changes = 0;

  auto solve_passive = [&](std::vector<int>& idx) -> Vector {
    idx.clear();
    for (int j = 0; j < n; ++j)
      if (passive[j]) idx.push_back(j);
    Matrix sub(idx.size(), idx.size());
    Vector sub_rhs(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      sub_rhs(r) = rhs(idx[r]);
      for (std::size_t c = 0; c < idx.size(); ++c) sub(r, c) = gram(idx[r], idx[c]);
    }
    Eigen::LDLT<Matrix> ldlt(sub);
    if (ldlt.info() != Eigen::Success) throw NumericError("nnls: singular passive subsystem");
    return ldlt.solve(sub_rhs);
  };

  while (true) {
    const Vector dual = rhs - gram * x;
    int best = -1;
    double best_dual = tol;
    for (int j = 0; j < n; ++j)
      if (!passive[j] && dual(j) > best_dual) {
        best_dual = dual(j);
        best = j;
      }
    if (best < 0) break;
    passive[best] = true;
    if (++changes > max_changes) throw NumericError("nnls: active set did not converge");

    std::vector<int> idx;
    while (true) {
      Vector trial = solve_passive(idx);
      double alpha = 1.0;
      int blocker = -1;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (trial(r) > 0.0) continue;
        const double xi = x(idx[r]);
        const double step = xi / (xi - trial(r));
        if (step < alpha) {
          alpha = step;
          blocker = idx[r];
        }
      }
      if (blocker < 0) {
        for (std::size_t r = 0; r < idx.size(); ++r) x(idx[r]) = trial(r);
        break;
      }
      for (std::size_t r = 0; r < idx.size(); ++r)
        x(idx[r]) = x(idx[r]) + alpha * (trial(r) - x(idx[r]));
      x(blocker) = 0.0;
      passive[blocker] = false;
      if (++changes > max_changes) throw NumericError("nnls: active set did not converge");
    }
  }
  return x;
}

// Fully constrained least squares: per pixel, min ||y - M a||^2 with a on
// the simplex, via NNLS on the system augmented with the row delta * 1^T
// (delta = 1e3 * max|M|) and an exact renormalization afterwards. Pixels
// are independent; `threads` > 1 splits them across workers.
inline sim::AbundanceMatrix fcls(const sim::HsiCube& cube, const Matrix& endmembers,
                                 int threads = 1) {
  const long n = cube.pixel_count();
  const int p = static_cast<int>(endmembers.cols());
  if (cube.band_count() != endmembers.rows())
    throw ShapeError("fcls: cube bands and endmember bands disagree");
  require_finite(endmembers, "fcls endmembers");
  // Reject rank-deficient endmembers up front (same guard as pseudoinverse).
  (void)pseudoinverse(endmembers);

  const double delta = 1e3 * endmembers.cwiseAbs().maxCoeff();
  const Matrix gram =
      endmembers.transpose() * endmembers + Matrix::Constant(p, p, delta * delta);
  const Matrix cross = endmembers.transpose() * cube.pixels.transpose();  // p x n

  Matrix a(n, p);
  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      if (failed.load(std::memory_order_relaxed)) return;
      try {
        const Vector rhs = cross.col(i) + Vector::Constant(p, delta * delta);
        Vector sol = nnls_normal(gram, rhs);
        const double total = sol.sum();
        if (!(total > 0.0))
          throw NumericError("fcls: zero solution for pixel " + std::to_string(i));
        a.row(i) = (sol / total).transpose();
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed = true;
        failure = e.what();
      }
    }
  };

  const int worker_count = std::max(1, threads);
  if (worker_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < worker_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failed) throw NumericError(failure);

  sim::AbundanceMatrix out{std::move(a), cube.grid};
  out.validate();
  return out;
}

}  // namespace unmix::classic
