#include <doctest.h>

#include <cmath>
#include <vector>

#include "unmix/classic.hpp"
#include "unmix/metrics.hpp"
#include "unmix/simdata.hpp"

using unmix::Matrix;
using unmix::Vector;
using namespace unmix;
using namespace unmix::classic;

namespace {

// Exhaustive search over the simplex at a fixed step; the independent
// oracle for fcls objectives.
double simplex_grid_best_objective(const Matrix& endmembers, const Vector& pixel, double step) {
  const int p = static_cast<int>(endmembers.cols());
  REQUIRE(p == 3);
  double best = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::round(1.0 / step));
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j + i <= n; ++j) {
      Vector a(3);
      a << i * step, j * step, 1.0 - (i + j) * step;
      best = std::min(best, (pixel - endmembers * a).squaredNorm());
    }
  return best;
}

sim::HsiCube cube_of(Matrix rows) { return sim::HsiCube{std::move(rows), std::nullopt}; }

}  // namespace

TEST_SUITE("classic") {

TEST_CASE("pseudoinverse of orthonormal columns is the transpose") {
  Matrix q = Matrix::Identity(5, 2);
  CHECK((pseudoinverse(q) - q.transpose()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pseudoinverse of a single column is m^T / ||m||^2") {
  Vector m(3);
  m << 1.0, 2.0, 2.0;
  Matrix q = pseudoinverse(m);
  CHECK((q - m.transpose() / 9.0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pseudoinverse left-inverts random full-rank matrices") {
  unmix::Rng rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix m(30, 4);
    for (long j = 0; j < m.size(); ++j) m.data()[j] = unit(rng);
    Matrix q = pseudoinverse(m);
    CHECK((q * m - Matrix::Identity(4, 4)).norm() < 1e-8);
  }
}

TEST_CASE("pseudoinverse reports rank deficiency with a condition estimate") {
  Matrix m(4, 2);
  m.col(0) << 1.0, 1.0, 1.0, 1.0;
  m.col(1) = 2.0 * m.col(0);
  CHECK_THROWS_WITH_AS(pseudoinverse(m), doctest::Contains("condition"), NumericError);
}

TEST_CASE("vca recovers pure pixels on a noiseless cube") {
  sim::EndmemberMatrix em = sim::synth_endmembers(50, 3, 4);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(997, 3, 1.0, 5);
  // Plant the three pure pixels.
  Matrix fractions = ab.fractions;
  fractions.conservativeResize(1000, 3);
  fractions.row(997) << 1.0, 0.0, 0.0;
  fractions.row(998) << 0.0, 1.0, 0.0;
  fractions.row(999) << 0.0, 0.0, 1.0;
  sim::AbundanceMatrix planted{fractions, std::nullopt};
  sim::HsiCube cube = sim::lmm_mix(em, planted);

  for (std::uint64_t seed : {1ull, 2ull, 77ull}) {
    VcaResult r = vca(cube, 3, seed);
    // Greedy angle matching against the truth.
    std::vector<bool> used(3, false);
    for (int k = 0; k < 3; ++k) {
      double best = 10.0;
      int arg = -1;
      for (int t = 0; t < 3; ++t) {
        if (used[t]) continue;
        const double angle =
            metrics::spectral_angle(r.endmembers.spectra.col(k), em.spectra.col(t));
        if (angle < best) {
          best = angle;
          arg = t;
        }
      }
      used[arg] = true;
      CHECK(best < 1e-3);
    }
  }
}

TEST_CASE("vca with one endmember picks the most extreme pixel") {
  unmix::Rng rng(23);
  std::normal_distribution<double> gauss(0.0, 0.05);
  Matrix rows(40, 6);
  for (long i = 0; i < rows.rows(); ++i)
    for (long j = 0; j < rows.cols(); ++j) rows(i, j) = 0.5 + gauss(rng);
  sim::HsiCube cube = cube_of(rows);
  VcaResult r = vca(cube, 1, 3);
  REQUIRE(r.indices.size() == 1);

  // Recompute the projection magnitudes independently.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(rows.transpose() * rows / 40.0);
  const Vector top = eig.eigenvectors().col(5);
  long arg = 0;
  (rows * top).cwiseAbs().maxCoeff(&arg);
  CHECK(r.indices[0] == arg);
}

TEST_CASE("vca is deterministic per seed and errors on degenerate input") {
  sim::EndmemberMatrix em = sim::synth_endmembers(30, 3, 6);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(200, 3, 1.0, 7);
  sim::HsiCube cube = sim::lmm_mix(em, ab);
  VcaResult a = vca(cube, 3, 5);
  VcaResult b = vca(cube, 3, 5);
  CHECK(a.indices == b.indices);

  sim::HsiCube flat = cube_of(Matrix::Constant(20, 6, 0.4));
  CHECK_THROWS_AS(vca(flat, 2, 1), NumericError);
  CHECK_THROWS_AS(vca(cube, 300, 1), ShapeError);
}

TEST_CASE("fcls recovers exact abundances") {
  sim::EndmemberMatrix em = sim::synth_endmembers(40, 2, 8);

  // A pure pixel maps to the matching vertex.
  sim::HsiCube pure = cube_of(em.spectra.col(1).transpose());
  sim::AbundanceMatrix a1 = fcls(pure, em.spectra);
  CHECK(a1.fractions(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(a1.fractions(0, 1) == doctest::Approx(1.0).epsilon(1e-9));

  // An interior mixture is recovered exactly.
  Matrix y = 0.5 * em.spectra.col(0) + 0.5 * em.spectra.col(1);
  sim::AbundanceMatrix a2 = fcls(cube_of(y.transpose()), em.spectra);
  CHECK(std::abs(a2.fractions(0, 0) - 0.5) < 1e-6);
  CHECK(std::abs(a2.fractions(0, 1) - 0.5) < 1e-6);
}

TEST_CASE("fcls objective matches the simplex grid oracle on noisy pixels") {
  sim::EndmemberMatrix em = sim::synth_endmembers(25, 3, 9);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(40, 3, 1.0, 10);
  sim::HsiCube noisy = sim::add_noise_snr(sim::lmm_mix(em, ab), 15.0, 11);

  sim::AbundanceMatrix est = fcls(noisy, em.spectra, 2);
  for (long i = 0; i < noisy.pixel_count(); ++i) {
    const Vector pixel = noisy.pixels.row(i).transpose();
    const double mine = (pixel - em.spectra * est.fractions.row(i).transpose()).squaredNorm();
    const double oracle = simplex_grid_best_objective(em.spectra, pixel, 0.005);
    CHECK(mine <= oracle + 1e-4);
  }
}

TEST_CASE("fcls rows stay on the simplex under heavy noise") {
  sim::EndmemberMatrix em = sim::synth_endmembers(20, 3, 12);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(100, 3, 1.0, 13);
  sim::HsiCube noisy = sim::add_noise_snr(sim::lmm_mix(em, ab), 0.0, 14);
  sim::AbundanceMatrix est = fcls(noisy, em.spectra, 2);
  est.validate(1e-9);
}

TEST_CASE("fcls never beats itself when projected naively") {
  // The constrained objective is no better than evaluating at the
  // projection of the unconstrained solution.
  sim::EndmemberMatrix em = sim::synth_endmembers(30, 3, 15);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(25, 3, 1.0, 16);
  sim::HsiCube noisy = sim::add_noise_snr(sim::lmm_mix(em, ab), 10.0, 17);
  sim::AbundanceMatrix est = fcls(noisy, em.spectra);
  const Matrix pinv = pseudoinverse(em.spectra);
  for (long i = 0; i < noisy.pixel_count(); ++i) {
    const Vector pixel = noisy.pixels.row(i).transpose();
    Vector unconstrained = pinv * pixel;
    // Project: clip negatives, renormalize.
    Vector proj = unconstrained.cwiseMax(0.0);
    if (proj.sum() <= 0.0) proj = Vector::Constant(3, 1.0 / 3.0);
    proj /= proj.sum();
    const double fcls_obj = (pixel - em.spectra * est.fractions.row(i).transpose()).squaredNorm();
    const double proj_obj = (pixel - em.spectra * proj).squaredNorm();
    CHECK(fcls_obj <= proj_obj + 1e-10);
  }
}

TEST_CASE("nnls matches closed forms on tiny systems") {
  // Unconstrained optimum already nonnegative.
  Matrix a(3, 2);
  a << 1, 0, 0, 1, 0, 0;
  Vector b(3);
  b << 2.0, 3.0, 0.0;
  Vector x = nnls_normal(a.transpose() * a, a.transpose() * b);
  CHECK(x(0) == doctest::Approx(2.0));
  CHECK(x(1) == doctest::Approx(3.0));

  // Negative unconstrained optimum gets clamped to the boundary.
  Vector b2(3);
  b2 << -1.0, 4.0, 0.0;
  Vector x2 = nnls_normal(a.transpose() * a, a.transpose() * b2);
  CHECK(x2(0) == doctest::Approx(0.0));
  CHECK(x2(1) == doctest::Approx(4.0));
}

}  // TEST_SUITE
