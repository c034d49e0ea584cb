// Synthetic scene generation: endmember spectra, abundance fields, the
// linear/bilinear/post-nonlinear forward models, and SNR-calibrated noise.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/error.hpp"
#include "unmix/metrics.hpp"

namespace unmix::sim {

struct GridShape {
  int rows = 0;
  int cols = 0;
};

// L x P spectral signatures, one endmember per column.
struct EndmemberMatrix {
  enum class Provenance { generated, loaded, extracted };

  Matrix spectra;  // L x P
  Provenance provenance = Provenance::generated;

  long bands() const { return spectra.rows(); }
  long count() const { return spectra.cols(); }

  // generated/loaded spectra are reflectances in [0, 1]; spectra extracted
  // from a (possibly noisy) image are only required to be finite and
  // nonzero per column.
  void validate() const {
    if (spectra.rows() <= spectra.cols() || spectra.cols() < 1)
      throw ShapeError("endmembers: need more bands than endmembers (L > P >= 1)");
    require_finite(spectra, "endmember matrix");
    for (long k = 0; k < spectra.cols(); ++k)
      if (spectra.col(k).isZero(0.0))
        throw NumericError("endmembers: column " + std::to_string(k) + " is zero");
    if (provenance != Provenance::extracted &&
        (spectra.minCoeff() < 0.0 || spectra.maxCoeff() > 1.0))
      throw NumericError("endmembers: entries outside [0, 1]");
  }
};

// N x P abundances; every row lives on the unit simplex.
struct AbundanceMatrix {
  Matrix fractions;  // N x P
  std::optional<GridShape> grid;

  long pixels() const { return fractions.rows(); }
  long count() const { return fractions.cols(); }

  void validate(double tol = 1e-9) const {
    require_finite(fractions, "abundance matrix");
    if (grid && static_cast<long>(grid->rows) * grid->cols != fractions.rows())
      throw ShapeError("abundances: grid shape does not match pixel count");
    for (long i = 0; i < fractions.rows(); ++i) {
      if (fractions.row(i).minCoeff() < -tol)
        throw NumericError("abundances: negative entry in row " + std::to_string(i));
      if (std::abs(fractions.row(i).sum() - 1.0) > tol)
        throw NumericError("abundances: row " + std::to_string(i) + " is off the simplex");
    }
  }
};

// N pixels x L bands of reflectance, pixel per row.
struct HsiCube {
  Matrix pixels;  // N x L
  std::optional<GridShape> grid;

  long pixel_count() const { return pixels.rows(); }
  long band_count() const { return pixels.cols(); }
};

enum class AbundanceSampler { dirichlet, grf };
enum class MixingModel { lmm, blmm, pnmm };

inline const char* to_string(MixingModel m) {
  switch (m) {
    case MixingModel::lmm: return "lmm";
    case MixingModel::blmm: return "blmm";
    case MixingModel::pnmm: return "pnmm";
  }
  return "?";
}

inline const char* to_string(AbundanceSampler s) {
  return s == AbundanceSampler::dirichlet ? "dirichlet" : "grf";
}

// Full description of a synthetic scene; the seed determines the output.
struct SceneSpec {
  long pixel_count = 0;             // used when grid is absent
  std::optional<GridShape> grid;    // implies pixel_count = rows * cols
  int bands = 0;
  int endmembers = 0;
  AbundanceSampler sampler = AbundanceSampler::dirichlet;
  double dirichlet_concentration = 1.0;
  double grf_correlation_length = 5.0;
  MixingModel model = MixingModel::lmm;
  double pnmm_exponent = 0.7;
  std::optional<double> snr_db;     // empty = noiseless
  std::uint64_t seed = 1;

  long pixels() const {
    return grid ? static_cast<long>(grid->rows) * grid->cols : pixel_count;
  }
  void validate() const {
    if (pixels() < 1 || bands < 2 || endmembers < 1 || bands <= endmembers)
      throw ShapeError("scene: counts must be positive with L > P");
    if (pnmm_exponent <= 0.0) throw NumericError("scene: exponent must be positive");
  }
};

// -- endmember synthesis -----------------------------------------------------

// Smooth positive spectra: a convex parabolic baseline plus 3..6 Gaussian
// bumps, rescaled to peak at 0.9. Stands in for a spectral library in
// self-contained runs. Resamples until all pairwise spectral angles are at
// least 0.15 rad.
inline EndmemberMatrix synth_endmembers(int bands, int count, std::uint64_t seed) {
  if (bands <= count || count < 1) throw ShapeError("synth_endmembers: need L > P >= 1");
  Rng rng(mix_seed(seed, 0xE5D));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> bump_count(3, 6);

  constexpr double kMinAngle = 0.15;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix m(bands, count);
    for (int k = 0; k < count; ++k) {
      const double base = 0.05 + 0.25 * unit(rng);
      const double curv = 0.3 + 1.2 * unit(rng);
      const double vertex = 0.2 + 0.6 * unit(rng);
      const int bumps = bump_count(rng);
      std::vector<double> amp(bumps), center(bumps), width(bumps);
      for (int b = 0; b < bumps; ++b) {
        amp[b] = 0.2 + 0.8 * unit(rng);
        center[b] = unit(rng);
        width[b] = 0.03 + 0.09 * unit(rng);
      }
      for (int i = 0; i < bands; ++i) {
        const double t = bands == 1 ? 0.0 : static_cast<double>(i) / (bands - 1);
        double v = base + curv * (t - vertex) * (t - vertex);
        for (int b = 0; b < bumps; ++b) {
          const double d = (t - center[b]) / width[b];
          v += amp[b] * std::exp(-0.5 * d * d);
        }
        m(i, k) = v;
      }
      m.col(k) *= 0.9 / m.col(k).maxCoeff();
    }
    double min_angle = std::numeric_limits<double>::infinity();
    for (int i = 0; i < count; ++i)
      for (int j = i + 1; j < count; ++j)
        min_angle = std::min(min_angle, metrics::spectral_angle(m.col(i), m.col(j)));
    if (count < 2 || min_angle >= kMinAngle) {
      EndmemberMatrix out{std::move(m), EndmemberMatrix::Provenance::generated};
      out.validate();
      return out;
    }
  }
  throw NumericError("synth_endmembers: could not reach the pairwise-angle floor in 100 draws");
}

// -- abundance samplers -------------------------------------------------------

// I.i.d. rows from a symmetric Dirichlet(concentration).
inline AbundanceMatrix sample_dirichlet_abundances(long pixels, int count,
                                                   double concentration,
                                                   std::uint64_t seed) {
  if (pixels < 1 || count < 1 || concentration <= 0.0)
    throw ShapeError("dirichlet: need N >= 1, P >= 1, concentration > 0");
  Rng rng(mix_seed(seed, 0xD14));
  std::gamma_distribution<double> gamma(concentration, 1.0);
  Matrix a(pixels, count);
  for (long i = 0; i < pixels; ++i) {
    double total = 0.0;
    for (int k = 0; k < count; ++k) {
      a(i, k) = gamma(rng);
      total += a(i, k);
    }
    if (total <= 0.0)
      a.row(i).setConstant(1.0 / count);
    else
      a.row(i) /= total;
  }
  AbundanceMatrix out{std::move(a), std::nullopt};
  out.validate();
  return out;
}

namespace detail {

// Separable convolution with a truncated Gaussian kernel, zero padding.
inline Matrix smooth_field(const Matrix& field, double kernel_sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * kernel_sigma)));
  Vector kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel(i + radius) = std::exp(-0.5 * (i * i) / (kernel_sigma * kernel_sigma));
  kernel /= kernel.sum();

  const long rows = field.rows(), cols = field.cols();
  Matrix horiz = Matrix::Zero(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const long cc = c + k;
        if (cc >= 0 && cc < cols) acc += kernel(k + radius) * field(r, cc);
      }
      horiz(r, c) = acc;
    }
  Matrix out = Matrix::Zero(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const long rr = r + k;
        if (rr >= 0 && rr < rows) acc += kernel(k + radius) * horiz(rr, c);
      }
      out(r, c) = acc;
    }
  return out;
}

}  // namespace detail

// Spatially correlated fields: white noise convolved with a truncated
// Gaussian kernel (kernel sigma = corr_len / sqrt(2), so the smoothed field
// has a squared-exponential correlation of length ~corr_len), mapped to the
// simplex by |.| then row normalization.
inline AbundanceMatrix sample_grf_abundances(int rows, int cols, int count,
                                             double corr_len, std::uint64_t seed) {
  if (rows < 1 || cols < 1 || count < 1 || corr_len <= 0.0)
    throw ShapeError("grf: need a nonempty grid and corr_len > 0");
  Rng rng(mix_seed(seed, 0x62F));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = corr_len / std::sqrt(2.0);

  const long pixels = static_cast<long>(rows) * cols;
  Matrix a(pixels, count);
  for (int k = 0; k < count; ++k) {
    Matrix noise(rows, cols);
    for (long j = 0; j < noise.size(); ++j) noise.data()[j] = gauss(rng);
    Matrix field = detail::smooth_field(noise, sigma);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) a(static_cast<long>(r) * cols + c, k) = std::abs(field(r, c));
  }
  for (long i = 0; i < pixels; ++i) {
    const double total = a.row(i).sum();
    if (total <= 0.0)
      a.row(i).setConstant(1.0 / count);
    else
      a.row(i) /= total;
  }
  AbundanceMatrix out{std::move(a), GridShape{rows, cols}};
  out.validate();
  return out;
}

// -- forward models ------------------------------------------------------------

inline void check_mix_shapes(const EndmemberMatrix& em, const AbundanceMatrix& ab) {
  if (em.count() != ab.count())
    throw ShapeError("mix: endmember count differs between M and A");
}

// y_n = M a_n.
inline HsiCube lmm_mix(const EndmemberMatrix& em, const AbundanceMatrix& ab) {
  check_mix_shapes(em, ab);
  return HsiCube{ab.fractions * em.spectra.transpose(), ab.grid};
}

// y_n = M a_n + sum_{i<j} a_ni a_nj (m_i . m_j), the pairwise interaction model.
inline HsiCube blmm_mix(const EndmemberMatrix& em, const AbundanceMatrix& ab) {
  check_mix_shapes(em, ab);
  Matrix y = ab.fractions * em.spectra.transpose();
  const long p = em.count();
  for (long i = 0; i < p; ++i)
    for (long j = i + 1; j < p; ++j) {
      const Vector cross = em.spectra.col(i).cwiseProduct(em.spectra.col(j));
      const Vector weight = ab.fractions.col(i).cwiseProduct(ab.fractions.col(j));
      y.noalias() += weight * cross.transpose();
    }
  return HsiCube{std::move(y), ab.grid};
}

// y_n = (M a_n)^xi elementwise. xi == 1 is exactly the linear model.
inline HsiCube pnmm_mix(const EndmemberMatrix& em, const AbundanceMatrix& ab, double exponent) {
  check_mix_shapes(em, ab);
  Matrix y = ab.fractions * em.spectra.transpose();
  if (exponent == 1.0) return HsiCube{std::move(y), ab.grid};
  const bool integer_exponent = exponent == std::floor(exponent);
  if (!integer_exponent && y.minCoeff() < 0.0)
    throw NumericError("pnmm_mix: negative base with non-integer exponent");
  y = y.unaryExpr([exponent](double v) { return std::pow(v, exponent); });
  return HsiCube{std::move(y), ab.grid};
}

// Adds i.i.d. zero-mean Gaussian noise calibrated so that the cube-wide
// signal-to-noise ratio equals snr_db. Empty snr leaves the cube untouched.
inline HsiCube add_noise_snr(const HsiCube& cube, std::optional<double> snr_db,
                             std::uint64_t seed) {
  require_finite(cube.pixels, "cube");
  if (!snr_db) return cube;
  const double power = cube.pixels.squaredNorm() / static_cast<double>(cube.pixels.size());
  const double sigma = std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
  Rng rng(mix_seed(seed, 0x401));
  std::normal_distribution<double> gauss(0.0, sigma);
  HsiCube out = cube;
  for (long j = 0; j < out.pixels.size(); ++j) out.pixels.data()[j] += gauss(rng);
  return out;
}

// -- whole-scene convenience -----------------------------------------------------

struct Scene {
  HsiCube cube;
  AbundanceMatrix abundances;
  EndmemberMatrix endmembers;
};

// Deterministic end-to-end generation. An explicit endmember matrix (e.g.
// loaded from CSV) overrides the synthetic generator.
inline Scene generate_scene(const SceneSpec& spec,
                            std::optional<EndmemberMatrix> endmembers = std::nullopt) {
  spec.validate();
  Scene s{{}, {}, endmembers ? std::move(*endmembers)
                             : synth_endmembers(spec.bands, spec.endmembers, spec.seed)};
  s.endmembers.validate();
  if (s.endmembers.bands() != spec.bands || s.endmembers.count() != spec.endmembers)
    throw ShapeError("generate_scene: endmember matrix does not match the scene spec");
  if (spec.sampler == AbundanceSampler::dirichlet) {
    s.abundances = sample_dirichlet_abundances(spec.pixels(), spec.endmembers,
                                               spec.dirichlet_concentration, spec.seed);
    s.abundances.grid = spec.grid;
  } else {
    if (!spec.grid) throw ShapeError("generate_scene: grf sampler needs a grid shape");
    s.abundances = sample_grf_abundances(spec.grid->rows, spec.grid->cols, spec.endmembers,
                                         spec.grf_correlation_length, spec.seed);
  }
  switch (spec.model) {
    case MixingModel::lmm: s.cube = lmm_mix(s.endmembers, s.abundances); break;
    case MixingModel::blmm: s.cube = blmm_mix(s.endmembers, s.abundances); break;
    case MixingModel::pnmm: s.cube = pnmm_mix(s.endmembers, s.abundances, spec.pnmm_exponent); break;
  }
  s.cube = add_noise_snr(s.cube, spec.snr_db, mix_seed(spec.seed, 0x5E));
  return s;
}

}  // namespace unmix::sim
