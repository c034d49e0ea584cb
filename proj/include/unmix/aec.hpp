// The model-based autoencoder: a decoder of the form
// relu(M a + mlp_D(a, vec(M))) and an encoder that runs the pixel through
// the trainable pseudoinverse surrogate Q, scaled per endmember, plus an
// MLP correction, then maps onto the simplex with normalized |.|.
// Two ablations share the code path: nfaec drops the encoder's linear
// branch, mfaec drops both linear branches.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unmix/classic.hpp"
#include "unmix/core.hpp"
#include "unmix/error.hpp"
#include "unmix/simdata.hpp"
#include "unmix/tape.hpp"

namespace unmix::aec {

enum class Variant : std::uint32_t { macu = 0, nfaec = 1, mfaec = 2 };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::macu: return "macu";
    case Variant::nfaec: return "nfaec";
    case Variant::mfaec: return "mfaec";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "macu") return Variant::macu;
  if (s == "nfaec") return Variant::nfaec;
  if (s == "mfaec") return Variant::mfaec;
  throw IoError("unknown variant: " + s);
}

constexpr double kLeakySlope = 0.01;

// One fully connected layer; the final layer of each MLP carries no bias.
struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out, or empty
  bool has_bias() const { return bias.size() > 0; }
};

// Layer widths from the fixed architecture; non-integer halves/quarters
// round up.
struct Architecture {
  int bands = 0;
  int endmembers = 0;

  std::vector<int> encoder_widths() const {
    const int l = bands, p = endmembers;
    return {l, 2 * l, (l + 1) / 2, (l + 3) / 4, 4 * p, p, p};
  }
  std::vector<int> decoder_widths() const {
    const int l = bands, p = endmembers;
    return {p * (l + 1), p * l, l, l, l};
  }
  int encoder_input_width() const { return bands; }
  int decoder_input_width() const { return endmembers * (bands + 1); }
};

struct AecParams {
  Variant variant = Variant::macu;
  int bands = 0;
  int endmembers = 0;
  std::uint64_t seed = 0;

  Matrix endmembers_mat;        // L x P, trainable
  Matrix endmembers_init;       // L x P, frozen copy of the initialization
  Matrix encoder_pinv;          // P x L, macu only
  Matrix encoder_gain_raw;      // 1 x P free vector, used as |.|, macu only
  std::vector<DenseLayer> encoder_mlp;
  std::vector<DenseLayer> decoder_mlp;

  bool has_linear_encoder() const { return variant == Variant::macu; }
  bool has_linear_decoder() const { return variant != Variant::mfaec; }

  // Nonnegative per-endmember gains actually applied by the encoder.
  Matrix encoder_gain() const { return encoder_gain_raw.cwiseAbs(); }

  // Trainable tensors in checkpoint order. The frozen initialization is
  // not part of the gradient step.
  std::vector<Matrix*> param_refs() {
    std::vector<Matrix*> out;
    out.push_back(&endmembers_mat);
    if (has_linear_encoder()) {
      out.push_back(&encoder_pinv);
      out.push_back(&encoder_gain_raw);
    }
    for (auto& layer : encoder_mlp) {
      out.push_back(&layer.weight);
      if (layer.has_bias()) out.push_back(&layer.bias);
    }
    for (auto& layer : decoder_mlp) {
      out.push_back(&layer.weight);
      if (layer.has_bias()) out.push_back(&layer.bias);
    }
    return out;
  }
  std::vector<const Matrix*> param_refs() const {
    auto refs = const_cast<AecParams*>(this)->param_refs();
    return std::vector<const Matrix*>(refs.begin(), refs.end());
  }
};

namespace detail {

inline std::vector<DenseLayer> init_mlp(int input_width, const std::vector<int>& widths,
                                        Rng& rng) {
  std::vector<DenseLayer> layers;
  int fan_in = input_width;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int out = widths[i];
    const double limit = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> uniform(-limit, limit);
    DenseLayer layer;
    layer.weight.resize(out, fan_in);
    for (long j = 0; j < layer.weight.size(); ++j) layer.weight.data()[j] = uniform(rng);
    if (i + 1 < widths.size()) layer.bias = Matrix::Zero(1, out);
    layers.push_back(std::move(layer));
    fan_in = out;
  }
  return layers;
}

// X (rows x in) -> leaky-relu dense stack. Every layer is activated; only
// the final bias is absent.
inline Matrix mlp_apply(const std::vector<DenseLayer>& layers, Matrix x) {
  for (const auto& layer : layers) {
    Matrix z = x * layer.weight.transpose();
    if (layer.has_bias()) z.rowwise() += layer.bias.row(0);
    x = z.unaryExpr([](double v) { return v >= 0.0 ? v : kLeakySlope * v; });
  }
  return x;
}

}  // namespace detail

// Fresh parameters: He-style uniform weights, zero biases, gains at one,
// M = M0 = the caller-supplied (typically VCA) matrix, Q = pinv(M0).
inline AecParams build_network(int bands, int endmembers, Variant variant,
                               const Matrix& initial_endmembers, std::uint64_t seed) {
  if (endmembers < 2 || bands <= endmembers)
    throw ShapeError("build_network: need L > P >= 2");
  if (initial_endmembers.rows() != bands || initial_endmembers.cols() != endmembers)
    throw ShapeError("build_network: initial endmember matrix has the wrong shape");
  require_finite(initial_endmembers, "initial endmembers");

  AecParams p;
  p.variant = variant;
  p.bands = bands;
  p.endmembers = endmembers;
  p.seed = seed;
  p.endmembers_mat = initial_endmembers;
  p.endmembers_init = initial_endmembers;
  if (p.has_linear_encoder()) {
    p.encoder_pinv = classic::pseudoinverse(initial_endmembers);
    p.encoder_gain_raw = Matrix::Ones(1, endmembers);
  }
  Architecture arch{bands, endmembers};
  Rng rng(mix_seed(seed, 0xAEC));
  p.encoder_mlp = detail::init_mlp(arch.encoder_input_width(), arch.encoder_widths(), rng);
  p.decoder_mlp = detail::init_mlp(arch.decoder_input_width(), arch.decoder_widths(), rng);
  return p;
}

// -- inference (no tape) -------------------------------------------------------

// Abundances for a block of pixels (rows). Output rows are on the simplex
// for every input and every parameter value.
inline Matrix encode(const Matrix& pixels, const AecParams& p) {
  if (pixels.cols() != p.bands) throw ShapeError("encode: pixel width differs from band count");
  Matrix pre = detail::mlp_apply(p.encoder_mlp, pixels);
  if (p.has_linear_encoder()) {
    Matrix linear = pixels * p.encoder_pinv.transpose();  // N x P
    linear.array().rowwise() *= p.encoder_gain().row(0).array();
    pre += linear;
  }
  Matrix out = pre.cwiseAbs();
  const double uniform = 1.0 / p.endmembers;
  for (long i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s == 0.0)
      out.row(i).setConstant(uniform);
    else
      out.row(i) /= s;
  }
  return out;
}

// Reconstructions for a block of abundances (rows); elementwise nonnegative.
inline Matrix decode(const Matrix& abundances, const AecParams& p) {
  if (abundances.cols() != p.endmembers)
    throw ShapeError("decode: abundance width differs from endmember count");
  const long n = abundances.rows();
  // vec(M) replicated per pixel, concatenated after the abundances.
  Matrix mlp_input(n, p.endmembers + p.bands * p.endmembers);
  mlp_input.leftCols(p.endmembers) = abundances;
  Eigen::Map<const Eigen::RowVectorXd> vec_m(p.endmembers_mat.data(),
                                             p.endmembers_mat.size());
  mlp_input.rightCols(vec_m.size()).rowwise() = vec_m;
  Matrix out = detail::mlp_apply(p.decoder_mlp, std::move(mlp_input));
  if (p.has_linear_decoder()) out += abundances * p.endmembers_mat.transpose();
  return out.cwiseMax(0.0);
}

// decode(encode(.)) in blocks, for whole-cube reconstruction.
inline Matrix reconstruct(const Matrix& pixels, const AecParams& p, long block = 4096) {
  Matrix out(pixels.rows(), pixels.cols());
  for (long start = 0; start < pixels.rows(); start += block) {
    const long len = std::min(block, pixels.rows() - start);
    out.middleRows(start, len) = decode(encode(pixels.middleRows(start, len), p), p);
  }
  return out;
}

// -- training graph --------------------------------------------------------------

// Tape handles for every trainable tensor, in param_refs order, plus named
// aliases for the structured pieces.
struct TapeParams {
  std::vector<diff::Var> all;
  diff::Var endmembers;
  diff::Var encoder_pinv;
  diff::Var encoder_gain_raw;
  std::vector<diff::Var> encoder_weights, encoder_biases;  // biases align by layer
  std::vector<diff::Var> decoder_weights, decoder_biases;
};

inline TapeParams stage_params(diff::Tape& tape, const AecParams& p) {
  TapeParams tp;
  auto track = [&](const Matrix& m) {
    diff::Var v = tape.input(m);
    tp.all.push_back(v);
    return v;
  };
  tp.endmembers = track(p.endmembers_mat);
  if (p.has_linear_encoder()) {
    tp.encoder_pinv = track(p.encoder_pinv);
    tp.encoder_gain_raw = track(p.encoder_gain_raw);
  }
  for (const auto& layer : p.encoder_mlp) {
    tp.encoder_weights.push_back(track(layer.weight));
    tp.encoder_biases.push_back(layer.has_bias() ? track(layer.bias) : diff::Var{});
  }
  for (const auto& layer : p.decoder_mlp) {
    tp.decoder_weights.push_back(track(layer.weight));
    tp.decoder_biases.push_back(layer.has_bias() ? track(layer.bias) : diff::Var{});
  }
  return tp;
}

namespace detail {

inline diff::Var mlp_on_tape(diff::Tape& tape, diff::Var x, const std::vector<diff::Var>& weights,
                             const std::vector<diff::Var>& biases) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    diff::Var z = tape.matmul(x, weights[i], false, true);
    if (biases[i].id >= 0) z = tape.add(z, biases[i]);
    x = tape.leaky_relu(z, kLeakySlope);
  }
  return x;
}

}  // namespace detail

// Encoder MLP output before the simplex map (the nonlinear fluctuation of
// the encoder).
inline diff::Var encoder_mlp_on_tape(diff::Tape& tape, diff::Var pixels, const TapeParams& tp) {
  return detail::mlp_on_tape(tape, pixels, tp.encoder_weights, tp.encoder_biases);
}

inline diff::Var encode_on_tape(diff::Tape& tape, diff::Var pixels, const TapeParams& tp,
                                const AecParams& p) {
  diff::Var pre = encoder_mlp_on_tape(tape, pixels, tp);
  if (p.has_linear_encoder()) {
    diff::Var linear = tape.matmul(pixels, tp.encoder_pinv, false, true);
    linear = tape.mul(linear, tape.abs(tp.encoder_gain_raw));
    pre = tape.add(pre, linear);
  }
  return tape.row_normalize(tape.abs(pre));
}

// Decoder MLP output (the nonlinear fluctuation of the mixing model).
inline diff::Var decoder_mlp_on_tape(diff::Tape& tape, diff::Var abundances,
                                     const TapeParams& tp, const AecParams& p) {
  diff::Var vec_m = tape.reshape(tp.endmembers, 1, p.bands * p.endmembers);
  diff::Var mlp_input = tape.concat_cols(abundances, vec_m);
  return detail::mlp_on_tape(tape, mlp_input, tp.decoder_weights, tp.decoder_biases);
}

inline diff::Var decode_on_tape(diff::Tape& tape, diff::Var abundances, const TapeParams& tp,
                                const AecParams& p) {
  diff::Var out = decoder_mlp_on_tape(tape, abundances, tp, p);
  if (p.has_linear_decoder())
    out = tape.add(out, tape.matmul(abundances, tp.endmembers, false, true));
  return tape.relu(out);
}

// -- diagnostics ----------------------------------------------------------------

// Per-pixel norms of the two nonlinear branches, pulled into the abundance
// space on the decoder side: ||omega_E(y_n)|| and ||Q omega_D(a_n, M)||.
// Balanced norms are what good abundance recovery requires; this only
// reports, it enforces nothing.
struct NonlinearityReport {
  Vector encoder_norms;
  Vector decoder_norms;
  double mean_gap = 0.0;
};

inline NonlinearityReport nonlinearity_report(const Matrix& pixels, const AecParams& p) {
  const Matrix abundances = encode(pixels, p);
  const Matrix enc_fluct = detail::mlp_apply(p.encoder_mlp, pixels);

  Matrix mlp_input(pixels.rows(), p.endmembers + p.bands * p.endmembers);
  mlp_input.leftCols(p.endmembers) = abundances;
  Eigen::Map<const Eigen::RowVectorXd> vec_m(p.endmembers_mat.data(), p.endmembers_mat.size());
  mlp_input.rightCols(vec_m.size()).rowwise() = vec_m;
  const Matrix dec_fluct = detail::mlp_apply(p.decoder_mlp, std::move(mlp_input));
  const Matrix pinv = p.has_linear_encoder() ? p.encoder_pinv
                                             : classic::pseudoinverse(p.endmembers_mat);
  const Matrix dec_projected = dec_fluct * pinv.transpose();  // N x P

  NonlinearityReport r;
  r.encoder_norms = enc_fluct.rowwise().norm();
  r.decoder_norms = dec_projected.rowwise().norm();
  r.mean_gap = (r.encoder_norms - r.decoder_norms).cwiseAbs().mean();
  return r;
}

// -- checkpoint file --------------------------------------------------------------
//
// Binary layout (all little-endian):
//   magic "UNMIXAEC", u32 version = 1,
//   u32 variant, u32 bands, u32 endmembers, u64 seed,
//   then f64 arrays, column-major: M, M0, [Q, gain if macu],
//   encoder layers (weight, then bias when present), decoder layers.

namespace detail {

inline void put_bytes(std::ostream& os, const void* data, std::size_t size) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

template <typename T>
void put_scalar(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  put_bytes(os, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

template <typename T>
T get_scalar(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("checkpoint: truncated header");
  return v;
}

inline Matrix get_matrix(std::istream& is, long rows, long cols) {
  Matrix m(rows, cols);
  if (!is.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * m.size())))
    throw IoError("checkpoint: truncated parameter array");
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const AecParams& p) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write("UNMIXAEC", 8);
  detail::put_scalar<std::uint32_t>(os, 1);
  detail::put_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(p.variant));
  detail::put_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(p.bands));
  detail::put_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(p.endmembers));
  detail::put_scalar<std::uint64_t>(os, p.seed);
  detail::put_matrix(os, p.endmembers_mat);
  detail::put_matrix(os, p.endmembers_init);
  if (p.has_linear_encoder()) {
    detail::put_matrix(os, p.encoder_pinv);
    detail::put_matrix(os, p.encoder_gain_raw);
  }
  for (const auto& layer : p.encoder_mlp) {
    detail::put_matrix(os, layer.weight);
    if (layer.has_bias()) detail::put_matrix(os, layer.bias);
  }
  for (const auto& layer : p.decoder_mlp) {
    detail::put_matrix(os, layer.weight);
    if (layer.has_bias()) detail::put_matrix(os, layer.bias);
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

inline AecParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "UNMIXAEC", 8) != 0)
    throw IoError("checkpoint: bad magic");
  const auto version = detail::get_scalar<std::uint32_t>(is);
  if (version != 1) throw IoError("checkpoint: unsupported version");
  const auto variant = static_cast<Variant>(detail::get_scalar<std::uint32_t>(is));
  const int bands = static_cast<int>(detail::get_scalar<std::uint32_t>(is));
  const int endmembers = static_cast<int>(detail::get_scalar<std::uint32_t>(is));
  const auto seed = detail::get_scalar<std::uint64_t>(is);
  if (bands <= endmembers || endmembers < 2) throw IoError("checkpoint: bad dimensions");

  AecParams p;
  p.variant = variant;
  p.bands = bands;
  p.endmembers = endmembers;
  p.seed = seed;
  p.endmembers_mat = detail::get_matrix(is, bands, endmembers);
  p.endmembers_init = detail::get_matrix(is, bands, endmembers);
  if (p.has_linear_encoder()) {
    p.encoder_pinv = detail::get_matrix(is, endmembers, bands);
    p.encoder_gain_raw = detail::get_matrix(is, 1, endmembers);
  }
  Architecture arch{bands, endmembers};
  auto read_mlp = [&](int input_width, const std::vector<int>& widths) {
    std::vector<DenseLayer> layers;
    int fan_in = input_width;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      DenseLayer layer;
      layer.weight = detail::get_matrix(is, widths[i], fan_in);
      if (i + 1 < widths.size()) layer.bias = detail::get_matrix(is, 1, widths[i]);
      layers.push_back(std::move(layer));
      fan_in = widths[i];
    }
    return layers;
  };
  p.encoder_mlp = read_mlp(arch.encoder_input_width(), arch.encoder_widths());
  p.decoder_mlp = read_mlp(arch.decoder_input_width(), arch.decoder_widths());
  for (const Matrix* m : p.param_refs()) require_finite(*m, "checkpoint parameter");
  return p;
}

}  // namespace unmix::aec
