// Straight-line reference implementations used only as test oracles.
// Everything here is plain loops over std::vector, independent of the tape
// and of the library's Eigen-based forward paths.
#pragma once

#include <cmath>
#include <vector>

#include "unmix/aec.hpp"
#include "unmix/trainer.hpp"

namespace naive {

using unmix::Matrix;
using Row = std::vector<double>;

inline double leaky(double v) { return v >= 0.0 ? v : 0.01 * v; }

inline Row mlp(const std::vector<unmix::aec::DenseLayer>& layers, Row x) {
  for (const auto& layer : layers) {
    const long out = layer.weight.rows(), in = layer.weight.cols();
    Row z(out, 0.0);
    for (long o = 0; o < out; ++o) {
      for (long i = 0; i < in; ++i) z[o] += layer.weight(o, i) * x[i];
      if (layer.has_bias()) z[o] += layer.bias(0, o);
      z[o] = leaky(z[o]);
    }
    x = std::move(z);
  }
  return x;
}

inline Row encode_pixel(const Row& y, const unmix::aec::AecParams& p) {
  Row pre = mlp(p.encoder_mlp, y);
  if (p.has_linear_encoder()) {
    for (int k = 0; k < p.endmembers; ++k) {
      double lin = 0.0;
      for (int l = 0; l < p.bands; ++l) lin += p.encoder_pinv(k, l) * y[l];
      pre[k] += std::abs(p.encoder_gain_raw(0, k)) * lin;
    }
  }
  double total = 0.0;
  for (double& v : pre) {
    v = std::abs(v);
    total += v;
  }
  if (total == 0.0) return Row(p.endmembers, 1.0 / p.endmembers);
  for (double& v : pre) v /= total;
  return pre;
}

inline Row decode_pixel(const Row& a, const unmix::aec::AecParams& p) {
  Row input = a;
  for (int k = 0; k < p.endmembers; ++k)
    for (int l = 0; l < p.bands; ++l) input.push_back(p.endmembers_mat(l, k));
  Row out = mlp(p.decoder_mlp, input);
  if (p.has_linear_decoder())
    for (int l = 0; l < p.bands; ++l)
      for (int k = 0; k < p.endmembers; ++k) out[l] += p.endmembers_mat(l, k) * a[k];
  for (double& v : out) v = std::max(v, 0.0);
  return out;
}

inline double loss(const Matrix& batch, const unmix::aec::AecParams& p,
                   const unmix::trainer::TrainConfig& cfg) {
  double data = 0.0;
  for (long n = 0; n < batch.rows(); ++n) {
    Row y(batch.cols());
    for (long l = 0; l < batch.cols(); ++l) y[l] = batch(n, l);
    Row rec = decode_pixel(encode_pixel(y, p), p);
    for (long l = 0; l < batch.cols(); ++l) data += (y[l] - rec[l]) * (y[l] - rec[l]);
  }
  data /= static_cast<double>(batch.rows());

  double weights = 0.0;
  auto add_layer = [&](const unmix::aec::DenseLayer& layer) {
    for (long j = 0; j < layer.weight.size(); ++j)
      weights += layer.weight.data()[j] * layer.weight.data()[j];
    for (long j = 0; j < layer.bias.size(); ++j)
      weights += layer.bias.data()[j] * layer.bias.data()[j];
  };
  for (const auto& l : p.encoder_mlp) add_layer(l);
  for (const auto& l : p.decoder_mlp) add_layer(l);
  const double rw = cfg.lambda_w * weights;

  double rm = 0.0;
  for (int k = 0; k < p.endmembers; ++k) {
    double dot = 0.0, nm = 0.0, n0 = 0.0;
    for (int l = 0; l < p.bands; ++l) {
      dot += p.endmembers_mat(l, k) * p.endmembers_init(l, k);
      nm += p.endmembers_mat(l, k) * p.endmembers_mat(l, k);
      n0 += p.endmembers_init(l, k) * p.endmembers_init(l, k);
    }
    const double cosine = dot / (std::sqrt(nm) * std::sqrt(n0));
    rm += cfg.rm_literal_cosine ? cosine : 1.0 - cosine;
  }
  rm *= cfg.lambda_m;

  double lq = 0.0;
  if (p.has_linear_encoder()) {
    const int pp = p.endmembers, bands = p.bands;
    for (int r = 0; r < pp; ++r)
      for (int c = 0; c < bands; ++c) {
        double entry = 0.0;  // (M^T M Q)(r, c)
        for (int k = 0; k < pp; ++k) {
          double gram = 0.0;
          for (int l = 0; l < bands; ++l) gram += p.endmembers_mat(l, r) * p.endmembers_mat(l, k);
          entry += gram * p.encoder_pinv(k, c);
        }
        const double resid = entry - p.endmembers_mat(c, r);
        lq += resid * resid;
      }
    lq *= cfg.lambda_q;
  }

  return data + rw + rm + lq;
}

}  // namespace naive
