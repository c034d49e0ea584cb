// Adam optimizer state and update step.
#pragma once

#include <cmath>
#include <vector>

#include "unmix/core.hpp"
#include "unmix/error.hpp"

namespace unmix::diff {

// First/second moment estimates, one per parameter tensor, plus the step
// counter. Moments always match their parameter's shape.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long long t = 0;

  static AdamState for_params(const std::vector<Matrix*>& params,
                              double beta1 = 0.9, double beta2 = 0.95,
                              double epsilon = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Matrix* p : params) {
      s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

// One bias-corrected Adam step, in place. A gradient tensor that is zero
// everywhere leaves its parameter untouched (moments still decay), so a
// zero gradient is the identity on parameters in every state. Non-finite
// gradients are an error; nothing is clipped.
inline void adam_step(const std::vector<Matrix*>& params,
                      const std::vector<Matrix>& grads, AdamState& state,
                      double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state counts disagree");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw ShapeError("adam_step: gradient shape differs from parameter");
    if (!grads[i].allFinite())
      throw NumericError("adam_step: non-finite gradient");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    if (g.isZero(0.0)) continue;
    const Matrix mhat = state.m[i] / c1;
    const Matrix vhat = state.v[i] / c2;
    *params[i] -= learning_rate * (mhat.array() / (vhat.array().sqrt() + state.epsilon)).matrix();
  }
}

}  // namespace unmix::diff
