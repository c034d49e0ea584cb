// Training: the composite objective (reconstruction + weight decay on the
// nonlinear branches + endmember-drift penalty + pseudoinverse tie),
// the shuffled minibatch Adam loop with an epoch-level relative-change
// stopping rule, and the hyperparameter grid search.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "unmix/adam.hpp"
#include "unmix/aec.hpp"
#include "unmix/core.hpp"
#include "unmix/error.hpp"
#include "unmix/metrics.hpp"
#include "unmix/simdata.hpp"
#include "unmix/tape.hpp"

namespace unmix::trainer {

struct TrainConfig {
  double lambda_q = 1e-2;        // pseudoinverse-tie weight
  double lambda_w = 1e-2;        // nonlinear-branch weight decay
  double lambda_m = 1e-2;        // endmember-drift weight
  double learning_rate = 1e-4;
  long minibatch = 128;
  int max_epochs = 200;
  double stop_threshold = 0.01;  // relative change of the epoch-mean loss
  std::uint64_t seed = 1;
  // The drift penalty defaults to sum_k (1 - cos(m_k, m0_k)), which shrinks
  // the angle to the initialization. The literal raw-cosine variant is kept
  // behind this switch for comparison.
  bool rm_literal_cosine = false;

  void validate() const {
    if (minibatch < 1) throw ShapeError("train config: minibatch must be >= 1");
    if (!(stop_threshold > 0.0)) throw ShapeError("train config: stop threshold must be > 0");
    if (max_epochs < 1) throw ShapeError("train config: max_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ShapeError("train config: learning rate must be > 0");
    if (lambda_q < 0.0 || lambda_w < 0.0 || lambda_m < 0.0)
      throw ShapeError("train config: lambdas must be nonnegative");
  }

  std::map<std::string, std::string> to_key_values() const {
    return {
        {"lambda_q", format_double(lambda_q)},
        {"lambda_w", format_double(lambda_w)},
        {"lambda_m", format_double(lambda_m)},
        {"learning_rate", format_double(learning_rate)},
        {"minibatch", std::to_string(minibatch)},
        {"max_epochs", std::to_string(max_epochs)},
        {"stop_threshold", format_double(stop_threshold)},
        {"seed", std::to_string(seed)},
        {"rm_literal_cosine", rm_literal_cosine ? "true" : "false"},
    };
  }

  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    auto want = [&](const char* key) -> std::optional<std::string> {
      auto it = kv.find(key);
      if (it == kv.end()) return std::nullopt;
      return it->second;
    };
    if (auto v = want("lambda_q")) cfg.lambda_q = parse_double(*v);
    if (auto v = want("lambda_w")) cfg.lambda_w = parse_double(*v);
    if (auto v = want("lambda_m")) cfg.lambda_m = parse_double(*v);
    if (auto v = want("learning_rate")) cfg.learning_rate = parse_double(*v);
    if (auto v = want("minibatch")) cfg.minibatch = parse_int(*v);
    if (auto v = want("max_epochs")) cfg.max_epochs = static_cast<int>(parse_int(*v));
    if (auto v = want("stop_threshold")) cfg.stop_threshold = parse_double(*v);
    if (auto v = want("seed")) cfg.seed = static_cast<std::uint64_t>(parse_int(*v));
    if (auto v = want("rm_literal_cosine")) cfg.rm_literal_cosine = (*v == "true" || *v == "1");
    cfg.validate();
    return cfg;
  }
};

struct LossBreakdown {
  double total = 0.0;
  double data = 0.0;   // mean squared reconstruction error over the batch
  double rw = 0.0;     // lambda_w * (||W_D||^2 + ||W_E||^2)
  double rm = 0.0;     // endmember drift penalty
  double lq = 0.0;     // lambda_q * ||M^T M Q - M^T||_F^2
};

struct EpochStats {
  LossBreakdown loss;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;

  int epoch_count() const { return static_cast<int>(epochs.size()); }

  static std::string csv_header() { return "epoch,total,data,rw,rm,lq,seconds"; }
  std::string to_csv() const {
    std::string out = csv_header() + "\n";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      const LossBreakdown& l = epochs[e].loss;
      out += std::to_string(e + 1) + "," + format_double(l.total) + "," +
             format_double(l.data) + "," + format_double(l.rw) + "," + format_double(l.rm) +
             "," + format_double(l.lq) + "," + format_double(epochs[e].seconds) + "\n";
    }
    return out;
  }
};

// Divergence carries the history collected so far.
struct TrainDivergence : NumericError {
  TrainHistory history;
  TrainDivergence(const std::string& message, TrainHistory h)
      : NumericError(message), history(std::move(h)) {}
};

// -- objective -----------------------------------------------------------------

struct LossGraph {
  aec::TapeParams params;
  diff::Var total, data, rw, rm, lq;

  LossBreakdown breakdown(const diff::Tape& tape) const {
    return {tape.value(total)(0, 0), tape.value(data)(0, 0), tape.value(rw)(0, 0),
            tape.value(rm)(0, 0), tape.value(lq)(0, 0)};
  }
};

// Builds the full objective on a tape:
//   mean_n ||y_n - h(g(y_n))||^2 + lambda_w (||W_D||^2 + ||W_E||^2)
//   + R_M(M) + lambda_q ||M^T M Q - M^T||_F^2
// where R_M is sum_k (1 - cos(m_k, m0_k)) by default.
inline LossGraph build_loss(diff::Tape& tape, const Matrix& batch, const aec::AecParams& p,
                            const TrainConfig& cfg) {
  if (batch.rows() < 1) throw ShapeError("loss: empty batch");
  LossGraph g;
  g.params = aec::stage_params(tape, p);

  diff::Var pixels = tape.constant(batch);
  diff::Var abundances = aec::encode_on_tape(tape, pixels, g.params, p);
  diff::Var reconstruction = aec::decode_on_tape(tape, abundances, g.params, p);
  g.data = tape.scale(tape.fro2(tape.sub(pixels, reconstruction)),
                      1.0 / static_cast<double>(batch.rows()));

  diff::Var weight_norm = tape.constant(Matrix::Zero(1, 1));
  auto add_norms = [&](const std::vector<diff::Var>& ws, const std::vector<diff::Var>& bs) {
    for (std::size_t i = 0; i < ws.size(); ++i) {
      weight_norm = tape.add(weight_norm, tape.fro2(ws[i]));
      if (bs[i].id >= 0) weight_norm = tape.add(weight_norm, tape.fro2(bs[i]));
    }
  };
  add_norms(g.params.encoder_weights, g.params.encoder_biases);
  add_norms(g.params.decoder_weights, g.params.decoder_biases);
  g.rw = tape.scale(weight_norm, cfg.lambda_w);

  // Cosine of each endmember against its frozen initialization.
  diff::Var m = g.params.endmembers;
  diff::Var m0 = tape.constant(p.endmembers_init);
  diff::Var dots = tape.colsum(tape.mul(m, m0));                    // 1 x P
  diff::Var inv_norm = tape.pow(tape.colsum(tape.mul(m, m)), -0.5);  // 1 x P
  Matrix init_inv_norms(1, p.endmembers);
  for (int k = 0; k < p.endmembers; ++k)
    init_inv_norms(0, k) = 1.0 / p.endmembers_init.col(k).norm();
  diff::Var cosines = tape.mul(tape.mul(dots, inv_norm), tape.constant(init_inv_norms));
  if (cfg.rm_literal_cosine) {
    g.rm = tape.scale(tape.sum(cosines), cfg.lambda_m);
  } else {
    diff::Var count = tape.constant(Matrix::Constant(1, 1, static_cast<double>(p.endmembers)));
    g.rm = tape.scale(tape.sub(count, tape.sum(cosines)), cfg.lambda_m);
  }

  if (p.has_linear_encoder()) {
    diff::Var gram = tape.matmul(m, m, true, false);  // P x P
    diff::Var residual =
        tape.sub(tape.matmul(gram, g.params.encoder_pinv), tape.transpose(m));
    g.lq = tape.scale(tape.fro2(residual), cfg.lambda_q);
  } else {
    g.lq = tape.constant(Matrix::Zero(1, 1));
  }

  g.total = tape.add(tape.add(g.data, g.rw), tape.add(g.rm, g.lq));
  return g;
}

// Loss value with its term decomposition, no gradients.
inline LossBreakdown loss_value(const Matrix& batch, const aec::AecParams& p,
                                const TrainConfig& cfg) {
  diff::Tape tape;
  return build_loss(tape, batch, p, cfg).breakdown(tape);
}

// Loss plus gradients for every trainable tensor in param_refs order.
inline std::pair<LossBreakdown, std::vector<Matrix>> loss_and_gradients(
    const Matrix& batch, const aec::AecParams& p, const TrainConfig& cfg) {
  diff::Tape tape;
  LossGraph g = build_loss(tape, batch, p, cfg);
  LossBreakdown value = g.breakdown(tape);
  tape.backward(g.total);
  std::vector<Matrix> grads;
  grads.reserve(g.params.all.size());
  for (diff::Var v : g.params.all) grads.push_back(tape.grad(v));
  return {value, std::move(grads)};
}

// -- training loop ----------------------------------------------------------------

// Shuffled minibatch Adam over all trainable tensors of `params`, in place.
// Runs at least one full epoch; from the second epoch on, stops when the
// relative change of the epoch-mean loss falls under the threshold.
inline TrainHistory train_in_place(aec::AecParams& params, const Matrix& pixels,
                                   const TrainConfig& cfg) {
  cfg.validate();
  if (pixels.rows() < cfg.minibatch)
    throw ShapeError("train: fewer pixels than one minibatch");
  const auto t_start = std::chrono::steady_clock::now();
  TrainHistory history;

  std::vector<Matrix*> refs = params.param_refs();
  diff::AdamState adam = diff::AdamState::for_params(refs);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x7A1));
  std::vector<long> order(pixels.rows());
  for (long i = 0; i < pixels.rows(); ++i) order[i] = i;

  try {
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      const auto t_epoch = std::chrono::steady_clock::now();
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      LossBreakdown mean;
      long seen = 0;
      for (long start = 0; start < pixels.rows(); start += cfg.minibatch) {
        const long len = std::min(cfg.minibatch, pixels.rows() - start);
        Matrix batch(len, pixels.cols());
        for (long r = 0; r < len; ++r) batch.row(r) = pixels.row(order[start + r]);

        auto [value, grads] = loss_and_gradients(batch, params, cfg);
        diff::adam_step(refs, grads, adam, cfg.learning_rate);

        const double w = static_cast<double>(len);
        mean.total += w * value.total;
        mean.data += w * value.data;
        mean.rw += w * value.rw;
        mean.rm += w * value.rm;
        mean.lq += w * value.lq;
        seen += len;
      }
      const double inv = 1.0 / static_cast<double>(seen);
      mean.total *= inv;
      mean.data *= inv;
      mean.rw *= inv;
      mean.rm *= inv;
      mean.lq *= inv;
      if (!std::isfinite(mean.total))
        throw NumericError("train: non-finite epoch loss");

      EpochStats stats;
      stats.loss = mean;
      stats.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
      history.epochs.push_back(stats);

      if (epoch >= 2) {
        const double prev = history.epochs[epoch - 2].loss.total;
        const double rel =
            std::abs(mean.total - prev) / std::max(std::abs(prev), 1e-300);
        if (rel < cfg.stop_threshold) break;
      }
    }
  } catch (const NumericError& e) {
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    throw TrainDivergence(std::string("training diverged: ") + e.what(), history);
  }

  history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return history;
}

// Fresh network + training run.
inline std::pair<aec::AecParams, TrainHistory> train(const sim::HsiCube& cube,
                                                     const Matrix& initial_endmembers,
                                                     aec::Variant variant,
                                                     const TrainConfig& cfg) {
  aec::AecParams params =
      aec::build_network(static_cast<int>(cube.band_count()),
                         static_cast<int>(initial_endmembers.cols()), variant,
                         initial_endmembers, cfg.seed);
  TrainHistory history = train_in_place(params, cube.pixels, cfg);
  return {std::move(params), std::move(history)};
}

// -- grid search -----------------------------------------------------------------

struct GridSpec {
  std::vector<double> lambda_q{1e-6, 1e-2, 1.0};
  std::vector<double> lambda_w{1e-6, 1e-2, 1.0};
  std::vector<double> lambda_m{1e-6, 1e-2, 1.0};
  std::vector<double> learning_rate{1e-6, 1e-4};

  static GridSpec full() { return {}; }
  static GridSpec reduced() {
    return {{1e-2, 1.0}, {1e-2, 1.0}, {1e-2, 1.0}, {1e-4}};
  }
  std::size_t cells() const {
    return lambda_q.size() * lambda_w.size() * lambda_m.size() * learning_rate.size();
  }
  void validate() const {
    if (cells() == 0) throw ShapeError("grid: empty");
  }
};

struct GridCellResult {
  TrainConfig config;
  bool diverged = false;
  std::string error;
  double rmse_a = std::numeric_limits<double>::quiet_NaN();
  double rmse_y = std::numeric_limits<double>::quiet_NaN();
  double score = std::numeric_limits<double>::infinity();
  double train_seconds = 0.0;
  int epochs = 0;
};

struct GridSearchResult {
  int best_index = -1;
  std::vector<GridCellResult> cells;
  aec::AecParams best_params;
  TrainHistory best_history;

  const GridCellResult& best() const { return cells.at(static_cast<std::size_t>(best_index)); }
};

// Trains one model per grid cell. Cells are independent and run on up to
// `threads` workers; the outcome does not depend on scheduling. Selection
// is by aligned abundance RMSE when the truth is available, otherwise by
// reconstruction RMSE (a weak proxy, but the only observable one).
inline GridSearchResult grid_search(const sim::HsiCube& cube, const Matrix& initial_endmembers,
                                    aec::Variant variant, const GridSpec& grid,
                                    const TrainConfig& base,
                                    const sim::AbundanceMatrix* truth = nullptr,
                                    int threads = 1) {
  grid.validate();
  GridSearchResult result;
  for (double lq : grid.lambda_q)
    for (double lw : grid.lambda_w)
      for (double lm : grid.lambda_m)
        for (double lr : grid.learning_rate) {
          GridCellResult cell;
          cell.config = base;
          cell.config.lambda_q = lq;
          cell.config.lambda_w = lw;
          cell.config.lambda_m = lm;
          cell.config.learning_rate = lr;
          result.cells.push_back(std::move(cell));
        }

  std::atomic<std::size_t> next{0};
  std::mutex best_mutex;
  double best_score = std::numeric_limits<double>::infinity();

  auto run_cell = [&](std::size_t index) {
    GridCellResult& cell = result.cells[index];
    try {
      auto [params, history] = train(cube, initial_endmembers, variant, cell.config);
      cell.train_seconds = history.wall_seconds;
      cell.epochs = history.epoch_count();
      const Matrix abundances = aec::encode(cube.pixels, params);
      const Matrix reconstruction = aec::reconstruct(cube.pixels, params);
      cell.rmse_y = metrics::rmse(reconstruction, cube.pixels);
      if (truth) {
        metrics::Alignment al = metrics::align_columns(abundances, truth->fractions);
        cell.rmse_a = al.rmse;
        cell.score = cell.rmse_a;
      } else {
        cell.score = cell.rmse_y;
      }
      std::lock_guard<std::mutex> lock(best_mutex);
      if (cell.score < best_score ||
          (cell.score == best_score && static_cast<int>(index) < result.best_index)) {
        best_score = cell.score;
        result.best_index = static_cast<int>(index);
        result.best_params = std::move(params);
        result.best_history = std::move(history);
      }
    } catch (const TrainDivergence& e) {
      cell.diverged = true;
      cell.error = e.what();
    } catch (const Error& e) {
      cell.diverged = true;
      cell.error = e.what();
    }
  };

  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < result.cells.size(); i = next.fetch_add(1))
      run_cell(i);
  };
  const int pool_size = std::max(1, threads);
  if (pool_size == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < pool_size; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (result.best_index < 0) throw NumericError("grid_search: every cell diverged");
  return result;
}

}  // namespace unmix::trainer
