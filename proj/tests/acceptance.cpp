// Acceptance suite: one pass/fail line per criterion, nonzero exit when
// any criterion fails. Criteria 7 and 10 drive the command-line binary
// (path in UNMIX_CLI_BIN); everything else runs in process.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "unmix/adam.hpp"
#include "unmix/aec.hpp"
#include "unmix/classic.hpp"
#include "unmix/core.hpp"
#include "unmix/cube_io.hpp"
#include "unmix/gradcheck.hpp"
#include "unmix/metrics.hpp"
#include "unmix/simdata.hpp"
#include "unmix/tape.hpp"
#include "unmix/trainer.hpp"

using namespace unmix;
using unmix::Matrix;
using unmix::Vector;

namespace {

int g_failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int criterion, const char* label, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %2d: %s (%s, %.1fs)\n", pass ? "PASS" : "FAIL", criterion, label,
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

Matrix random_simplex_rows(long n, int p, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix a(n, p);
  for (long i = 0; i < n; ++i) {
    double total = 0.0;
    for (int k = 0; k < p; ++k) {
      a(i, k) = unit(rng) + 1e-9;
      total += a(i, k);
    }
    a.row(i) /= total;
  }
  return a;
}

// 1. Analytic gradients of the full objective vs central differences.
void criterion_1() {
  Timer timer;
  double worst = 0.0;
  {
    sim::EndmemberMatrix em = sim::synth_endmembers(12, 3, 301);
    aec::AecParams p = aec::build_network(12, 3, aec::Variant::macu, em.spectra, 302);
    Rng rng(303);
    std::uniform_real_distribution<double> jitter(0.01, 0.04);
    std::bernoulli_distribution coin(0.5);
    for (Matrix* m : p.param_refs())
      for (long j = 0; j < m->size(); ++j)
        m->data()[j] += (coin(rng) ? 1.0 : -1.0) * jitter(rng);
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    Matrix batch(8, 12);
    for (long j = 0; j < batch.size(); ++j) batch.data()[j] = unit(rng);

    trainer::TrainConfig cfg;
    cfg.lambda_q = 0.6;
    cfg.lambda_w = 0.05;
    cfg.lambda_m = 0.9;

    std::vector<Matrix*> refs = p.param_refs();
    std::vector<Matrix> at;
    for (Matrix* m : refs) at.push_back(*m);
    auto restore = [&](const std::vector<Matrix>& values) {
      for (std::size_t i = 0; i < refs.size(); ++i) *refs[i] = values[i];
    };
    diff::GradTarget target;
    target.value = [&](const std::vector<Matrix>& values) {
      restore(values);
      return trainer::loss_value(batch, p, cfg).total;
    };
    target.gradient = [&](const std::vector<Matrix>& values) {
      restore(values);
      return trainer::loss_and_gradients(batch, p, cfg).second;
    };
    worst = diff::grad_check(target, at, 1e-5);
  }
  const double secs = timer.seconds();
  report(1, "full-objective gradients match central differences",
         worst < 1e-4 && secs < 10.0,
         "max rel err " + format_double(worst) + " < 1e-4", secs);
}

// 2. Exact encoder/decoder round trip in the pure linear configuration.
void criterion_2() {
  Timer timer;
  sim::EndmemberMatrix em = sim::synth_endmembers(50, 3, 401);
  aec::AecParams p = aec::build_network(50, 3, aec::Variant::macu, em.spectra, 402);
  for (auto& layer : p.encoder_mlp) {
    layer.weight.setZero();
    if (layer.has_bias()) layer.bias.setZero();
  }
  for (auto& layer : p.decoder_mlp) {
    layer.weight.setZero();
    if (layer.has_bias()) layer.bias.setZero();
  }
  Rng rng(403);
  const Matrix points = random_simplex_rows(1000, 3, rng);
  const Matrix back = aec::encode(aec::decode(points, p), p);
  const double worst = (back - points).cwiseAbs().maxCoeff();
  const double secs = timer.seconds();
  report(2, "linear round trip encode(decode(a)) = a", worst < 1e-9 && secs < 1.0,
         "max |error| " + format_double(worst) + " over 1000 simplex points", secs);
}

// 3. FCLS never loses to the exhaustive simplex grid oracle.
void criterion_3() {
  Timer timer;
  sim::EndmemberMatrix em = sim::synth_endmembers(25, 3, 501);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(200, 3, 1.0, 502);
  sim::HsiCube noisy = sim::add_noise_snr(sim::lmm_mix(em, ab), 15.0, 503);
  sim::AbundanceMatrix est = classic::fcls(noisy, em.spectra, 2);

  // Oracle: every simplex point with step 0.005.
  const double step = 0.005;
  const int n = static_cast<int>(std::round(1.0 / step));
  std::vector<Vector> grid_points;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j + i <= n; ++j) {
      Vector a(3);
      a << i * step, j * step, 1.0 - (i + j) * step;
      grid_points.push_back(a);
    }
  Matrix grid_mix(static_cast<long>(grid_points.size()), em.bands());
  for (std::size_t g = 0; g < grid_points.size(); ++g)
    grid_mix.row(static_cast<long>(g)) = (em.spectra * grid_points[g]).transpose();

  double worst_excess = -std::numeric_limits<double>::infinity();
  for (long i = 0; i < noisy.pixel_count(); ++i) {
    const Vector pixel = noisy.pixels.row(i).transpose();
    const double mine = (pixel - em.spectra * est.fractions.row(i).transpose()).squaredNorm();
    const double oracle = (grid_mix.rowwise() - pixel.transpose()).rowwise().squaredNorm().minCoeff();
    worst_excess = std::max(worst_excess, mine - oracle);
  }
  const double secs = timer.seconds();
  report(3, "fcls objective <= grid oracle + 1e-4 on 200 noisy pixels",
         worst_excess <= 1e-4 && secs < 30.0,
         "worst objective excess " + format_double(worst_excess), secs);
}

// 4. VCA recovers planted pure pixels on a noiseless cube.
void criterion_4() {
  Timer timer;
  sim::EndmemberMatrix em = sim::synth_endmembers(60, 3, 601);
  sim::AbundanceMatrix ab = sim::sample_dirichlet_abundances(997, 3, 1.0, 602);
  Matrix fractions = ab.fractions;
  fractions.conservativeResize(1000, 3);
  fractions.row(997) << 1.0, 0.0, 0.0;
  fractions.row(998) << 0.0, 1.0, 0.0;
  fractions.row(999) << 0.0, 0.0, 1.0;
  sim::HsiCube cube = sim::lmm_mix(em, sim::AbundanceMatrix{fractions, std::nullopt});

  classic::VcaResult r = classic::vca(cube, 3, 603);
  double worst = 0.0;
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
    used[static_cast<std::size_t>(arg)] = true;
    worst = std::max(worst, best);
  }
  const double secs = timer.seconds();
  report(4, "vca pure-pixel recovery under 1e-3 rad", worst < 1e-3 && secs < 5.0,
         "worst matched angle " + format_double(worst), secs);
}

// 5. Encoder stays on the simplex, decoder stays nonnegative, all variants.
void criterion_5() {
  Timer timer;
  bool ok = true;
  double worst_sum_err = 0.0;
  Rng rng(701);
  std::uniform_real_distribution<double> wild(-2.0, 2.0);
  const aec::Variant variants[] = {aec::Variant::macu, aec::Variant::nfaec,
                                   aec::Variant::mfaec};
  for (aec::Variant v : variants) {
    for (int draw = 0; draw < 25; ++draw) {
      const int bands = 10 + (draw % 14), p = 2 + (draw % 3);
      sim::EndmemberMatrix em = sim::synth_endmembers(bands, p, 800 + draw);
      aec::AecParams params = aec::build_network(bands, p, v, em.spectra, 900 + draw);
      if (params.has_linear_encoder())
        for (long j = 0; j < params.encoder_gain_raw.size(); ++j)
          params.encoder_gain_raw.data()[j] = wild(rng);

      Matrix pixels(400, bands);
      for (long j = 0; j < pixels.size(); ++j) pixels.data()[j] = wild(rng);
      const Matrix a = aec::encode(pixels, params);
      for (long i = 0; i < a.rows(); ++i) {
        worst_sum_err = std::max(worst_sum_err, std::abs(a.row(i).sum() - 1.0));
        ok = ok && a.row(i).minCoeff() >= 0.0;
      }
      ok = ok && aec::decode(a, params).minCoeff() >= 0.0;
    }
  }
  ok = ok && worst_sum_err <= 1e-9;
  const double secs = timer.seconds();
  report(5, "simplex/nonnegativity for 10^4 draws per variant", ok && secs < 30.0,
         "worst row-sum deviation " + format_double(worst_sum_err), secs);
}

// 6. Global SNR calibration at 20 dB.
void criterion_6() {
  Timer timer;
  sim::SceneSpec spec;
  spec.pixel_count = 2500;
  spec.bands = 224;
  spec.endmembers = 3;
  spec.seed = 1001;
  sim::Scene scene = sim::generate_scene(spec);
  sim::HsiCube noisy = sim::add_noise_snr(scene.cube, 20.0, 1002);
  const double snr = 10.0 * std::log10(scene.cube.pixels.squaredNorm() /
                                       (noisy.pixels - scene.cube.pixels).squaredNorm());
  const double secs = timer.seconds();
  report(6, "empirical snr within +/-0.5 dB of 20 dB", std::abs(snr - 20.0) < 0.5 && secs < 5.0,
         "empirical snr " + format_double(snr) + " dB", secs);
}

// 9. Post-nonlinear model sanity against scalar oracles.
void criterion_9() {
  Timer timer;
  sim::EndmemberMatrix em = sim::synth_endmembers(20, 3, 1101);
  Rng rng(1102);
  sim::AbundanceMatrix ab{random_simplex_rows(5, 3, rng), std::nullopt};

  const sim::HsiCube linear = sim::lmm_mix(em, ab);
  const sim::HsiCube unit_exp = sim::pnmm_mix(em, ab, 1.0);
  const bool bit_identical = std::memcmp(linear.pixels.data(), unit_exp.pixels.data(),
                                         sizeof(double) * linear.pixels.size()) == 0;

  const sim::HsiCube bent = sim::pnmm_mix(em, ab, 0.7);
  double worst = 0.0;
  for (long j = 0; j < 100; ++j) {
    const double base = linear.pixels.data()[j];
    const double oracle = std::exp(0.7 * std::log(base));
    worst = std::max(worst, std::abs(bent.pixels.data()[j] - oracle));
  }
  const double secs = timer.seconds();
  report(9, "pnmm exponent-1 bit identity and 0.7 scalar oracle",
         bit_identical && worst < 1e-12 && secs < 1.0,
         std::string("bit-identical ") + (bit_identical ? "yes" : "NO") + ", worst |diff| " +
             format_double(worst),
         secs);
}

// Criteria 7, 8, 10: the desk-scale benchmark, its pseudoinverse tie, and
// the byte-identical rerun from the manifest.
struct BenchmarkOutcome {
  bool ran = false;
  double rmse_fcls = 0.0, rmse_macu = 0.0, rmse_mfaec = 0.0;
  std::string results_path;
  std::string manifest_path;
  std::filesystem::path dir;
};

std::string cli_bin() {
  const char* bin = std::getenv("UNMIX_CLI_BIN");
  if (!bin) throw IoError("UNMIX_CLI_BIN is not set");
  return bin;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double parse_result_row(const std::string& csv, const std::string& method) {
  // method,rmse_a,rmse_y rows after a header.
  std::size_t pos = csv.find("\n" + method + ",");
  if (pos == std::string::npos) throw IoError("benchmark csv misses method " + method);
  pos += 1 + method.size() + 1;
  const std::size_t comma = csv.find(',', pos);
  return parse_double(csv.substr(pos, comma - pos));
}

BenchmarkOutcome criterion_7() {
  Timer timer;
  BenchmarkOutcome out;
  out.dir = std::filesystem::temp_directory_path() /
            ("unmix_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(out.dir);
  std::filesystem::create_directories(out.dir);
  const std::string run_dir = (out.dir / "run").string();

  const int rc = run_cli(
      "benchmark --preset dc1-small --model blmm --snr 20 --seed 1 --search-grid reduced "
      "--methods fcls,macu,mfaec --threads 2 --out " +
      run_dir + " > " + (out.dir / "run.log").string());
  double secs = timer.seconds();
  if (rc != 0) {
    report(7, "desk-scale benchmark ordering", false, "benchmark exited with " + std::to_string(rc),
           secs);
    return out;
  }
  out.results_path = run_dir + "/benchmark_results.csv";
  out.manifest_path = run_dir + "/manifest.txt";
  const std::string csv = io::read_file_bytes(out.results_path);
  out.rmse_fcls = parse_result_row(csv, "fcls");
  out.rmse_macu = parse_result_row(csv, "macu");
  out.rmse_mfaec = parse_result_row(csv, "mfaec");
  out.ran = true;
  secs = timer.seconds();
  const bool pass = out.rmse_macu < out.rmse_fcls && out.rmse_macu < out.rmse_mfaec &&
                    out.rmse_macu < 0.20;
  report(7, "desk-scale ordering macu < fcls, macu < mfaec, macu < 0.20", pass,
         "rmse_a macu " + format_double(out.rmse_macu) + ", fcls " + format_double(out.rmse_fcls) +
             ", mfaec " + format_double(out.rmse_mfaec),
         secs);
  return out;
}

void criterion_8() {
  // One training from the criterion-7 scene with the tie weight at 1.
  Timer timer;
  sim::SceneSpec spec;
  spec.pixel_count = 2500;
  spec.bands = 64;
  spec.endmembers = 3;
  spec.sampler = sim::AbundanceSampler::dirichlet;
  spec.model = sim::MixingModel::blmm;
  spec.snr_db = 20.0;
  spec.seed = 1;
  sim::Scene scene = sim::generate_scene(spec);
  classic::VcaResult vca = classic::vca(scene.cube, 3, spec.seed);

  trainer::TrainConfig cfg;
  cfg.lambda_q = 1.0;
  cfg.lambda_w = 1e-2;
  cfg.lambda_m = 1e-2;
  cfg.learning_rate = 1e-4;
  cfg.seed = 1;
  auto [params, history] =
      trainer::train(scene.cube, vca.endmembers.spectra, aec::Variant::macu, cfg);
  const Matrix m = params.endmembers_mat;
  const double ratio =
      (m.transpose() * m * params.encoder_pinv - m.transpose()).norm() / m.transpose().norm();
  const double secs = timer.seconds();
  report(8, "pseudoinverse tie ratio under 0.1 after lambda_q = 1 training", ratio < 0.1,
         "||M^T M Q - M^T|| / ||M^T|| = " + format_double(ratio) + " after " +
             std::to_string(history.epoch_count()) + " epochs",
         secs);
}

void criterion_10(const BenchmarkOutcome& first) {
  Timer timer;
  if (!first.ran) {
    report(10, "byte-identical benchmark rerun from manifest", false,
           "criterion 7 benchmark did not run", 0.0);
    return;
  }
  const std::string rerun_dir = (first.dir / "rerun").string();
  const int rc = run_cli("benchmark --from-manifest " + first.manifest_path +
                         " --threads 2 --out " + rerun_dir + " > " +
                         (first.dir / "rerun.log").string());
  double secs = timer.seconds();
  if (rc != 0) {
    report(10, "byte-identical benchmark rerun from manifest", false,
           "rerun exited with " + std::to_string(rc), secs);
    return;
  }
  const std::string a = io::read_file_bytes(first.results_path);
  const std::string b = io::read_file_bytes(rerun_dir + "/benchmark_results.csv");
  secs = timer.seconds();
  report(10, "byte-identical benchmark rerun from manifest", a == b,
         a == b ? "results CSV identical (" + std::to_string(a.size()) + " bytes)"
                : "results CSV differs",
         secs);
}

}  // namespace

int main() {
  std::printf("acceptance suite (%s %s)\n", kToolName, kToolVersion);
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_9();
  BenchmarkOutcome bench = criterion_7();
  criterion_8();
  criterion_10(bench);
  if (bench.ran) std::filesystem::remove_all(bench.dir);
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
