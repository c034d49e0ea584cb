// Command-line front end: scene generation, unmixing, evaluation, and the
// benchmark table. Every command writes a manifest sufficient to re-run it
// bit-identically at a fixed thread count.
//
// Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "unmix/aec.hpp"
#include "unmix/classic.hpp"
#include "unmix/core.hpp"
#include "unmix/cube_io.hpp"
#include "unmix/metrics.hpp"
#include "unmix/simdata.hpp"
#include "unmix/trainer.hpp"

namespace {

using namespace unmix;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

io::KeyValueDoc new_manifest(const std::string& command) {
  io::KeyValueDoc doc;
  doc.set("tool", std::string(kToolName));
  doc.set("tool_version", std::string(kToolVersion));
  doc.set("command", command);
  doc.set("created_utc", utc_now());
  return doc;
}

std::string join_doubles(const Vector& v) {
  std::string s;
  for (long i = 0; i < v.size(); ++i) {
    if (i) s += ";";
    s += format_double(v(i));
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

// -- scene flags shared by generate and benchmark ------------------------------

struct SceneFlags {
  std::string preset;
  long pixels = 0;
  std::vector<int> grid;
  int bands = 0;
  int endmembers = 0;
  std::string sampler;
  double concentration = 1.0;
  double corr_len = 5.0;
  std::string model = "lmm";
  double xi = 0.7;
  std::string snr = "none";
  std::uint64_t seed = 1;

  void add_to(CLI::App* cmd, const char* default_model) {
    model = default_model;
    cmd->add_option("--preset", preset, "Scene preset: dc1, dc1-small, or dc2")
        ->check(CLI::IsMember({"dc1", "dc1-small", "dc2"}));
    cmd->add_option("--pixels", pixels, "Pixel count (ungridded scene)");
    cmd->add_option("--grid", grid, "Grid shape: rows cols")->expected(2);
    cmd->add_option("--bands", bands, "Band count");
    cmd->add_option("--endmembers", endmembers, "Endmember count");
    cmd->add_option("--abundances", sampler, "Abundance sampler: dirichlet or grf")
        ->check(CLI::IsMember({"dirichlet", "grf"}));
    cmd->add_option("--concentration", concentration, "Dirichlet concentration");
    cmd->add_option("--corr-len", corr_len, "Random-field correlation length in pixels");
    cmd->add_option("--model", model, "Mixing model: lmm, blmm, or pnmm")
        ->check(CLI::IsMember({"lmm", "blmm", "pnmm"}));
    cmd->add_option("--xi", xi, "Elementwise exponent for the pnmm model");
    cmd->add_option("--snr", snr, "Signal-to-noise ratio in dB, or 'none'");
    cmd->add_option("--seed", seed, "Random seed");
  }

  sim::SceneSpec resolve() const {
    sim::SceneSpec spec;
    // Preset fills the counts; explicit flags override.
    if (preset == "dc1") {
      spec.pixel_count = 10000;
      spec.bands = 224;
      spec.endmembers = 3;
      spec.sampler = sim::AbundanceSampler::dirichlet;
    } else if (preset == "dc1-small") {
      spec.pixel_count = 2500;
      spec.bands = 64;
      spec.endmembers = 3;
      spec.sampler = sim::AbundanceSampler::dirichlet;
    } else if (preset == "dc2") {
      spec.grid = sim::GridShape{50, 50};
      spec.bands = 224;
      spec.endmembers = 3;
      spec.sampler = sim::AbundanceSampler::grf;
    }
    if (pixels > 0) {
      spec.pixel_count = pixels;
      spec.grid.reset();
    }
    if (grid.size() == 2) spec.grid = sim::GridShape{grid[0], grid[1]};
    if (bands > 0) spec.bands = bands;
    if (endmembers > 0) spec.endmembers = endmembers;
    if (!sampler.empty())
      spec.sampler =
          sampler == "grf" ? sim::AbundanceSampler::grf : sim::AbundanceSampler::dirichlet;
    spec.dirichlet_concentration = concentration;
    spec.grf_correlation_length = corr_len;
    if (model == "blmm") spec.model = sim::MixingModel::blmm;
    else if (model == "pnmm") spec.model = sim::MixingModel::pnmm;
    else spec.model = sim::MixingModel::lmm;
    spec.pnmm_exponent = xi;
    if (snr != "none") spec.snr_db = parse_double(snr);
    spec.seed = seed;
    spec.validate();
    return spec;
  }
};

void manifest_scene(io::KeyValueDoc& doc, const sim::SceneSpec& spec) {
  doc.set("pixels", static_cast<long long>(spec.pixels()));
  if (spec.grid) {
    doc.set("grid_rows", spec.grid->rows);
    doc.set("grid_cols", spec.grid->cols);
  }
  doc.set("bands", spec.bands);
  doc.set("endmembers", spec.endmembers);
  doc.set("sampler", std::string(sim::to_string(spec.sampler)));
  doc.set("concentration", spec.dirichlet_concentration);
  doc.set("corr_len", spec.grf_correlation_length);
  doc.set("model", std::string(sim::to_string(spec.model)));
  doc.set("xi", spec.pnmm_exponent);
  doc.set("snr_db", spec.snr_db ? format_double(*spec.snr_db) : std::string("none"));
  doc.set("seed", spec.seed);
}

sim::SceneSpec scene_from_manifest(const io::KeyValueDoc& doc) {
  sim::SceneSpec spec;
  if (doc.has("grid_rows"))
    spec.grid = sim::GridShape{static_cast<int>(doc.get_int("grid_rows")),
                               static_cast<int>(doc.get_int("grid_cols"))};
  else
    spec.pixel_count = doc.get_int("pixels");
  spec.bands = static_cast<int>(doc.get_int("bands"));
  spec.endmembers = static_cast<int>(doc.get_int("endmembers"));
  spec.sampler = doc.get("sampler") == "grf" ? sim::AbundanceSampler::grf
                                             : sim::AbundanceSampler::dirichlet;
  spec.dirichlet_concentration = doc.get_double("concentration");
  spec.grf_correlation_length = doc.get_double("corr_len");
  const std::string model = doc.get("model");
  spec.model = model == "blmm"   ? sim::MixingModel::blmm
               : model == "pnmm" ? sim::MixingModel::pnmm
                                 : sim::MixingModel::lmm;
  spec.pnmm_exponent = doc.get_double("xi");
  if (doc.get("snr_db") != "none") spec.snr_db = doc.get_double("snr_db");
  spec.seed = static_cast<std::uint64_t>(doc.get_int("seed"));
  spec.validate();
  return spec;
}

// -- generate --------------------------------------------------------------------

struct GenerateArgs {
  SceneFlags scene;
  std::string out;
  std::string endmember_csv;
};

int run_generate(const GenerateArgs& args) {
  sim::SceneSpec spec = args.scene.resolve();
  ensure_dir(args.out);

  std::optional<sim::EndmemberMatrix> endmembers;
  if (!args.endmember_csv.empty()) {
    sim::EndmemberMatrix loaded{io::read_csv_matrix(args.endmember_csv),
                               sim::EndmemberMatrix::Provenance::loaded};
    loaded.validate();
    endmembers = std::move(loaded);
  }
  sim::Scene scene = sim::generate_scene(spec, std::move(endmembers));

  io::write_cube(join_path(args.out, "cube.cube"), scene.cube);
  io::write_csv_matrix(join_path(args.out, "true_abundances.csv"), scene.abundances.fractions);
  io::write_csv_matrix(join_path(args.out, "true_endmembers.csv"), scene.endmembers.spectra);

  io::KeyValueDoc doc = new_manifest("generate");
  manifest_scene(doc, spec);
  doc.set("endmember_source",
          args.endmember_csv.empty() ? std::string("generated") : args.endmember_csv);
  if (!args.endmember_csv.empty())
    doc.set("input_hash_endmember_csv", io::hash_file(args.endmember_csv));
  doc.set("output_cube", std::string("cube.cube"));
  doc.set("output_cube_hash", io::hash_file(join_path(args.out, "cube.cube")));
  doc.set("output_true_abundances", std::string("true_abundances.csv"));
  doc.set("output_true_endmembers", std::string("true_endmembers.csv"));
  io::write_key_values(join_path(args.out, "manifest.txt"), doc);

  std::printf("generate: %ld pixels x %d bands, %s/%s -> %s\n", spec.pixels(), spec.bands,
              sim::to_string(spec.sampler), sim::to_string(spec.model), args.out.c_str());
  return 0;
}

// -- unmix ----------------------------------------------------------------------

struct UnmixArgs {
  std::string cube;
  std::string method;
  std::string out;
  std::string config;
  std::string init_endmembers;
  int endmembers = 0;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

trainer::TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return trainer::TrainConfig{};
  const io::KeyValueDoc doc = io::read_key_values(path);
  std::map<std::string, std::string> kv;
  for (const auto& [key, value] : doc.entries()) kv[key] = value;
  return trainer::TrainConfig::from_key_values(kv);
}

int run_unmix(const UnmixArgs& args) {
  const sim::HsiCube cube = io::read_cube(args.cube);
  ensure_dir(args.out);

  trainer::TrainConfig cfg = load_train_config(args.config);
  if (args.seed) cfg.seed = *args.seed;

  io::KeyValueDoc doc = new_manifest("unmix");
  doc.set("cube", args.cube);
  doc.set("input_hash_cube", io::hash_file(args.cube));
  doc.set("method", args.method);
  doc.set("threads", args.threads);
  for (const auto& [key, value] : cfg.to_key_values()) doc.set(key, value);

  // Initialization: explicit CSV wins, otherwise VCA on the cube.
  Matrix initial;
  if (!args.init_endmembers.empty()) {
    initial = io::read_csv_matrix(args.init_endmembers);
    doc.set("init", args.init_endmembers);
    doc.set("input_hash_init", io::hash_file(args.init_endmembers));
  } else {
    if (args.endmembers < 1)
      throw ShapeError("unmix: --endmembers is required when no --init-endmembers is given");
    classic::VcaResult vca = classic::vca(cube, args.endmembers, cfg.seed);
    initial = vca.endmembers.spectra;
    std::string picked;
    for (std::size_t i = 0; i < vca.indices.size(); ++i)
      picked += (i ? ";" : "") + std::to_string(vca.indices[i]);
    doc.set("init", std::string("vca"));
    doc.set("vca_pixels", picked);
  }

  Matrix abundances, endmembers_est, reconstruction;
  if (args.method == "fcls") {
    abundances = classic::fcls(cube, initial, args.threads).fractions;
    endmembers_est = initial;
    reconstruction = abundances * initial.transpose();
  } else {
    const aec::Variant variant = aec::variant_from_string(args.method);
    aec::AecParams params =
        aec::build_network(static_cast<int>(cube.band_count()),
                           static_cast<int>(initial.cols()), variant, initial, cfg.seed);
    trainer::TrainHistory history;
    try {
      history = trainer::train_in_place(params, cube.pixels, cfg);
    } catch (const trainer::TrainDivergence& e) {
      io::atomic_write(join_path(args.out, "history.csv"), e.history.to_csv());
      throw;
    }
    abundances = aec::encode(cube.pixels, params);
    endmembers_est = params.endmembers_mat;
    reconstruction = aec::reconstruct(cube.pixels, params);
    aec::save_checkpoint(join_path(args.out, "checkpoint.bin"), params);
    io::atomic_write(join_path(args.out, "history.csv"), history.to_csv());
    doc.set("epochs", history.epoch_count());
    doc.set("train_seconds", history.wall_seconds);
    if (params.has_linear_encoder())
      doc.set("alpha", join_doubles(params.encoder_gain().row(0).transpose()));
    aec::NonlinearityReport report = aec::nonlinearity_report(cube.pixels, params);
    doc.set("nonlinearity_gap", report.mean_gap);
  }

  io::write_csv_matrix(join_path(args.out, "abundances.csv"), abundances);
  io::write_csv_matrix(join_path(args.out, "endmembers.csv"), endmembers_est);
  io::write_cube(join_path(args.out, "reconstruction.cube"),
                 sim::HsiCube{reconstruction, cube.grid});
  if (cube.grid)
    io::write_abundance_maps(join_path(args.out, args.method),
                             sim::AbundanceMatrix{abundances, cube.grid});

  io::write_key_values(join_path(args.out, "manifest.txt"), doc);
  std::printf("unmix: %s on %ld pixels -> %s\n", args.method.c_str(), cube.pixel_count(),
              args.out.c_str());
  return 0;
}

// -- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string est_abundances;
  std::string true_abundances;
  std::string est_endmembers;
  std::string true_endmembers;
  std::string recon;
  std::string cube;
  std::string out;
  double seconds = 0.0;
};

int run_evaluate(const EvaluateArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  const Matrix est = io::read_csv_matrix(args.est_abundances);
  const Matrix truth = io::read_csv_matrix(args.true_abundances);

  metrics::Alignment alignment = metrics::align_columns(est, truth);
  metrics::EvalReport report;
  report.rmse_a = alignment.rmse;
  report.permutation = alignment.permutation;

  if (!args.recon.empty() && !args.cube.empty()) {
    const sim::HsiCube recon = io::read_cube(args.recon);
    const sim::HsiCube observed = io::read_cube(args.cube);
    report.rmse_y = metrics::rmse(recon.pixels, observed.pixels);
  }
  if (!args.est_endmembers.empty() && !args.true_endmembers.empty()) {
    const Matrix m_est = io::read_csv_matrix(args.est_endmembers);
    const Matrix m_true = io::read_csv_matrix(args.true_endmembers);
    if (m_est.cols() != m_true.cols() || m_est.rows() != m_true.rows())
      throw ShapeError("evaluate: endmember matrices have different shapes");
    for (int k = 0; k < m_true.cols(); ++k)
      report.endmember_angles.push_back(metrics::spectral_angle(
          m_est.col(alignment.permutation[static_cast<std::size_t>(k)]), m_true.col(k)));
  }
  report.seconds =
      args.seconds > 0.0
          ? args.seconds
          : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::fputs(report.to_key_value().c_str(), stdout);
  ensure_dir(args.out);
  io::atomic_write(join_path(args.out, "report.txt"), report.to_key_value());
  io::atomic_write(join_path(args.out, "report.csv"),
                   metrics::EvalReport::csv_header() + "\n" + report.to_csv_row() + "\n");
  io::KeyValueDoc doc = new_manifest("evaluate");
  doc.set("est_abundances", args.est_abundances);
  doc.set("input_hash_est_abundances", io::hash_file(args.est_abundances));
  doc.set("true_abundances", args.true_abundances);
  doc.set("input_hash_true_abundances", io::hash_file(args.true_abundances));
  io::write_key_values(join_path(args.out, "manifest.txt"), doc);
  return 0;
}

// -- benchmark -------------------------------------------------------------------

struct BenchmarkArgs {
  SceneFlags scene;
  std::string out;
  std::string grid_kind = "reduced";
  std::string methods = "fcls,macu,nfaec,mfaec";
  std::string from_manifest;
  int threads = 2;
  long minibatch = 128;
  int max_epochs = 200;
  double stop_threshold = 0.01;
  bool rm_literal_cosine = false;
};

struct MethodRow {
  std::string method;
  bool diverged = false;
  double rmse_a = 0.0;
  double rmse_y = 0.0;
  double seconds = 0.0;
};

int run_benchmark(BenchmarkArgs args) {
  if (!args.from_manifest.empty()) {
    const io::KeyValueDoc doc = io::read_key_values(args.from_manifest);
    if (doc.get_or("command", "") != "benchmark")
      throw IoError("benchmark: " + args.from_manifest + " is not a benchmark manifest");
    sim::SceneSpec spec = scene_from_manifest(doc);
    args.scene.preset.clear();
    args.scene.pixels = spec.grid ? 0 : spec.pixels();
    args.scene.grid.clear();
    if (spec.grid) args.scene.grid = {spec.grid->rows, spec.grid->cols};
    args.scene.bands = spec.bands;
    args.scene.endmembers = spec.endmembers;
    args.scene.sampler = sim::to_string(spec.sampler);
    args.scene.concentration = spec.dirichlet_concentration;
    args.scene.corr_len = spec.grf_correlation_length;
    args.scene.model = sim::to_string(spec.model);
    args.scene.xi = spec.pnmm_exponent;
    args.scene.snr = spec.snr_db ? format_double(*spec.snr_db) : "none";
    args.scene.seed = spec.seed;
    args.grid_kind = doc.get("search_grid");
    args.methods = doc.get("methods");
    args.minibatch = doc.get_int("minibatch");
    args.max_epochs = static_cast<int>(doc.get_int("max_epochs"));
    args.stop_threshold = doc.get_double("stop_threshold");
    args.rm_literal_cosine = doc.get_or("rm_literal_cosine", "false") == "true";
  }

  const sim::SceneSpec spec = args.scene.resolve();
  const std::vector<std::string> methods = split(args.methods, ',');
  for (const std::string& method : methods)
    if (method != "fcls" && method != "macu" && method != "nfaec" && method != "mfaec")
      throw ShapeError("benchmark: unknown method '" + method + "'");
  ensure_dir(args.out);
  std::printf("benchmark: generating %ld x %d scene (%s, %s)\n", spec.pixels(), spec.bands,
              sim::to_string(spec.sampler), sim::to_string(spec.model));
  const sim::Scene scene = sim::generate_scene(spec);

  classic::VcaResult vca = classic::vca(scene.cube, spec.endmembers, spec.seed);
  const Matrix initial = vca.endmembers.spectra;

  trainer::TrainConfig base;
  base.minibatch = args.minibatch;
  base.max_epochs = args.max_epochs;
  base.stop_threshold = args.stop_threshold;
  base.seed = spec.seed;
  base.rm_literal_cosine = args.rm_literal_cosine;
  const trainer::GridSpec grid = args.grid_kind == "full" ? trainer::GridSpec::full()
                                                          : trainer::GridSpec::reduced();

  std::vector<MethodRow> rows;
  for (const std::string& method : methods) {
    MethodRow row;
    row.method = method;
    try {
      if (method == "fcls") {
        const auto t0 = std::chrono::steady_clock::now();
        const Matrix abundances = classic::fcls(scene.cube, initial, args.threads).fractions;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        row.rmse_a = metrics::align_columns(abundances, scene.abundances.fractions).rmse;
        row.rmse_y = metrics::rmse(abundances * initial.transpose(), scene.cube.pixels);
      } else {
        const aec::Variant variant = aec::variant_from_string(method);
        trainer::GridSearchResult search =
            trainer::grid_search(scene.cube, initial, variant, grid, base,
                                 &scene.abundances, args.threads);
        const trainer::GridCellResult& best = search.best();
        row.rmse_a = best.rmse_a;
        row.rmse_y = best.rmse_y;
        row.seconds = best.train_seconds;
      }
    } catch (const Error& e) {
      row.diverged = true;
      std::fprintf(stderr, "benchmark: %s diverged: %s\n", method.c_str(), e.what());
    }
    rows.push_back(row);
    if (!row.diverged)
      std::printf("benchmark: %-6s rmse_a %.4f rmse_y %.4f (%.1fs)\n", row.method.c_str(),
                  row.rmse_a, row.rmse_y, row.seconds);
  }

  // Deterministic results CSV: no timing, byte-identical across reruns at a
  // fixed thread count. Timing goes to the text table and the manifest.
  std::string csv = "method,rmse_a,rmse_y\n";
  for (const MethodRow& row : rows) {
    csv += row.method + ",";
    csv += row.diverged ? "diverged,diverged" : format_double(row.rmse_a) + "," +
                                                    format_double(row.rmse_y);
    csv += "\n";
  }
  io::atomic_write(join_path(args.out, "benchmark_results.csv"), csv);

  char line[128];
  std::string table;
  std::snprintf(line, sizeof(line), "%-8s %10s %10s %10s\n", "Method", "RMSE_A", "RMSE_Y",
                "Time");
  table += line;
  for (const MethodRow& row : rows) {
    if (row.diverged)
      std::snprintf(line, sizeof(line), "%-8s %10s %10s %10.2f\n", row.method.c_str(),
                    "diverged", "diverged", row.seconds);
    else
      std::snprintf(line, sizeof(line), "%-8s %10.4f %10.4f %10.2f\n", row.method.c_str(),
                    row.rmse_a, row.rmse_y, row.seconds);
    table += line;
  }
  io::atomic_write(join_path(args.out, "benchmark_table.txt"), table);
  std::fputs(table.c_str(), stdout);

  io::KeyValueDoc doc = new_manifest("benchmark");
  manifest_scene(doc, spec);
  doc.set("search_grid", args.grid_kind);
  doc.set("methods", args.methods);
  doc.set("minibatch", static_cast<long long>(args.minibatch));
  doc.set("max_epochs", args.max_epochs);
  doc.set("stop_threshold", args.stop_threshold);
  doc.set("rm_literal_cosine", std::string(args.rm_literal_cosine ? "true" : "false"));
  doc.set("threads", args.threads);
  for (const MethodRow& row : rows) doc.set("seconds_" + row.method, row.seconds);
  doc.set("output_results", std::string("benchmark_results.csv"));
  doc.set("output_results_hash", io::hash_file(join_path(args.out, "benchmark_results.csv")));
  io::write_key_values(join_path(args.out, "manifest.txt"), doc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear hyperspectral unmixing with a model-based autoencoder"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate a synthetic scene");
  gen.scene.add_to(generate, "lmm");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--endmember-csv", gen.endmember_csv,
                       "Load endmembers from CSV (L rows x P columns) instead of generating");

  UnmixArgs um;
  CLI::App* unmix_cmd = app.add_subcommand("unmix", "Estimate abundances for a cube");
  unmix_cmd->add_option("--cube", um.cube, "Input cube file")->required();
  unmix_cmd->add_option("--method", um.method, "macu, nfaec, mfaec, or fcls")
      ->required()
      ->check(CLI::IsMember({"macu", "nfaec", "mfaec", "fcls"}));
  unmix_cmd->add_option("--out", um.out, "Output directory")->required();
  unmix_cmd->add_option("--config", um.config, "Training config file (key = value lines)");
  unmix_cmd->add_option("--endmembers", um.endmembers, "Endmember count for VCA initialization");
  unmix_cmd->add_option("--init-endmembers", um.init_endmembers,
                        "Skip VCA and initialize from this endmember CSV");
  std::uint64_t seed_flag = 0;
  CLI::Option* seed_opt =
      unmix_cmd->add_option("--seed", seed_flag, "Override the config seed");
  unmix_cmd->add_option("--threads", um.threads, "Worker threads for per-pixel solves");

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score an estimate against the truth");
  evaluate->add_option("--est-abundances", ev.est_abundances, "Estimated abundance CSV")
      ->required();
  evaluate->add_option("--true-abundances", ev.true_abundances, "Ground-truth abundance CSV")
      ->required();
  evaluate->add_option("--est-endmembers", ev.est_endmembers, "Estimated endmember CSV");
  evaluate->add_option("--true-endmembers", ev.true_endmembers, "Ground-truth endmember CSV");
  evaluate->add_option("--recon", ev.recon, "Reconstruction cube");
  evaluate->add_option("--cube", ev.cube, "Observed cube (for RMSE_Y)");
  evaluate->add_option("--out", ev.out, "Directory for report.txt / report.csv")->required();
  evaluate->add_option("--seconds", ev.seconds, "Wall time to stamp into the report");

  BenchmarkArgs bench;
  CLI::App* benchmark = app.add_subcommand("benchmark", "Run all methods on a synthetic scene");
  bench.scene.add_to(benchmark, "blmm");
  benchmark->add_option("--out", bench.out, "Output directory")->required();
  benchmark->add_option("--search-grid", bench.grid_kind, "Hyperparameter grid: reduced or full")
      ->check(CLI::IsMember({"reduced", "full"}));
  benchmark->add_option("--methods", bench.methods, "Comma-separated method list");
  benchmark->add_option("--threads", bench.threads, "Concurrent grid cells / pixel solvers");
  benchmark->add_option("--minibatch", bench.minibatch, "Minibatch size");
  benchmark->add_option("--max-epochs", bench.max_epochs, "Epoch cap per training run");
  benchmark->add_option("--stop-threshold", bench.stop_threshold,
                        "Relative epoch-loss change that stops training");
  benchmark->add_flag("--rm-literal-cosine", bench.rm_literal_cosine,
                      "Use the raw-cosine endmember drift term");
  benchmark->add_option("--from-manifest", bench.from_manifest,
                        "Re-run a previous benchmark from its manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*unmix_cmd) {
      if (*seed_opt) um.seed = seed_flag;
      return run_unmix(um);
    }
    if (*evaluate) return run_evaluate(ev);
    if (*benchmark) return run_benchmark(bench);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
