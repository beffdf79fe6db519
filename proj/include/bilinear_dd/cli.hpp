#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>

#include "bilinear_dd/ccp_solver.hpp"
#include "bilinear_dd/examples.hpp"
#include "bilinear_dd/oracle.hpp"

namespace bdd::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kBadConfig = 1, kModuleError = 2, kInsufficientData = 3, kBandMiss = 4 };

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

#ifndef BDD_FIXTURE_DIR
#define BDD_FIXTURE_DIR "data/fixtures"
#endif

inline std::string fixture_dir() {
  if (const char* env = std::getenv("BDD_FIXTURE_DIR")) return env;
  return BDD_FIXTURE_DIR;
}

struct RunConfig {
  std::string fixture;
  std::string system_path;
  std::string random_spec;  // "n,m,seed"
  std::string problem_path;
  std::string dataset_path;
  std::string out = "out";
  std::string log_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<Index> T;
  std::optional<Index> L;
  double tol_rank = 1e-9;
  double amplitude = 0.0;  // ≤ 0 keeps the fixture value
  bool random_inputs = false;
  bool extended = false;
  bool skip_extended = false;
  bool with_oracle = false;
  std::string basis = "whitened";
  int max_outer = 300;
  std::string target = "all";  // reproduce target
};

// ---- Dataset CSV ---------------------------------------------------------
// Header t,u_1..u_m,x_1..x_n; row t carries x(t) and u(t); the last row has
// empty input cells for x(L).

inline void write_dataset_csv(std::ostream& out, const Trajectory& tr) {
  const Index m = tr.inputs.rows(), n = tr.states.rows(), L = tr.inputs.cols();
  out << 't';
  for (Index k = 0; k < m; ++k) out << ",u_" << (k + 1);
  for (Index j = 0; j < n; ++j) out << ",x_" << (j + 1);
  out << '\n';
  for (Index t = 0; t <= L; ++t) {
    out << t;
    for (Index k = 0; k < m; ++k) {
      out << ',';
      if (t < L) out << format_double(tr.inputs(k, t));
    }
    for (Index j = 0; j < n; ++j) out << ',' << format_double(tr.states(j, t));
    out << '\n';
  }
}

inline Trajectory read_dataset_csv(std::istream& in, const std::string& name = "dataset") {
  auto fail = [&](std::size_t row, std::size_t col, const std::string& what) {
    throw ArgumentError(name + ": row " + std::to_string(row) + ", column " + std::to_string(col) + ": " + what);
  };
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ArgumentError(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.empty() || header[0] != "t") fail(1, 1, "header must start with 't'");
  Index m = 0, n = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string expect_u = "u_" + std::to_string(m + 1), expect_x = "x_" + std::to_string(n + 1);
    if (n == 0 && header[c] == expect_u) ++m;
    else if (header[c] == expect_x) ++n;
    else fail(1, c + 1, "unexpected header cell '" + header[c] + "'");
  }
  if (m == 0 || n == 0) fail(1, 1, "header needs at least one u_ and one x_ column");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split(line));
  }
  if (rows.size() < 2) throw ArgumentError(name + ": need at least two samples");
  const Index L = static_cast<Index>(rows.size()) - 1;
  Trajectory tr;
  tr.inputs.resize(m, L);
  tr.states.resize(n, L + 1);
  auto number = [&](const std::string& cell, std::size_t row, std::size_t col) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    const auto res = std::from_chars(first, last, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
      fail(row, col, "expected a finite number, got '" + cell + "'");
    return v;
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    const std::size_t line_no = r + 2;
    if (cells.size() != header.size())
      fail(line_no, std::min(cells.size(), header.size()) + 1,
           "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    if (number(cells[0], line_no, 1) != static_cast<double>(r)) fail(line_no, 1, "time index out of sequence");
    const Index t = static_cast<Index>(r);
    for (Index k = 0; k < m; ++k) {
      const auto& cell = cells[static_cast<std::size_t>(1 + k)];
      if (t == L) {
        if (!cell.empty()) fail(line_no, static_cast<std::size_t>(2 + k), "final row must leave inputs empty");
      } else {
        tr.inputs(k, t) = number(cell, line_no, static_cast<std::size_t>(2 + k));
      }
    }
    for (Index j = 0; j < n; ++j)
      tr.states(j, t) = number(cells[static_cast<std::size_t>(1 + m + j)], line_no, static_cast<std::size_t>(2 + m + j));
  }
  return tr;
}

inline Trajectory load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in, path);
}

// Files produced by one command; removed again unless the command commits.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    if (created_dir_) fs::remove(dir_, ec);
  }
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;

  void write(const std::string& name, const std::string& content) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw CliError(kBadConfig, "cannot write '" + p.string() + "'");
    out << content;
    written_.push_back(p);
  }
  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool created_dir_ = false;
  bool committed_ = false;
};

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string metadata(const std::string& command, double seconds) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&tt), "%Y-%m-%dT%H:%M:%SZ");
  return dump({{"command", command}, {"timestamp", ts.str()}, {"wall_seconds", seconds}});
}

// ---- Configuration -------------------------------------------------------

inline ExampleSetup load_fixture(const std::string& name) {
  example_id(name);  // validates the name
  const fs::path p = fs::path(fixture_dir()) / (name + ".json");
  return example_from_json(read_json_file(p.string()));
}

inline ExampleSetup resolve_setup(const RunConfig& cfg) {
  const int sources = !cfg.fixture.empty() + !cfg.system_path.empty() + !cfg.random_spec.empty();
  if (sources != 1) throw ArgumentError("give exactly one of --fixture, --system, --random");
  ExampleSetup ex;
  bool data_given = false;
  if (!cfg.fixture.empty()) {
    ex = load_fixture(cfg.fixture);
    data_given = true;
  } else if (!cfg.system_path.empty()) {
    const nlohmann::json j = read_json_file(cfg.system_path);
    if (j.contains("system")) {
      ex = example_from_json(j);
      data_given = j.contains("data");
    } else {
      ex.name = "custom";
      ex.system = system_from_json(j);
      if (j.contains("problem")) ex.problem = problem_from_json(j["problem"]);
    }
  } else {
    Index n = 0, m = 0;
    unsigned long long seed = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(cfg.random_spec);
    if (!(ss >> n >> c1 >> m >> c2 >> seed) || c1 != ',' || c2 != ',' || n < 1 || m < 1)
      throw ArgumentError("--random expects 'n,m,seed'");
    ex.name = "random";
    ex.system = random_system(n, m, seed);
  }
  if (!cfg.problem_path.empty()) ex.problem = problem_from_json(read_json_file(cfg.problem_path));
  const Index n = ex.system.n(), m = ex.system.m();
  if (ex.problem.Q.size() == 0) {
    // Minimum-energy transfer between the origin and itself unless a problem is given.
    ex.problem.Q = Matrix::Zero(n, n);
    ex.problem.R = Matrix::Identity(m, m);
    ex.problem.x0 = Vector::Zero(n);
    ex.problem.xf = Vector::Zero(n);
  }
  const Index given_T = ex.problem.T;
  if (cfg.T) {
    if (*cfg.T < 1) throw ArgumentError("--T must be positive");
    ex.problem.T = *cfg.T;
  }
  if (ex.experiment_x0.size() != n) ex.experiment_x0 = ex.problem.x0;
  if (!data_given) ex.collection = DataCollection::OnlineDesign;
  if (cfg.random_inputs) ex.collection = DataCollection::RandomInputs;
  if (cfg.L) ex.L = *cfg.L;
  else if (!data_given || ex.problem.T != given_T) ex.L = min_data_length(n, m, ex.problem.T);
  if (cfg.amplitude > 0.0) ex.input_amplitude = cfg.amplitude;
  if (cfg.epsilon) {
    if (!(*cfg.epsilon > 0.0)) throw ArgumentError("--epsilon must be positive");
    ex.epsilon = *cfg.epsilon;
  }
  if (cfg.seed) ex.data_seed = *cfg.seed;
  ex.problem.validate(n, m);
  return ex;
}

inline Trajectory collect_data(const ExampleSetup& ex, const RunConfig& cfg, std::vector<StepRecord>* log = nullptr,
                               RankCertificate* cert = nullptr) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
  if (ex.collection == DataCollection::OnlineDesign) {
    SimulatedPlant plant(ex.system, Vector::Zero(ex.system.n()));
    ExperimentConfig ec;
    ec.T = ex.problem.T;
    ec.epsilon = ex.epsilon;
    ec.seed = ex.data_seed;
    ec.rel_rank_tol = cfg.tol_rank;
    ExperimentResult r = design_experiment(plant, ec);
    if (log) *log = r.log;
    if (cert) *cert = r.certificate;
    return r.data;
  }
  return example_dataset(ex);
}

// ---- Pipeline ------------------------------------------------------------

struct PipelineResult {
  ExampleSetup setup;
  Trajectory data;
  RankCertificate certificate;
  InitialPointReport init;
  CcpSolution solution;
  ExtractedControl control;
  double reported_cost = 0.0;  // cost_scale · stage cost
  double replay_terminal_error = 0.0;
  double seconds = 0.0;
  Index lifted_dim = 0;
  Index pairs = 0;
  Index equalities = 0;
  std::optional<ShootingResult> oracle;
};

struct PipelineOptions {
  LiftingBasis basis = LiftingBasis::Whitened;
  CcpSettings ccp;
  RankPolicy policy;
  bool run_oracle = false;
};

inline PipelineResult run_pipeline(const ExampleSetup& ex, const Trajectory& data, const PipelineOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineResult res;
  res.setup = ex;
  res.data = data;
  const DataMatrices dm = build_data_matrices(data, ex.problem.T);
  res.certificate = rank_certificate(dm.GT, opt.policy);
  const P2Instance p2 = build_p2(dm, ex.problem, opt.policy);
  LiftOptions lo;
  lo.basis = opt.basis;
  const LiftedProblem lp = lift_to_p3(p2, lo);
  res.lifted_dim = lp.dim();
  res.pairs = lp.num_pairs();
  res.equalities = lp.num_equalities();
  res.init = find_initial_alpha(p2, lp, opt.ccp);
  res.solution = ccp_solve(lp, p2, res.init.alpha, opt.ccp);
  res.control = extract_control(res.solution.alpha, dm, &ex.system);
  res.replay_terminal_error = (res.control.replay.col(ex.problem.T) - ex.problem.xf).norm();
  res.reported_cost = ex.cost_scale * res.solution.cost;
  if (opt.run_oracle) {
    ShootingSettings ss;
    ss.seed = ex.data_seed;
    res.oracle = shooting_solve(ex.system, ex.problem, ss);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline std::string dat_columns(const std::string& title, const Matrix& M, const char* prefix) {
  std::ostringstream os;
  os << "# " << title << "\n# t";
  for (Index r = 0; r < M.rows(); ++r) os << ' ' << prefix << (r + 1);
  os << '\n';
  for (Index t = 0; t < M.cols(); ++t) {
    os << t;
    for (Index r = 0; r < M.rows(); ++r) os << ' ' << format_double(M(r, t));
    os << '\n';
  }
  return os.str();
}

// ---- Commands ------------------------------------------------------------

inline int cmd_design_experiment(const RunConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExampleSetup ex = resolve_setup(cfg);
  OutputSet files(cfg.out);
  std::vector<StepRecord> log;
  RankCertificate cert;
  Trajectory data = collect_data(ex, cfg, &log, &cert);
  const RankPolicy policy{cfg.tol_rank};
  if (log.empty()) cert = rank_certificate(build_data_matrices(data, ex.problem.T).GT, policy);
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  files.write("dataset.csv", csv.str());
  files.write("certificate.json", dump(certificate_to_json(cert)));
  if (!log.empty()) {
    std::ostringstream jl;
    write_experiment_log(jl, log);
    files.write(cfg.log_path.empty() ? "experiment_log.jsonl" : cfg.log_path, jl.str());
  }
  files.write("metadata.json",
              metadata("design-experiment", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  files.commit();
  out << "L = " << data.length() << ", rank " << cert.rank << " of " << cert.rows
      << (cert.full_row_rank ? " (full row rank)" : " (rank deficient)") << "\n";
  return cert.full_row_rank ? kOk : kModuleError;
}

inline int cmd_check_pe(const RunConfig& cfg, std::ostream& out) {
  if (cfg.dataset_path.empty()) throw ArgumentError("check-pe needs a dataset path");
  if (!cfg.T || *cfg.T < 1) throw ArgumentError("check-pe needs --T");
  const Trajectory data = load_dataset(cfg.dataset_path);
  const Index n = data.states.rows(), m = data.inputs.rows(), T = *cfg.T;
  const Index need = min_data_length(n, m, T);
  if (data.length() < need || T > data.length()) {
    out << "insufficient data: L = " << data.length() << " < " << need << " needed for T = " << T << "\n";
    return kInsufficientData;
  }
  const DataMatrices dm = build_data_matrices(data, T);
  const RankCertificate cert = rank_certificate(dm.GT, RankPolicy{cfg.tol_rank});
  out << dump(certificate_to_json(cert));
  return cert.full_row_rank ? kOk : kModuleError;
}

inline PipelineOptions pipeline_options(const RunConfig& cfg) {
  PipelineOptions opt;
  if (cfg.basis == "whitened") opt.basis = LiftingBasis::Whitened;
  else if (cfg.basis == "raw") opt.basis = LiftingBasis::RawAlpha;
  else throw ArgumentError("--basis must be 'whitened' or 'raw'");
  opt.policy = RankPolicy{cfg.tol_rank};
  opt.ccp.max_outer = cfg.max_outer;
  opt.run_oracle = cfg.with_oracle;
  return opt;
}

inline void require_extended(const ExampleSetup& ex, const RunConfig& cfg) {
  if (ex.extended && !cfg.extended)
    throw ArgumentError(ex.name + " is long-running; pass --extended to run it");
}

inline int cmd_solve(const RunConfig& cfg, std::ostream& out) {
  const ExampleSetup ex = resolve_setup(cfg);
  require_extended(ex, cfg);
  OutputSet files(cfg.out);
  const Trajectory data = collect_data(ex, cfg);
  const PipelineResult r = run_pipeline(ex, data, pipeline_options(cfg));
  nlohmann::json sol = solution_to_json(r.solution);
  sol["reported_cost"] = r.reported_cost;
  sol["cost_scale"] = ex.cost_scale;
  sol["replay_terminal_error"] = r.replay_terminal_error;
  sol["initialization"] = {{"phase_a_source", r.init.phase_a_source},
                           {"phase_a_terminal_error", r.init.phase_a_terminal_error},
                           {"phase_b_iterations", r.init.phase_b_iterations},
                           {"final_violation", r.init.final_violation}};
  if (r.oracle) sol["oracle"] = shooting_to_json(*r.oracle);
  files.write("solution.json", dump(sol));
  std::ostringstream traj, trace;
  write_trajectory_csv(traj, r.solution.trajectory.xbar, r.solution.trajectory.ubar);
  write_trace_csv(trace, r.solution.trace);
  files.write("trajectory.csv", traj.str());
  files.write("trace.csv", trace.str());
  files.write("inputs.dat", dat_columns("planned input", r.solution.trajectory.ubar, "u_"));
  files.write("states.dat", dat_columns("predicted state", r.solution.trajectory.xbar, "x_"));
  files.write("replay.dat", dat_columns("replayed state", r.control.replay, "x_"));
  Matrix costs(1, static_cast<Index>(r.solution.trace.size()));
  for (Index k = 0; k < costs.cols(); ++k) costs(0, k) = r.solution.trace[static_cast<std::size_t>(k)].cost;
  files.write("cost.dat", dat_columns("cost per iteration", costs, "cost"));
  files.write("metadata.json", metadata("solve", r.seconds));
  files.commit();
  out << ex.name << ": status " << to_string(r.solution.status) << ", cost " << format_double(r.reported_cost)
      << ", replay terminal error " << format_double(r.replay_terminal_error) << "\n";
  return r.solution.status == CcpStatus::Converged ? kOk : kModuleError;
}

inline int cmd_oracle(const RunConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExampleSetup ex = resolve_setup(cfg);
  OutputSet files(cfg.out);
  ShootingSettings ss;
  ss.seed = ex.data_seed;
  const ShootingResult r = shooting_solve(ex.system, ex.problem, ss);
  nlohmann::json j = shooting_to_json(r);
  j["reported_cost"] = ex.cost_scale * r.cost;
  files.write("oracle.json", dump(j));
  files.write("metadata.json",
              metadata("oracle", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  files.commit();
  out << ex.name << ": shooting cost " << format_double(ex.cost_scale * r.cost) << ", terminal error "
      << format_double(r.terminal_error) << "\n";
  return kOk;
}

struct ReproduceRow {
  std::string name;
  double measured = 0.0;
  double reference = 0.0;
  double lo = 0.0, hi = 0.0;
  double baseline = 0.0;
  double seconds = 0.0;
  bool pass = false;
  std::string note;
};

inline int cmd_reproduce(const RunConfig& cfg, std::ostream& out) {
  std::vector<int> ids;
  if (cfg.target == "all") ids = {1, 2, 3};
  else ids = {example_id(cfg.target)};
  std::vector<ReproduceRow> rows;
  for (int id : ids) {
    const ExampleSetup ex = example_setup(id);
    if (ex.extended && (cfg.skip_extended || (!cfg.extended && cfg.target == "all"))) continue;
    require_extended(ex, cfg);
    RunConfig c = cfg;
    c.fixture = ex.name;
    PipelineOptions opt = pipeline_options(c);
    const PipelineResult r = run_pipeline(ex, example_dataset(ex), opt);
    ReproduceRow row{ex.name, r.reported_cost, ex.reference_cost, ex.band_lo, ex.band_hi, ex.baseline_cost, r.seconds, false, {}};
    row.pass = r.solution.status == CcpStatus::Converged && r.reported_cost >= ex.band_lo && r.reported_cost <= ex.band_hi;
    if (r.solution.status != CcpStatus::Converged) row.note = to_string(r.solution.status);
    rows.push_back(row);
  }
  bool all = true;
  out << std::left << std::setw(10) << "example" << std::setw(16) << "measured" << std::setw(12) << "reference"
      << std::setw(24) << "band" << std::setw(12) << "baseline" << std::setw(10) << "seconds" << "result\n";
  for (const auto& r : rows) {
    std::ostringstream band;
    band << '[' << format_double(r.lo) << ", " << format_double(r.hi) << ']';
    out << std::left << std::setw(10) << r.name << std::setw(16) << format_double(round_significant(r.measured, 8))
        << std::setw(12) << format_double(r.reference) << std::setw(24) << band.str() << std::setw(12)
        << format_double(r.baseline) << std::setw(10) << format_double(round_significant(r.seconds, 3))
        << (r.pass ? "PASS" : "FAIL") << (r.note.empty() ? "" : " (" + r.note + ")") << "\n";
    all = all && r.pass;
  }
  if (!all) {
    out << "difference to band:\n";
    for (const auto& r : rows)
      if (!r.pass)
        out << "  " << r.name << ": measured " << format_double(r.measured) << ", "
            << (r.measured < r.lo ? "below by " + format_double(r.lo - r.measured)
                                  : "above by " + format_double(r.measured - r.hi))
            << "\n";
  }
  return all ? kOk : kBandMiss;
}

// ---- Entry point ---------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Data-driven optimal control of bilinear systems"};
  app.set_config("--config", "", "key = value configuration file");
  app.require_subcommand(1);
  RunConfig cfg;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  Index T = 0, L = 0;
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--tol-rank", cfg.tol_rank, "relative rank tolerance");
  auto* eps_opt = app.add_option("--epsilon", epsilon, "input bound for the online experiment");
  app.add_flag("--extended", cfg.extended, "allow long-running examples");
  app.add_option("--fixture", cfg.fixture, "bundled example (example1, example2, example3)");
  app.add_option("--system", cfg.system_path, "system JSON file");
  app.add_option("--random", cfg.random_spec, "random system 'n,m,seed'");
  app.add_option("--problem", cfg.problem_path, "problem JSON file (Q, R, x0, xf, T)");
  auto* T_opt = app.add_option("--T", T, "horizon");
  auto* L_opt = app.add_option("--L", L, "data length for random inputs");
  app.add_option("--dataset", cfg.dataset_path, "dataset CSV");
  app.add_option("--amplitude", cfg.amplitude, "random input amplitude");
  app.add_flag("--random-inputs", cfg.random_inputs, "collect data with random inputs");
  app.add_option("--log", cfg.log_path, "experiment log file name");
  app.add_option("--basis", cfg.basis, "lifting coordinates: whitened or raw");
  app.add_option("--max-outer", cfg.max_outer, "outer iteration limit");
  app.add_flag("--with-oracle", cfg.with_oracle, "also run the shooting baseline");
  app.add_flag("--skip-extended", cfg.skip_extended, "skip long-running examples");
  app.fallthrough();

  auto* design = app.add_subcommand("design-experiment", "collect T-persistently exciting data");
  auto* check = app.add_subcommand("check-pe", "certify a dataset");
  check->add_option("dataset", cfg.dataset_path, "dataset CSV");
  auto* solve = app.add_subcommand("solve", "solve the data-based optimal control problem");
  auto* repro = app.add_subcommand("reproduce", "rerun the bundled examples against their bands");
  repro->add_option("example", cfg.target, "example1, example2, example3 or all");
  auto* orac = app.add_subcommand("oracle", "model-based shooting baseline");
  for (auto* sc : {design, check, solve, repro, orac}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadConfig;
  }
  if (*seed_opt) cfg.seed = seed;
  if (*eps_opt) cfg.epsilon = epsilon;
  if (*T_opt) cfg.T = T;
  if (*L_opt) cfg.L = L;
  try {
    if (*design) return cmd_design_experiment(cfg, out);
    if (*check) return cmd_check_pe(cfg, out);
    if (*solve) return cmd_solve(cfg, out);
    if (*repro) return cmd_reproduce(cfg, out);
    if (*orac) return cmd_oracle(cfg, out);
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kModuleError;
  }
  return kBadConfig;
}

}  // namespace bdd::cli
