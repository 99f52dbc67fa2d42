#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oadlab/fod.hpp"
#include "oadlab/inference.hpp"
#include "oadlab/session.hpp"
#include "oadlab/sim.hpp"

namespace {

using nlohmann::json;
using namespace oadlab;

constexpr const char* kVersion = "oadlab 1.0.0";

void atomic_write(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io, "cannot open '" + tmp + "' for writing");
    out << contents;
    out.flush();
    require(out.good(), errc::io, "write to '" + tmp + "' failed");
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, errc::io,
          "cannot move output into place at '" + path + "'");
}

void write_or_print(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    atomic_write(out_path, text);
  }
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::VectorXd json_to_vector(const json& arr, const char* what) {
  require(arr.is_array() && !arr.empty(), errc::config,
          std::string(what) + " must be a nonempty array");
  Eigen::VectorXd v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) {
    require(arr[i].is_number(), errc::config,
            std::string(what) + " entries must be numbers");
    v(static_cast<long>(i)) = arr[i].get<double>();
  }
  return v;
}

int default_workers() {
  const char* env = std::getenv("OADLAB_WORKERS");
  if (env == nullptr || *env == '\0') return 0;
  try {
    size_t used = 0;
    int w = std::stoi(env, &used);
    require(used == std::string(env).size() && w >= 1, errc::config,
            "OADLAB_WORKERS must be a positive integer");
    return w;
  } catch (const OadError&) {
    throw;
  } catch (const std::exception&) {
    fail(errc::config, "OADLAB_WORKERS must be a positive integer");
  }
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::config, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    fail(errc::config, std::string("config JSON parse failure: ") + e.what());
  }
  require(doc.is_object(), errc::config, "config must be a JSON object");
  for (const char* name : {"model", "criterion", "error_model", "n_grid"}) {
    require(doc.contains(name), errc::config,
            std::string("config is missing the '") + name + "' field");
  }

  SimConfig config;
  config.spec = parse_model(doc["model"].get<std::string>());
  config.crit = Criterion::parse(doc["criterion"].get<std::string>());
  config.err = ErrorModel::parse(doc["error_model"].get<std::string>());
  require(doc["n_grid"].is_array() && !doc["n_grid"].empty(), errc::config,
          "config 'n_grid' must be a nonempty array");
  for (const auto& n : doc["n_grid"]) {
    require(n.is_number_integer() && n.get<long>() >= 1, errc::config,
            "config 'n_grid' entries must be positive integers");
    config.n_grid.push_back(n.get<long>());
  }
  if (doc.contains("beta")) {
    config.beta = json_to_vector(doc["beta"], "config 'beta'");
    require(config.beta.size() == config.spec.p, errc::config,
            "config 'beta' length must equal the parameter count");
  } else {
    config.beta = Eigen::VectorXd::Ones(config.spec.p);
  }
  if (doc.contains("replicates")) {
    config.replicates = doc["replicates"].get<long>();
  }
  if (doc.contains("seed")) {
    config.master_seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("k")) config.road.k = doc["k"].get<int>();
  if (doc.contains("q_floor")) {
    config.road.q_floor = doc["q_floor"].get<double>();
  }
  if (doc.contains("arms")) {
    config.arms.clear();
    require(doc["arms"].is_array() && !doc["arms"].empty(), errc::config,
            "config 'arms' must be a nonempty array");
    for (const auto& a : doc["arms"]) {
      config.arms.push_back(parse_arm(a.get<std::string>()));
    }
  }
  if (doc.contains("power")) {
    const json& p = doc["power"];
    PowerBlock block;
    require(p.contains("c"), errc::config,
            "config 'power' needs a contrast 'c'");
    block.c = json_to_vector(p["c"], "config 'power.c'");
    block.C0 = p.value("C0", 0.0);
    block.alpha = p.value("alpha", 0.05);
    config.power_block = block;
  }
  return config;
}

// ---- subcommand bodies --------------------------------------------------

struct FodArgs {
  std::string model;
  std::string criterion = "D";
  double tol = 1e-7;
  long max_iter = 200000;
  std::string out;
};

int cmd_fod(const FodArgs& args) {
  ModelSpec spec = parse_model(args.model);
  Criterion crit = Criterion::parse(args.criterion);
  FodOptions opts;
  opts.tol = args.tol;
  opts.max_iter = args.max_iter;
  FodResult fod = solve_fod(spec, crit, {}, opts);

  json doc;
  doc["model"] = spec.name;
  doc["criterion"] = crit.name();
  doc["support"] = json::array();
  doc["points"] = json::array();
  for (int i = 0; i < fod.design.d(); ++i) {
    doc["support"].push_back(fod.design.support[i]);
    json pt = json::array();
    for (int k = 0; k < spec.s; ++k) {
      pt.push_back(spec.candidates(fod.design.support[i], k));
    }
    doc["points"].push_back(pt);
  }
  doc["weights"] = vector_to_json(fod.design.weights);
  doc["criterion_value"] = fod.criterion_value;
  doc["iterations"] = fod.iterations;
  doc["get_violation"] = fod.get_violation;
  write_or_print(args.out, doc.dump(2) + "\n");
  return 0;
}

struct Table1Args {
  int max_s = 9;
  std::string criteria = "D,A";
  int quad_max_s = 6;
  std::string out;
};

int cmd_table1(const Table1Args& args) {
  std::vector<Criterion> crits;
  std::stringstream ss(args.criteria);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) crits.push_back(Criterion::parse(tok));
  }
  std::vector<Table1Cell> cells = table1(args.max_s, crits, args.quad_max_s);
  std::string out = "family,s,p,criterion,d,R_star,psi_star,ok,error\n";
  for (const auto& cell : cells) {
    json r = cell.R_star, psi = cell.psi_star;  // round-trip formatting
    out += cell.family + "," + std::to_string(cell.s) + "," +
           std::to_string(cell.p) + "," + cell.criterion + "," +
           std::to_string(cell.d) + "," + (cell.ok ? r.dump() : "") + "," +
           (cell.ok ? psi.dump() : "") + "," + (cell.ok ? "1" : "0") + ",\"" +
           cell.error + "\"\n";
  }
  write_or_print(args.out, out);
  return 0;
}

struct CurvatureArgs {
  std::string model;
  std::string criterion = "D";
  std::string error_model = "normal";
  long n = 100;
  std::string v_form = "multinomial";
  std::string out;
};

int cmd_curvature(const CurvatureArgs& args) {
  ModelSpec spec = parse_model(args.model);
  Criterion crit = Criterion::parse(args.criterion);
  ErrorModel err = ErrorModel::parse(args.error_model);
  VStarForm form;
  if (args.v_form == "multinomial") {
    form = VStarForm::multinomial;
  } else if (args.v_form == "block") {
    form = VStarForm::block_formula;
  } else {
    fail(errc::config, "--v-form must be 'multinomial' or 'block'");
  }
  FodResult fod = solve_fod(spec, crit);
  CurvatureReport rep = curvature_report(spec, crit, fod, err, args.n, form);

  json doc;
  doc["model"] = spec.name;
  doc["criterion"] = crit.name();
  doc["error_model"] = err.name();
  doc["n"] = args.n;
  doc["d"] = fod.design.d();
  doc["psi_star"] = fod.criterion_value;
  doc["R_star"] = rep.R_star;
  doc["gamma_sq"] = rep.gamma_sq;
  doc["h"] = rep.h;
  doc["S_star"] = rep.S_star;
  doc["H_star"] = matrix_to_json(rep.H_star);
  doc["V_star"] = matrix_to_json(rep.V_star);
  write_or_print(args.out, doc.dump(2) + "\n");
  return 0;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::string format = "csv";
  long replicates = -1;
  long long seed = -1;
  int workers = 0;
};

int cmd_simulate(const SimulateArgs& args) {
  SimConfig config = load_sim_config(args.config);
  if (args.replicates > 0) config.replicates = args.replicates;
  if (args.seed >= 0) {
    config.master_seed = static_cast<std::uint64_t>(args.seed);
  }
  int workers = args.workers > 0 ? args.workers : default_workers();
  EmitFormat format;
  if (args.format == "csv") {
    format = EmitFormat::csv;
  } else if (args.format == "json") {
    format = EmitFormat::json;
  } else {
    fail(errc::config, "--format must be 'csv' or 'json'");
  }
  std::cout << "seed: " << config.master_seed << "\n";
  SimResult result = run_sim(config, workers);
  emit_results(result, args.out, format);
  std::cout << "model: " << result.model_name
            << ", error_model: " << result.error_name
            << ", criterion: " << result.criterion_name
            << ", replicates: " << result.replicates << "\n";
  for (const auto& eff : result.eff) {
    std::cout << "n=" << eff.n << " eff_ci=" << eff.eff_ci << " (se "
              << eff.eff_ci_se << ") eff_umse=" << eff.eff_umse << "\n";
  }
  std::cout << "wrote " << args.out << " (" << result.wall_seconds << " s)\n";
  return 0;
}

struct PowerArgs {
  std::string config;
  double target = 0.8;
  std::string out;
  long replicates = -1;
  long long seed = -1;
  int workers = 0;
};

int cmd_power(const PowerArgs& args) {
  SimConfig config = load_sim_config(args.config);
  if (args.replicates > 0) config.replicates = args.replicates;
  if (args.seed >= 0) {
    config.master_seed = static_cast<std::uint64_t>(args.seed);
  }
  int workers = args.workers > 0 ? args.workers : default_workers();
  std::cout << "seed: " << config.master_seed << "\n";
  PowerCurve curve = power_curve(config, args.target, workers);

  json doc;
  doc["seed"] = config.master_seed;
  doc["target"] = curve.target;
  doc["points"] = json::array();
  for (const auto& pt : curve.points) {
    doc["points"].push_back({{"arm", arm_name(pt.arm)},
                             {"n", pt.n},
                             {"power", pt.power},
                             {"stderr", pt.se},
                             {"completed", pt.completed}});
  }
  auto n_or_null = [](double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
  };
  doc["n_for_target"] = {{"ROAD", n_or_null(curve.n_road)},
                         {"FOD", n_or_null(curve.n_fod)}};
  std::string text = doc.dump(2) + "\n";
  std::cout << text;
  if (!args.out.empty()) atomic_write(args.out, text);
  return 0;
}

struct FitArgs {
  std::string session;
  std::string contrast;
  double C0 = 0.0;
  double alpha = 0.05;
  std::string out;
};

int cmd_fit(const FitArgs& args) {
  SessionFile session = load_session(args.session);
  LiveSession live = open_session(session);
  require(live.state.j > 0, errc::data_shape,
          "the session has no observations to fit");
  FitResult fit = fit_mle(*live.spec, live.state);

  json doc;
  doc["model"] = live.spec->name;
  doc["error_model"] = live.err.name();
  doc["beta_hat"] = vector_to_json(fit.beta_hat);
  doc["eta_hat"] = vector_to_json(fit.eta_hat);
  doc["i_a"] = vector_to_json(fit.i_a);
  doc["J"] = matrix_to_json(fit.J.m);
  doc["converged"] = fit.converged;
  doc["loglik"] = fit.loglik;
  doc["alpha"] = args.alpha;
  doc["ellipsoid_log_volume"] = ellipsoid_log_volume(fit, args.alpha);
  if (!args.contrast.empty()) {
    Criterion cparse = Criterion::parse("c:" + args.contrast);
    TestResult tr = chi2_test(fit, cparse.cvec, args.C0, args.alpha);
    doc["test"] = {{"statistic", tr.statistic},
                   {"reject", tr.reject},
                   {"alpha", tr.alpha},
                   {"c_value", tr.c_value},
                   {"C0", args.C0}};
  }
  write_or_print(args.out, doc.dump(2) + "\n");
  return 0;
}

struct RoadNextArgs {
  std::string session;
};

int cmd_road_next(const RoadNextArgs& args) {
  SessionFile session = load_session(args.session);
  LiveSession live = open_session(session);
  const ExperimentState& state = live.state;
  long init_len = state.initial_phase_length();
  int point;
  std::string phase;
  if (state.j < init_len) {
    point = scheduled_initial_point(state, state.j);
    phase = "initialization";
  } else {
    point = next_point(state, live.crit);
    phase = "adaptive";
  }
  int candidate = state.design.support[point];
  std::cout << "next_point: " << (point + 1) << "\n";
  std::cout << "phase: " << phase << "\n";
  std::cout << "candidate_index: " << candidate << "\n";
  std::cout << "factors: [";
  for (int k = 0; k < live.spec->s; ++k) {
    std::cout << (k ? ", " : "") << live.spec->candidates(candidate, k);
  }
  std::cout << "]\n";
  auto print_vec = [](const char* label, const Eigen::VectorXd& v) {
    std::cout << label << ": [";
    for (long i = 0; i < v.size(); ++i) {
      std::cout << (i ? ", " : "") << v(i);
    }
    std::cout << "]\n";
  };
  print_vec("omega", state.omega);
  print_vec("w_star", state.design.weights);
  std::cout << "Q: " << state.Q << "\n";
  std::cout << "observations: " << state.j << " of "
            << state.cfg.total_n << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal and observed-information adaptive design toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  FodArgs fod_args;
  auto* fod_cmd = app.add_subcommand(
      "fod", "Solve for a continuous optimal design");
  fod_cmd->add_option("--model", fod_args.model,
                      "Model name, e.g. treatment:4, interaction:3, "
                      "quadratic:2, custom:spec.json")
      ->required();
  fod_cmd->add_option("--criterion", fod_args.criterion,
                      "D, A, or c:[v1,...,vp]");
  fod_cmd->add_option("--tol", fod_args.tol, "Equivalence-theorem tolerance");
  fod_cmd->add_option("--max-iter", fod_args.max_iter, "Iteration budget");
  fod_cmd->add_option("--out", fod_args.out, "Write JSON here (atomic)");

  Table1Args table_args;
  auto* table_cmd = app.add_subcommand(
      "table1", "Curvature summary R* across model families");
  table_cmd->add_option("--max-s", table_args.max_s, "Largest factor count");
  table_cmd->add_option("--criteria", table_args.criteria,
                        "Comma-separated criteria (default D,A)");
  table_cmd->add_option("--quad-max-s", table_args.quad_max_s,
                        "Cap for the quadratic family");
  table_cmd->add_option("--out", table_args.out, "Write CSV here (atomic)");

  CurvatureArgs curv_args;
  auto* curv_cmd = app.add_subcommand(
      "curvature", "Curvature report (R*, h, S*) for one case");
  curv_cmd->add_option("--model", curv_args.model, "Model name")->required();
  curv_cmd->add_option("--criterion", curv_args.criterion, "Criterion");
  curv_cmd->add_option("--error", curv_args.error_model,
                       "normal, str:v, or ghr:v");
  curv_cmd->add_option("--n", curv_args.n, "Sample size for h and S*");
  curv_cmd->add_option("--v-form", curv_args.v_form,
                       "Allocation covariance form: multinomial or block");
  curv_cmd->add_option("--out", curv_args.out, "Write JSON here (atomic)");

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Monte Carlo comparison of adaptive and fixed designs");
  sim_cmd->add_option("--config", sim_args.config, "Config JSON path")
      ->required();
  sim_cmd->add_option("--out", sim_args.out, "Results path")->required();
  sim_cmd->add_option("--format", sim_args.format, "csv or json");
  sim_cmd->add_option("--replicates", sim_args.replicates,
                      "Override replicate count");
  sim_cmd->add_option("--seed", sim_args.seed, "Override master seed");
  sim_cmd->add_option("--workers", sim_args.workers,
                      "Worker threads (default OADLAB_WORKERS or cores)");

  PowerArgs power_args;
  auto* power_cmd = app.add_subcommand(
      "power", "Power curve and sample size for a contrast test");
  power_cmd->add_option("--config", power_args.config, "Config JSON path")
      ->required();
  power_cmd->add_option("--target", power_args.target, "Nominal power");
  power_cmd->add_option("--out", power_args.out, "Also write JSON here");
  power_cmd->add_option("--replicates", power_args.replicates,
                        "Override replicate count");
  power_cmd->add_option("--seed", power_args.seed, "Override master seed");
  power_cmd->add_option("--workers", power_args.workers, "Worker threads");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand(
      "fit", "Fit the regression MLE from a session file");
  fit_cmd->add_option("--session", fit_args.session, "Session JSON path")
      ->required();
  fit_cmd->add_option("--c", fit_args.contrast,
                      "Contrast [v1,...,vp] for a chi-square test");
  fit_cmd->add_option("--C0", fit_args.C0, "Null value of the contrast");
  fit_cmd->add_option("--alpha", fit_args.alpha, "Test/ellipsoid level");
  fit_cmd->add_option("--out", fit_args.out, "Write JSON here (atomic)");

  RoadNextArgs next_args;
  auto* next_cmd = app.add_subcommand(
      "road-next", "Recommend the next point for a live session");
  next_cmd->add_option("--session", next_args.session, "Session JSON path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (fod_cmd->parsed()) return cmd_fod(fod_args);
    if (table_cmd->parsed()) return cmd_table1(table_args);
    if (curv_cmd->parsed()) return cmd_curvature(curv_args);
    if (sim_cmd->parsed()) return cmd_simulate(sim_args);
    if (power_cmd->parsed()) return cmd_power(power_args);
    if (fit_cmd->parsed()) return cmd_fit(fit_args);
    if (next_cmd->parsed()) return cmd_road_next(next_args);
    std::cerr << "error: no subcommand selected\n" << app.help() << "\n";
    return 2;
  } catch (const OadError& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what()
              << "\n";
    return is_usage_error(e.code()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
