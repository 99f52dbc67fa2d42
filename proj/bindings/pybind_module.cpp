// Python bindings for the oadlab core: design solving, curvature
// reports, error-model utilities, adaptive sessions, inference, and the
// simulation harness. Model, error-model, and criterion arguments are
// the same strings the CLI accepts ("treatment:4", "str:1", "c:[1,0]").

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/fod.hpp"
#include "oadlab/inference.hpp"
#include "oadlab/model.hpp"
#include "oadlab/rng.hpp"
#include "oadlab/road.hpp"
#include "oadlab/sim.hpp"

namespace py = pybind11;

namespace {

oadlab::VStarForm parse_v_form(const std::string& name) {
  if (name == "multinomial") return oadlab::VStarForm::multinomial;
  if (name == "block") return oadlab::VStarForm::block_formula;
  oadlab::fail(oadlab::errc::config,
               "v_form must be 'multinomial' or 'block', got '" + name + "'");
}

py::dict fod_result_dict(const oadlab::FodResult& result) {
  py::dict out;
  out["support"] = result.design.support;
  out["weights"] = result.design.weights;
  out["criterion_value"] = result.criterion_value;
  out["get_violation"] = result.get_violation;
  out["iterations"] = result.iterations;
  return out;
}

oadlab::FodResult solve_parsed(const oadlab::ModelSpec& spec,
                               const oadlab::Criterion& crit, long max_iter,
                               double tol) {
  oadlab::FodOptions opts;
  opts.max_iter = max_iter;
  opts.tol = tol;
  return oadlab::solve_fod(spec, crit, {}, opts);
}

// Groups per-observation records (0-based candidate indices) into the
// per-point buffers the fitter consumes; points are ordered by ascending
// candidate index.
oadlab::SampleData group_observations(
    const std::vector<int>& points, const std::vector<double>& ys,
    const std::optional<std::vector<double>>& ancillaries) {
  oadlab::require(points.size() == ys.size(), oadlab::errc::data_shape,
                  "points and ys must have the same length");
  if (ancillaries.has_value()) {
    oadlab::require(ancillaries->size() == ys.size(),
                    oadlab::errc::data_shape,
                    "ancillaries must match ys in length");
  }
  std::vector<int> order;
  for (int point : points) {
    if (std::find(order.begin(), order.end(), point) == order.end()) {
      order.push_back(point);
    }
  }
  std::sort(order.begin(), order.end());

  oadlab::SampleData data;
  data.support = order;
  data.ys.resize(order.size());
  data.ancillaries.resize(order.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto slot = std::distance(
        order.begin(), std::find(order.begin(), order.end(), points[i]));
    data.ys[slot].push_back(ys[i]);
    if (ancillaries.has_value()) {
      data.ancillaries[slot].push_back((*ancillaries)[i]);
    }
  }
  return data;
}

py::dict fit_result_dict(const oadlab::FitResult& fit,
                         const std::vector<int>& support) {
  py::dict out;
  out["beta_hat"] = fit.beta_hat;
  out["eta_hat"] = fit.eta_hat;
  out["i_a"] = fit.i_a;
  out["J"] = fit.J.m;
  out["converged"] = fit.converged;
  out["loglik"] = fit.loglik;
  out["support"] = support;
  return out;
}

oadlab::SimConfig make_sim_config(
    const std::string& model, const std::string& error,
    const std::string& criterion, const Eigen::VectorXd& beta,
    const std::vector<long>& n_grid, long replicates, std::uint64_t seed,
    int k, double q_floor,
    const std::optional<Eigen::VectorXd>& power_c, double C0, double alpha) {
  oadlab::SimConfig config;
  config.spec = oadlab::parse_model(model);
  config.err = oadlab::ErrorModel::parse(error);
  config.crit = oadlab::Criterion::parse(criterion);
  config.beta = beta;
  config.n_grid = n_grid;
  config.replicates = replicates;
  config.master_seed = seed;
  config.road.k = k;
  config.road.q_floor = q_floor;
  if (power_c.has_value()) {
    oadlab::PowerBlock block;
    block.c = *power_c;
    block.C0 = C0;
    block.alpha = alpha;
    config.power_block = block;
  }
  return config;
}

py::dict sim_result_dict(const oadlab::SimResult& result) {
  py::dict out;
  py::list cells;
  for (const auto& cell : result.cells) {
    py::dict row;
    row["arm"] = oadlab::arm_name(cell.arm);
    row["n"] = cell.n;
    row["completed"] = cell.completed;
    row["failures"] = cell.failures;
    row["psi_mean"] = cell.psi_mean;
    row["psi_se"] = cell.psi_se;
    row["psi_fig_mean"] = cell.psi_fig_mean;
    row["psi_fig_se"] = cell.psi_fig_se;
    row["mse"] = cell.mse;
    row["psi_mse_inv"] = cell.psi_mse_inv;
    if (cell.has_power) {
      row["reject_rate"] = cell.reject_rate;
      row["reject_se"] = cell.reject_se;
    }
    cells.append(row);
  }
  out["cells"] = cells;
  py::list eff;
  for (const auto& cell : result.eff) {
    py::dict row;
    row["n"] = cell.n;
    row["eff_ci"] = cell.eff_ci;
    row["eff_ci_se"] = cell.eff_ci_se;
    row["eff_umse"] = cell.eff_umse;
    eff.append(row);
  }
  out["eff"] = eff;
  out["seed"] = result.master_seed;
  out["replicates"] = result.replicates;
  out["model"] = result.model_name;
  out["error"] = result.error_name;
  out["criterion"] = result.criterion_name;
  out["wall_seconds"] = result.wall_seconds;
  return out;
}

// Owning wrapper for one adaptive experiment: solves the stage-1 design
// at construction, then records responses and recommends points.
class PyRoadSession {
 public:
  PyRoadSession(const std::string& model, const std::string& error,
                const std::string& criterion, long total_n, int k,
                double q_floor)
      : spec_(oadlab::parse_model(model)),
        err_(oadlab::ErrorModel::parse(error)),
        crit_(oadlab::Criterion::parse(criterion)) {
    fod_ = oadlab::solve_fod(spec_, crit_);
    oadlab::RoadConfig cfg;
    cfg.k = k;
    cfg.q_floor = q_floor;
    cfg.total_n = total_n;
    state_ = oadlab::init_state(spec_, fod_, err_, cfg);
  }

  int next_point() const {
    if (state_.j < state_.initial_phase_length()) {
      return oadlab::scheduled_initial_point(state_, state_.j);
    }
    return oadlab::next_point(state_, crit_);
  }

  std::string phase() const {
    return state_.j < state_.initial_phase_length() ? "initialization"
                                                    : "adaptive";
  }

  void record(int point, double y, std::optional<double> ancillary) {
    oadlab::record_response(state_, point, y, ancillary);
  }

  py::dict fit() const {
    const auto result = oadlab::fit_mle(spec_, state_);
    return fit_result_dict(result, state_.design.support);
  }

  py::dict design() const { return fod_result_dict(fod_); }

  long j() const { return state_.j; }
  int d() const { return state_.d(); }
  long total_n() const { return state_.cfg.total_n; }
  Eigen::VectorXd omega() const { return state_.omega; }
  Eigen::VectorXd q() const { return state_.q; }
  Eigen::VectorXd i_a() const { return state_.i_a; }
  Eigen::VectorXd eta_hat() const { return state_.eta_hat; }

  std::vector<int> counts() const {
    const auto realized = state_.realized();
    return std::vector<int>(realized.counts.data(),
                            realized.counts.data() + realized.counts.size());
  }

  py::list history() const {
    py::list out;
    for (const auto& entry : state_.history) {
      py::dict row;
      row["point"] = entry.point;
      row["y"] = entry.y;
      if (entry.ancillary.has_value()) row["ancillary"] = *entry.ancillary;
      out.append(row);
    }
    return out;
  }

 private:
  oadlab::ModelSpec spec_;
  oadlab::ErrorModel err_;
  oadlab::Criterion crit_;
  oadlab::FodResult fod_;
  oadlab::ExperimentState state_;
};

}  // namespace

PYBIND11_MODULE(_oadlab, m) {
  m.doc() =
      "Optimal-design toolkit: criterion solvers, curvature reports, "
      "adaptive design sessions, inference, and the simulation harness.";

  py::register_exception<oadlab::OadError>(m, "Error");

  m.def(
      "model_info",
      [](const std::string& model) {
        const auto spec = oadlab::parse_model(model);
        py::dict out;
        out["name"] = spec.name;
        out["p"] = spec.p;
        out["candidates"] = spec.candidates;
        out["features"] = spec.features;
        return out;
      },
      py::arg("model"),
      "Candidate set and regression features of a model specification.");

  m.def(
      "solve",
      [](const std::string& model, const std::string& criterion,
         long max_iter, double tol) {
        const auto spec = oadlab::parse_model(model);
        const auto crit = oadlab::Criterion::parse(criterion);
        return fod_result_dict(solve_parsed(spec, crit, max_iter, tol));
      },
      py::arg("model"), py::arg("criterion") = "D",
      py::arg("max_iter") = 200000, py::arg("tol") = 1e-7,
      "Continuous optimal design for a model/criterion pair.");

  m.def(
      "round_to_exact",
      [](const std::vector<int>& support, const Eigen::VectorXd& weights,
         long n) {
        oadlab::Design design;
        design.support = support;
        design.weights = weights;
        const auto exact = oadlab::round_to_exact(design, n);
        py::dict out;
        out["support"] = exact.support;
        out["counts"] = std::vector<int>(
            exact.counts.data(), exact.counts.data() + exact.counts.size());
        return out;
      },
      py::arg("support"), py::arg("weights"), py::arg("n"),
      "Largest-remainder rounding of a continuous design to n runs.");

  m.def(
      "error_moments",
      [](const std::string& error) {
        const auto moments = oadlab::ErrorModel::parse(error).moments();
        py::dict out;
        out["mu"] = moments.mu;
        out["mu3"] = moments.mu3;
        out["mu4"] = moments.mu4;
        out["nu20"] = moments.nu20;
        out["nu11"] = moments.nu11;
        out["nu02"] = moments.nu02;
        out["gamma_sq"] = moments.gamma_sq;
        return out;
      },
      py::arg("error"),
      "Log-density derivative moments of an error model.");

  m.def(
      "curvature",
      [](const std::string& model, const std::string& criterion,
         const std::string& error, long n, const std::string& v_form) {
        const auto spec = oadlab::parse_model(model);
        const auto crit = oadlab::Criterion::parse(criterion);
        const auto err = oadlab::ErrorModel::parse(error);
        const auto fod = solve_parsed(spec, crit, 200000, 1e-7);
        const auto report = oadlab::curvature_report(spec, crit, fod, err, n,
                                                     parse_v_form(v_form));
        py::dict out;
        out["R_star"] = report.R_star;
        out["gamma_sq"] = report.gamma_sq;
        out["h"] = report.h;
        out["S_star"] = report.S_star;
        out["psi_star"] = fod.criterion_value;
        out["H_star"] = report.H_star;
        out["V_star"] = report.V_star;
        out["design"] = fod_result_dict(fod);
        return out;
      },
      py::arg("model"), py::arg("criterion"), py::arg("error"), py::arg("n"),
      py::arg("v_form") = "multinomial",
      "Curvature and sample-size adjustment report at the optimal design.");

  m.def(
      "table1",
      [](int max_s, const std::vector<std::string>& criteria,
         int quadratic_max_s) {
        std::vector<oadlab::Criterion> crits;
        crits.reserve(criteria.size());
        for (const auto& name : criteria) {
          crits.push_back(oadlab::Criterion::parse(name));
        }
        const auto cells = oadlab::table1(max_s, crits, quadratic_max_s);
        py::list out;
        for (const auto& cell : cells) {
          py::dict row;
          row["family"] = cell.family;
          row["s"] = cell.s;
          row["p"] = cell.p;
          row["criterion"] = cell.criterion;
          row["R_star"] = cell.R_star;
          row["psi_star"] = cell.psi_star;
          row["d"] = cell.d;
          row["ok"] = cell.ok;
          row["error"] = cell.error;
          out.append(row);
        }
        return out;
      },
      py::arg("max_s"),
      py::arg("criteria") = std::vector<std::string>{"D", "A"},
      py::arg("quadratic_max_s") = 6,
      "Curvature constants over the model-family grid.");

  m.def(
      "fit",
      [](const std::string& model, const std::string& error,
         const std::vector<int>& points, const std::vector<double>& ys,
         const std::optional<std::vector<double>>& ancillaries,
         const std::optional<Eigen::VectorXd>& c, double C0, double alpha) {
        const auto spec = oadlab::parse_model(model);
        const auto err = oadlab::ErrorModel::parse(error);
        const auto data = group_observations(points, ys, ancillaries);
        const auto fit = oadlab::fit_mle(spec, data, err);
        py::dict out = fit_result_dict(fit, data.support);
        out["ellipsoid_log_volume"] = oadlab::ellipsoid_log_volume(fit, alpha);
        if (c.has_value()) {
          const auto test = oadlab::chi2_test(fit, *c, C0, alpha);
          py::dict tst;
          tst["statistic"] = test.statistic;
          tst["reject"] = test.reject;
          tst["alpha"] = test.alpha;
          tst["c_value"] = test.c_value;
          out["test"] = tst;
        }
        return out;
      },
      py::arg("model"), py::arg("error"), py::arg("points"), py::arg("ys"),
      py::arg("ancillaries") = std::nullopt, py::arg("c") = std::nullopt,
      py::arg("C0") = 0.0, py::arg("alpha") = 0.05,
      "Location MLE of the regression parameters from per-observation "
      "records (0-based candidate indices).");

  m.def(
      "simulate",
      [](const std::string& model, const std::string& error,
         const std::string& criterion, const Eigen::VectorXd& beta,
         const std::vector<long>& n_grid, long replicates, std::uint64_t seed,
         int k, double q_floor, const std::optional<Eigen::VectorXd>& power_c,
         double C0, double alpha, int workers) {
        const auto config =
            make_sim_config(model, error, criterion, beta, n_grid, replicates,
                            seed, k, q_floor, power_c, C0, alpha);
        return sim_result_dict(oadlab::run_sim(config, workers));
      },
      py::arg("model"), py::arg("error"), py::arg("criterion"),
      py::arg("beta"), py::arg("n_grid"), py::arg("replicates"),
      py::arg("seed"), py::arg("k") = 3, py::arg("q_floor") = 1e-8,
      py::arg("power_c") = std::nullopt, py::arg("C0") = 0.0,
      py::arg("alpha") = 0.05, py::arg("workers") = 0,
      "Paired adaptive-vs-fixed Monte Carlo study over a sample-size grid.");

  m.def(
      "power_curve",
      [](const std::string& model, const std::string& error,
         const std::string& criterion, const Eigen::VectorXd& beta,
         const std::vector<long>& n_grid, long replicates, std::uint64_t seed,
         const Eigen::VectorXd& power_c, double C0, double alpha,
         double target, int k, double q_floor, int workers) {
        const auto config =
            make_sim_config(model, error, criterion, beta, n_grid, replicates,
                            seed, k, q_floor, power_c, C0, alpha);
        const auto curve = oadlab::power_curve(config, target, workers);
        py::dict out;
        py::list points;
        for (const auto& point : curve.points) {
          py::dict row;
          row["arm"] = oadlab::arm_name(point.arm);
          row["n"] = point.n;
          row["power"] = point.power;
          row["se"] = point.se;
          row["completed"] = point.completed;
          points.append(row);
        }
        out["points"] = points;
        out["target"] = curve.target;
        out["n_road"] = curve.n_road;
        out["n_fod"] = curve.n_fod;
        return out;
      },
      py::arg("model"), py::arg("error"), py::arg("criterion"),
      py::arg("beta"), py::arg("n_grid"), py::arg("replicates"),
      py::arg("seed"), py::arg("power_c"), py::arg("C0") = 0.0,
      py::arg("alpha") = 0.05, py::arg("target") = 0.8, py::arg("k") = 3,
      py::arg("q_floor") = 1e-8, py::arg("workers") = 0,
      "Rejection rate per arm over a sample-size grid, with the "
      "interpolated smallest n reaching the target power.");

  m.def(
      "expansion_check",
      [](const std::string& model, const std::string& error,
         const std::string& criterion, const Eigen::VectorXd& beta, long n,
         long replicates, std::uint64_t seed, int k, int workers) {
        auto config = make_sim_config(model, error, criterion, beta, {n},
                                      replicates, seed, k, 1e-8, std::nullopt,
                                      0.0, 0.05);
        const auto check = oadlab::theorem3_check(config, n, workers);
        py::dict out;
        out["n"] = check.n;
        out["mu"] = check.mu;
        out["h"] = check.h;
        out["gamma_sq"] = check.gamma_sq;
        out["R_star"] = check.R_star;
        out["psi_star"] = check.psi_star;
        out["S_star"] = check.S_star;
        out["lhs_road"] = check.lhs_road;
        out["lhs_road_se"] = check.lhs_road_se;
        out["lhs_fod"] = check.lhs_fod;
        out["lhs_fod_se"] = check.lhs_fod_se;
        out["rhs_road"] = check.rhs_road;
        out["rhs_fod"] = check.rhs_fod;
        out["z_road"] = check.z_road;
        out["z_fod"] = check.z_fod;
        out["ratio"] = check.ratio;
        out["ratio_se"] = check.ratio_se;
        return out;
      },
      py::arg("model"), py::arg("error"), py::arg("criterion"),
      py::arg("beta"), py::arg("n"), py::arg("replicates"), py::arg("seed"),
      py::arg("k") = 3, py::arg("workers") = 0,
      "Monte Carlo check of the expected-criterion expansion at one n.");

  py::class_<PyRoadSession>(m, "RoadSession",
                            "One adaptive experiment: stage-1 design, "
                            "response recording, next-point recommendation.")
      .def(py::init<const std::string&, const std::string&,
                    const std::string&, long, int, double>(),
           py::arg("model"), py::arg("error"), py::arg("criterion"),
           py::arg("total_n"), py::arg("k") = 3, py::arg("q_floor") = 1e-8)
      .def("next_point", &PyRoadSession::next_point,
           "Recommended 0-based support index for the next observation.")
      .def("record", &PyRoadSession::record, py::arg("point"), py::arg("y"),
           py::arg("ancillary") = std::nullopt,
           "Record one response at a support point.")
      .def("fit", &PyRoadSession::fit,
           "Regression MLE and observed information from the history.")
      .def("design", &PyRoadSession::design, "Stage-1 continuous design.")
      .def("history", &PyRoadSession::history)
      .def("counts", &PyRoadSession::counts)
      .def_property_readonly("phase", &PyRoadSession::phase)
      .def_property_readonly("j", &PyRoadSession::j)
      .def_property_readonly("d", &PyRoadSession::d)
      .def_property_readonly("total_n", &PyRoadSession::total_n)
      .def_property_readonly("omega", &PyRoadSession::omega)
      .def_property_readonly("q", &PyRoadSession::q)
      .def_property_readonly("i_a", &PyRoadSession::i_a)
      .def_property_readonly("eta_hat", &PyRoadSession::eta_hat);
}
