#include "oadlab/road.hpp"

#include <cmath>
#include <string>

namespace oadlab {

void RoadConfig::validate(int d) const {
  require(k >= 1, errc::config, "k must be a positive integer");
  require(q_floor > 0.0, errc::config, "q_floor must be positive");
  require(total_n >= static_cast<long>(k) * d, errc::config,
          "total_n must cover the initialization schedule (k*d)");
}

ExactDesign ExperimentState::realized() const {
  ExactDesign exact;
  exact.support = design.support;
  exact.counts = Eigen::VectorXi::Zero(d());
  for (int i = 0; i < d(); ++i) {
    exact.counts(i) = static_cast<int>(ys[i].size());
  }
  return exact;
}

namespace {

void refresh_point(ExperimentState& state, int point) {
  const auto& buffer = state.ys[point];
  if (buffer.empty()) {
    state.eta_hat(point) = 0.0;
    state.i_a(point) = 0.0;
  } else {
    std::optional<double> warm;
    if (std::isfinite(state.eta_hat(point)) && state.i_a(point) > 0.0) {
      warm = state.eta_hat(point);
    }
    LocationFit fit =
        state.err.fit_location(buffer, state.ancillaries[point], warm);
    state.eta_hat(point) = fit.eta_hat;
    state.i_a(point) = fit.info;
  }
  double mu = state.err.moments().mu;
  state.q(point) = std::max(state.i_a(point) / mu, state.cfg.q_floor);
}

void refresh_totals(ExperimentState& state) {
  state.Q = state.q.sum();
  require(state.Q > 0.0, errc::singular_state,
          "total ancillary weight vanished");
  state.omega = state.q / state.Q;
}

}  // namespace

ExperimentState init_state(const ModelSpec& spec, const FodResult& fod,
                           const ErrorModel& err, const RoadConfig& cfg) {
  validate_design(spec, fod.design);
  require(fod.design.d() >= 1, errc::invalid_argument,
          "stage-1 design has no support");
  cfg.validate(fod.design.d());

  ExperimentState state;
  state.spec = &spec;
  state.err = err;
  state.cfg = cfg;
  state.design = fod.design;
  const int d = state.d();
  state.ys.assign(d, {});
  state.ancillaries.assign(d, {});
  state.eta_hat = Eigen::VectorXd::Zero(d);
  state.i_a = Eigen::VectorXd::Zero(d);
  state.q = Eigen::VectorXd::Constant(d, cfg.q_floor);
  state.j = 0;
  refresh_totals(state);
  return state;
}

int scheduled_initial_point(const ExperimentState& state, long step) {
  require(step >= 0 && step < state.initial_phase_length(),
          errc::invalid_argument, "step outside the initialization phase");
  return static_cast<int>(step % state.d());
}

void record_response(ExperimentState& state, int point, double y,
                     std::optional<double> ancillary) {
  require(state.spec != nullptr, errc::invalid_argument,
          "uninitialized experiment state");
  require(point >= 0 && point < state.d(), errc::invalid_argument,
          "point index outside the design support");
  if (state.err.has_ancillary()) {
    require(ancillary.has_value(), errc::data_shape,
            "this error model records an ancillary with every response");
    require(*ancillary > 0.0, errc::data_shape,
            "ancillary statistic must be positive");
  } else {
    require(!ancillary.has_value(), errc::data_shape,
            "this error model has no ancillary statistic");
  }
  state.ys[point].push_back(y);
  if (state.err.has_ancillary()) {
    state.ancillaries[point].push_back(*ancillary);
  }
  state.history.push_back(HistoryEntry{point, y, ancillary});
  state.j += 1;
  refresh_point(state, point);
  refresh_totals(state);
}

void refresh_information(ExperimentState& state) {
  require(state.spec != nullptr, errc::invalid_argument,
          "uninitialized experiment state");
  for (int i = 0; i < state.d(); ++i) refresh_point(state, i);
  refresh_totals(state);
}

int next_point(const ExperimentState& state, const Criterion& crit) {
  require(state.spec != nullptr, errc::invalid_argument,
          "uninitialized experiment state");
  require(state.j >= state.initial_phase_length(), errc::invalid_argument,
          "next_point called before the initialization schedule finished");
  require(state.Q > 0.0, errc::singular_state,
          "total ancillary weight vanished");
  const int d = state.d();
  if (d == 1) return 0;

  Design tau;
  tau.support = state.design.support;
  tau.weights = state.omega;
  Eigen::VectorXd phi_all;
  try {
    phi_all = sensitivity_all(crit, *state.spec, tau);
  } catch (const OadError& e) {
    if (e.code() == errc::singular_information) {
      fail(errc::singular_state,
           "ancillary-weight design became singular: " +
               std::string(e.what()));
    }
    throw;
  }

  int best = -1;
  double best_phi = 0.0;
  for (int i = 0; i < d; ++i) {
    if (state.omega(i) >= state.design.weights(i)) continue;
    double phi = phi_all(state.design.support[i]);
    if (best < 0 || phi < best_phi) {
      best = i;
      best_phi = phi;
    }
  }
  if (best >= 0) return best;
  // Every share has caught up with its target (measure-zero in practice):
  // fall back to the plain sensitivity rule over the whole support.
  for (int i = 0; i < d; ++i) {
    double phi = phi_all(state.design.support[i]);
    if (best < 0 || phi < best_phi) {
      best = i;
      best_phi = phi;
    }
  }
  return best;
}

ExperimentState run_road(const ModelSpec& spec, const FodResult& fod,
                         const ErrorModel& err, const Criterion& crit,
                         const RoadConfig& cfg, Stream& stream,
                         const Eigen::VectorXd& beta) {
  require(beta.size() == spec.p, errc::invalid_dimension,
          "parameter vector length must equal the feature dimension");
  ExperimentState state = init_state(spec, fod, err, cfg);
  const long init_len = state.initial_phase_length();
  for (long step = 0; step < cfg.total_n; ++step) {
    try {
      int point = step < init_len ? scheduled_initial_point(state, step)
                                  : next_point(state, crit);
      ErrorDraw draw = err.draw(stream);
      double y =
          beta.dot(spec.feature(state.design.support[point])) + draw.epsilon;
      record_response(state, point, y, draw.ancillary);
    } catch (const OadError& e) {
      fail(e.code(),
           "adaptive step " + std::to_string(step + 1) + ": " + e.what());
    }
  }
  return state;
}

}  // namespace oadlab
