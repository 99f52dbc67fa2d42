#include "oadlab/inference.hpp"

#include <cmath>

#include "oadlab/numerics.hpp"

namespace oadlab {

long SampleData::n() const {
  long total = 0;
  for (const auto& buf : ys) total += static_cast<long>(buf.size());
  return total;
}

SampleData from_state(const ExperimentState& state) {
  require(state.spec != nullptr, errc::invalid_argument,
          "uninitialized experiment state");
  SampleData data;
  data.support = state.design.support;
  data.ys = state.ys;
  data.ancillaries = state.ancillaries;
  return data;
}

namespace {

constexpr double kInfoFloor = 1e-8;

struct Factor {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  bool singular = true;
  double log_det = 0.0;
};

Factor factorize_spd(const Eigen::MatrixXd& m) {
  Factor f;
  f.ldlt.compute(m);
  if (f.ldlt.info() != Eigen::Success) return f;
  const auto& diag = f.ldlt.vectorD();
  double dmax = diag.maxCoeff();
  if (!(dmax > 0.0) || !(diag.minCoeff() > dmax * 1e-13)) return f;
  f.singular = false;
  for (int i = 0; i < diag.size(); ++i) f.log_det += std::log(diag(i));
  return f;
}

double full_loglik(const ModelSpec& spec, const SampleData& data,
                   const ErrorModel& err, const Eigen::VectorXd& beta) {
  CompensatedSum total;
  for (int i = 0; i < data.d(); ++i) {
    double eta = beta.dot(spec.feature(data.support[i]));
    for (size_t r = 0; r < data.ys[i].size(); ++r) {
      double eps = data.ys[i][r] - eta;
      double a = err.has_ancillary() ? data.ancillaries[i][r] : 0.0;
      total.add(err.log_density(eps, a));
    }
  }
  return total.value();
}

// Score and negative Hessian of the full log likelihood in beta.
void score_and_info(const ModelSpec& spec, const SampleData& data,
                    const ErrorModel& err, const Eigen::VectorXd& beta,
                    Eigen::VectorXd& score, Eigen::MatrixXd& info) {
  score.setZero(spec.p);
  info.setZero(spec.p, spec.p);
  for (int i = 0; i < data.d(); ++i) {
    Eigen::VectorXd f = spec.feature(data.support[i]);
    double eta = beta.dot(f);
    double s1 = 0.0, s2 = 0.0;
    for (size_t r = 0; r < data.ys[i].size(); ++r) {
      double eps = data.ys[i][r] - eta;
      double a = err.has_ancillary() ? data.ancillaries[i][r] : 0.0;
      s1 += err.log_density_derivative(1, eps, a);
      s2 += err.log_density_derivative(2, eps, a);
    }
    score.noalias() += s1 * f;
    info.noalias() += (-s2) * f * f.transpose();
  }
}

}  // namespace

FitResult fit_mle(const ModelSpec& spec, const SampleData& data,
                  const ErrorModel& err) {
  const int d = data.d();
  require(d >= 1, errc::data_shape, "no support points in the sample");
  require(static_cast<int>(data.ys.size()) == d, errc::data_shape,
          "response buffers do not match the support");
  if (err.has_ancillary()) {
    require(static_cast<int>(data.ancillaries.size()) == d, errc::data_shape,
            "ancillary buffers do not match the support");
  }
  for (int i = 0; i < d; ++i) {
    require(data.support[i] >= 0 && data.support[i] < spec.n_candidates(),
            errc::invalid_argument, "support index out of range");
    require(!data.ys[i].empty(), errc::data_shape,
            "every support point needs at least one response");
    if (err.has_ancillary()) {
      require(data.ancillaries[i].size() == data.ys[i].size(),
              errc::data_shape, "ancillaries must pair with responses");
    }
  }

  FitResult fit;
  fit.eta_hat.resize(d);
  fit.i_a.resize(d);
  bool all_converged = true;
  static const std::vector<double> kNoAncillaries;
  for (int i = 0; i < d; ++i) {
    const auto& anc =
        err.has_ancillary() ? data.ancillaries[i] : kNoAncillaries;
    LocationFit lf = err.fit_location(data.ys[i], anc);
    fit.eta_hat(i) = lf.eta_hat;
    fit.i_a(i) = lf.info;
    all_converged = all_converged && lf.converged;
  }

  Eigen::MatrixXd F(d, spec.p);
  for (int i = 0; i < d; ++i) {
    F.row(i) = spec.feature(data.support[i]).transpose();
  }
  // Zero observed informations are floored so a spanning design still
  // yields a usable (if weakly informed) fit.
  Eigen::VectorXd i_eff = fit.i_a.cwiseMax(kInfoFloor);
  Eigen::MatrixXd J = F.transpose() * i_eff.asDiagonal() * F;
  J = 0.5 * (J + J.transpose()).eval();
  fit.J = InfoMatrix{J, InfoScale::total_observed};

  Factor jf = factorize_spd(J);
  require(!jf.singular, errc::singular_information,
          "observed information does not span the parameter space");

  if (d == spec.p) {
    // Saturated support: the likelihood factorizes per point, so the
    // regression MLE interpolates the per-point MLEs.
    Eigen::FullPivLU<Eigen::MatrixXd> lu(F);
    require(lu.isInvertible(), errc::singular_information,
            "saturated support with a rank-deficient feature matrix");
    fit.beta_hat = lu.solve(fit.eta_hat);
    fit.converged = all_converged;
    fit.loglik = full_loglik(spec, data, err, fit.beta_hat);
    return fit;
  }

  // Over-determined support: Newton on the full log likelihood from the
  // information-weighted projection of the per-point MLEs.
  Eigen::VectorXd beta =
      jf.ldlt.solve(F.transpose() * (i_eff.asDiagonal() * fit.eta_hat));
  double ll = full_loglik(spec, data, err, beta);
  const double n_total = static_cast<double>(data.n());
  bool newton_ok = false;
  Eigen::VectorXd score(spec.p);
  Eigen::MatrixXd curv(spec.p, spec.p);
  for (int iter = 0; iter < 200; ++iter) {
    score_and_info(spec, data, err, beta, score, curv);
    if (score.lpNorm<Eigen::Infinity>() <= 1e-10 * std::max(1.0, n_total)) {
      newton_ok = true;
      break;
    }
    // Local curvature when positive definite, per-point J otherwise.
    Factor cf = factorize_spd(curv);
    Eigen::VectorXd step =
        cf.singular ? jf.ldlt.solve(score).eval() : cf.ldlt.solve(score).eval();
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 50; ++h) {
      Eigen::VectorXd trial = beta + t * step;
      double ll_trial = full_loglik(spec, data, err, trial);
      if (ll_trial >= ll - 1e-12 * std::abs(ll)) {
        beta = trial;
        improved = ll_trial > ll;
        ll = ll_trial;
        break;
      }
      t *= 0.5;
    }
    double step_size = t * step.lpNorm<Eigen::Infinity>();
    if (step_size < 1e-13 * std::max(1.0, beta.lpNorm<Eigen::Infinity>())) {
      score_and_info(spec, data, err, beta, score, curv);
      newton_ok =
          score.lpNorm<Eigen::Infinity>() <= 1e-6 * std::max(1.0, n_total);
      break;
    }
    if (!improved && step_size <= 0.0) break;
  }
  require(newton_ok, errc::estimation,
          "regression MLE did not converge: score norm stayed large");
  fit.beta_hat = beta;
  fit.converged = all_converged && newton_ok;
  fit.loglik = ll;
  return fit;
}

FitResult fit_mle(const ModelSpec& spec, const ExperimentState& state) {
  return fit_mle(spec, from_state(state), state.err);
}

double ellipsoid_log_volume(const FitResult& fit, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, errc::invalid_argument,
          "alpha must lie in (0, 1)");
  const int p = static_cast<int>(fit.beta_hat.size());
  Factor jf = factorize_spd(fit.J.m);
  require(!jf.singular, errc::singular_information,
          "singular information matrix: ellipsoid volume undefined");
  double log_unit_ball =
      0.5 * p * std::log(M_PI) - std::lgamma(0.5 * p + 1.0);
  double quant = chi2_quantile(1.0 - alpha, p);
  return log_unit_ball + 0.5 * p * std::log(quant) - 0.5 * jf.log_det;
}

TestResult chi2_test(const FitResult& fit, const Eigen::VectorXd& c,
                     double C0, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, errc::invalid_argument,
          "alpha must lie in (0, 1)");
  require(c.size() == fit.beta_hat.size(), errc::invalid_argument,
          "contrast length must match the parameter vector");
  require(c.lpNorm<Eigen::Infinity>() > 0.0, errc::invalid_argument,
          "contrast vector must be nonzero");
  Factor jf = factorize_spd(fit.J.m);
  require(!jf.singular, errc::singular_information,
          "singular information matrix: test undefined");
  double quad = c.dot(jf.ldlt.solve(c));
  require(quad > 0.0, errc::singular_information,
          "contrast carries no information");
  TestResult out;
  out.alpha = alpha;
  out.c_value = 1.0 / quad;
  double dev = c.dot(fit.beta_hat) - C0;
  out.statistic = dev * dev / quad;
  out.reject = out.statistic >= chi2_quantile(1.0 - alpha, 1);
  return out;
}

}  // namespace oadlab
