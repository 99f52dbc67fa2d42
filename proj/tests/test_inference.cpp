#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/inference.hpp"
#include "oadlab/model.hpp"
#include "oadlab/numerics.hpp"

using oadlab::ErrorModel;
using oadlab::FitResult;
using oadlab::ModelSpec;
using oadlab::OadError;
using oadlab::SampleData;
using oadlab::errc;

namespace {

bool throws_with_code(const std::function<void()>& fn, errc code) {
  try {
    fn();
  } catch (const OadError& e) {
    return e.code() == code;
  }
  return false;
}

ModelSpec line_model() {
  return oadlab::build_custom_from_json_text(R"({
    "name": "line",
    "candidates": [[0.0], [0.5], [1.0]],
    "monomials": [[0], [1]]
  })");
}

double total_loglik(const ModelSpec& spec, const SampleData& data,
                    const ErrorModel& err, const Eigen::VectorXd& beta) {
  double acc = 0.0;
  for (int i = 0; i < data.d(); ++i) {
    const double mean = spec.feature(data.support[i]).dot(beta);
    for (size_t j = 0; j < data.ys[i].size(); ++j) {
      const double a =
          err.has_ancillary() ? data.ancillaries[i][j] : 0.0;
      acc += err.log_density(data.ys[i][j] - mean, a);
    }
  }
  return acc;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("normal treatment fits are per-arm means with count information") {
  ModelSpec spec = oadlab::build_treatment(3);
  SampleData data;
  data.support = {0, 1, 2};
  data.ys = {{1.0, 3.0}, {2.0, 4.0, 6.0}, {10.0}};
  FitResult fit = oadlab::fit_mle(spec, data, ErrorModel::normal());
  CHECK(fit.converged);
  CHECK(fit.beta_hat(0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(fit.beta_hat(1) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(fit.beta_hat(2) == doctest::Approx(10.0).epsilon(1e-14));
  Eigen::MatrixXd want = Eigen::Vector3d(2.0, 3.0, 1.0).asDiagonal();
  CHECK(fit.J.m.isApprox(want, 1e-14));
  CHECK(fit.J.scale == oadlab::InfoScale::total_observed);
  CHECK(fit.loglik ==
        doctest::Approx(total_loglik(spec, data, ErrorModel::normal(),
                                     fit.beta_hat))
            .epsilon(1e-12));
}

TEST_CASE("overdetermined normal fit equals least squares") {
  ModelSpec spec = line_model();
  SampleData data;
  data.support = {0, 1, 2};
  data.ys = {{0.1, -0.2, 0.3}, {0.6, 0.4}, {0.9, 1.2, 1.0, 1.1}};
  FitResult fit = oadlab::fit_mle(spec, data, ErrorModel::normal());

  // Stack every observation and solve the normal equations directly.
  std::vector<double> xs, ys;
  for (int i = 0; i < data.d(); ++i) {
    for (double y : data.ys[i]) {
      xs.push_back(spec.candidates(data.support[i], 0));
      ys.push_back(y);
    }
  }
  Eigen::MatrixXd X(xs.size(), 2);
  Eigen::VectorXd Y(ys.size());
  for (size_t r = 0; r < xs.size(); ++r) {
    X(r, 0) = 1.0;
    X(r, 1) = xs[r];
    Y(r) = ys[r];
  }
  Eigen::VectorXd ls = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
  CHECK((fit.beta_hat - ls).cwiseAbs().maxCoeff() < 1e-10);

  // J = F' diag(i_a) F with i_a = per-point counts under normal errors.
  Eigen::MatrixXd fmat(3, 2);
  for (int i = 0; i < 3; ++i) fmat.row(i) = spec.feature(i).transpose();
  Eigen::MatrixXd jwant =
      fmat.transpose() * Eigen::Vector3d(3, 2, 4).asDiagonal() * fmat;
  CHECK(fit.J.m.isApprox(jwant, 1e-12));
}

TEST_CASE("saturated gamma-hyperbola fit carries the cosh information") {
  ModelSpec spec = oadlab::build_treatment(2);
  ErrorModel err = ErrorModel::gamma_hyperbola(0.5);
  SampleData data;
  data.support = {0, 1};
  data.ys = {{0.3, 0.9}, {-0.2}};
  data.ancillaries = {{1.0, 2.0}, {0.7}};
  FitResult fit = oadlab::fit_mle(spec, data, err);
  CHECK(fit.converged);

  // Per-arm MLEs transfer straight to beta on the identity basis.
  auto arm0 = err.fit_location(data.ys[0], data.ancillaries[0]);
  CHECK(fit.beta_hat(0) == doctest::Approx(arm0.eta_hat).epsilon(1e-12));
  CHECK(fit.i_a(0) == doctest::Approx(arm0.info).epsilon(1e-12));
  double info_closed = 0.0;
  for (size_t j = 0; j < data.ys[0].size(); ++j) {
    info_closed += 2.0 * data.ancillaries[0][j] *
                   std::cosh(data.ys[0][j] - fit.beta_hat(0));
  }
  CHECK(fit.i_a(0) == doctest::Approx(info_closed).epsilon(1e-12));
  CHECK(fit.beta_hat(1) == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(fit.J.m(0, 0) == doctest::Approx(fit.i_a(0)).epsilon(1e-12));
  CHECK(fit.J.m(0, 1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(std::isfinite(fit.loglik));
}

TEST_CASE("student-t regression fit beats a brute-force grid") {
  ModelSpec spec = line_model();
  ErrorModel err = ErrorModel::student_t(1.0);
  SampleData data;
  data.support = {0, 1, 2};
  data.ys = {{0.05, -0.3, 0.2}, {0.45, 0.8, 0.3}, {1.1, 0.8, 1.3}};
  FitResult fit = oadlab::fit_mle(spec, data, err);
  CHECK(fit.converged);

  double best = -1e300;
  Eigen::Vector2d best_beta(0, 0);
  for (double b0 = -0.5; b0 <= 0.7; b0 += 2e-3) {
    for (double b1 = 0.2; b1 <= 1.8; b1 += 2e-3) {
      Eigen::Vector2d beta(b0, b1);
      const double val = total_loglik(spec, data, err, beta);
      if (val > best) {
        best = val;
        best_beta = beta;
      }
    }
  }
  CHECK(std::abs(fit.beta_hat(0) - best_beta(0)) < 1e-3 + 2e-3);
  CHECK(std::abs(fit.beta_hat(1) - best_beta(1)) < 1e-3 + 2e-3);
  CHECK(total_loglik(spec, data, err, fit.beta_hat) >= best - 1e-9);
}

TEST_CASE("confidence ellipsoid volumes scale with the information") {
  FitResult fit;
  fit.beta_hat = Eigen::Vector2d(0.0, 0.0);
  fit.J.m = Eigen::Matrix2d::Identity();
  fit.J.scale = oadlab::InfoScale::total_observed;
  fit.converged = true;

  const double q = oadlab::chi2_quantile(0.95, 2);
  CHECK(oadlab::ellipsoid_log_volume(fit, 0.05) ==
        doctest::Approx(std::log(std::numbers::pi * q)).epsilon(1e-10));

  FitResult sharper = fit;
  sharper.J.m = 4.0 * Eigen::Matrix2d::Identity();
  CHECK(oadlab::ellipsoid_log_volume(sharper, 0.05) ==
        doctest::Approx(oadlab::ellipsoid_log_volume(fit, 0.05) -
                        std::log(4.0))
            .epsilon(1e-10));

  CHECK(throws_with_code([&] { oadlab::ellipsoid_log_volume(fit, 0.0); },
                         errc::invalid_argument));
}

TEST_CASE("contrast tests compare the quadratic form to the chi-square cut") {
  FitResult fit;
  fit.beta_hat = Eigen::Vector2d(1.0, 0.0);
  fit.J.m = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  fit.J.scale = oadlab::InfoScale::total_observed;
  fit.converged = true;

  Eigen::VectorXd c = Eigen::Vector2d(1.0, 0.0);
  auto res = oadlab::chi2_test(fit, c, 0.0, 0.05);
  CHECK(res.c_value == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(res.statistic == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(res.alpha == doctest::Approx(0.05));
  CHECK(res.reject);  // 4.0 > 3.8415

  auto centered = oadlab::chi2_test(fit, c, 1.0, 0.05);
  CHECK(centered.statistic == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(!centered.reject);

  // Just below the threshold: scale the information down.
  FitResult duller = fit;
  duller.J.m = Eigen::Vector2d(3.8, 1.0).asDiagonal();
  CHECK(!oadlab::chi2_test(duller, c, 0.0, 0.05).reject);

  CHECK(throws_with_code(
      [&] { oadlab::chi2_test(fit, Eigen::Vector3d::Ones(), 0.0, 0.05); },
      errc::invalid_argument));
  CHECK(throws_with_code(
      [&] { oadlab::chi2_test(fit, Eigen::Vector2d::Zero(), 0.0, 0.05); },
      errc::invalid_argument));
}

TEST_CASE("fits reject malformed or deficient samples") {
  ModelSpec spec = oadlab::build_treatment(2);
  SampleData empty;
  CHECK(throws_with_code(
      [&] { oadlab::fit_mle(spec, empty, ErrorModel::normal()); },
      errc::data_shape));

  SampleData hollow;
  hollow.support = {0, 1};
  hollow.ys = {{1.0}, {}};
  CHECK(throws_with_code(
      [&] { oadlab::fit_mle(spec, hollow, ErrorModel::normal()); },
      errc::data_shape));

  SampleData missing_anc;
  missing_anc.support = {0, 1};
  missing_anc.ys = {{1.0}, {2.0}};
  CHECK(throws_with_code(
      [&] {
        oadlab::fit_mle(spec, missing_anc, ErrorModel::gamma_hyperbola(0.5));
      },
      errc::data_shape));

  // One support point cannot identify two treatment parameters.
  SampleData thin;
  thin.support = {0};
  thin.ys = {{1.0, 2.0}};
  CHECK(throws_with_code(
      [&] { oadlab::fit_mle(spec, thin, ErrorModel::normal()); },
      errc::singular_information));
}

}  // TEST_SUITE
