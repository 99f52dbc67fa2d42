#pragma once

#include <Eigen/Dense>
#include <vector>

#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/model.hpp"
#include "oadlab/road.hpp"

namespace oadlab {

// Grouped sample: responses (and ancillaries, when the error model has
// them) collected per support point.
struct SampleData {
  std::vector<int> support;  // candidate indices
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<double>> ancillaries;

  int d() const { return static_cast<int>(support.size()); }
  long n() const;
};

SampleData from_state(const ExperimentState& state);

struct FitResult {
  Eigen::VectorXd beta_hat;
  InfoMatrix J;              // total-observed scale: F' diag(i_a) F
  Eigen::VectorXd eta_hat;   // per-point location MLEs
  Eigen::VectorXd i_a;       // per-point observed informations
  bool converged = false;
  double loglik = 0.0;       // location-dependent part at beta_hat
};

struct TestResult {
  double statistic = 0.0;
  bool reject = false;
  double alpha = 0.0;
  double c_value = 0.0;  // (c' J^{-1} c)^{-1}
};

// Location MLE of the regression parameters. With a saturated support
// (d == p) the per-point MLEs pin beta via F beta = eta_hat; otherwise a
// Newton iteration on the full log likelihood refines the
// information-weighted projection start. J is always assembled from the
// per-point observed informations.
FitResult fit_mle(const ModelSpec& spec, const SampleData& data,
                  const ErrorModel& err);
FitResult fit_mle(const ModelSpec& spec, const ExperimentState& state);

// log volume of the (1 - alpha) confidence ellipsoid
// {(b - beta_hat)' J (b - beta_hat) <= chi2_p quantile}.
double ellipsoid_log_volume(const FitResult& fit, double alpha);

// Two-sided chi-square test of c' beta = C0.
TestResult chi2_test(const FitResult& fit, const Eigen::VectorXd& c,
                     double C0, double alpha);

}  // namespace oadlab
