#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/rng.hpp"

namespace oadlab {

enum class ErrorFamily { normal, student_t, gamma_hyperbola };

// One residual draw; the ancillary component is present only for the
// gamma-hyperbola family (its per-observation statistic a).
struct ErrorDraw {
  double epsilon = 0.0;
  std::optional<double> ancillary;
};

// Moments of the log-density derivatives with respect to the location:
//   mu   = -E[l''] = E[l'^2]   (expected information per observation)
//   mu3  = E[l^(3)],  mu4 = E[l^(4)]
//   nu20 = E[l'^2], nu11 = Cov(l', l''), nu02 = Var(l'')
//   gamma_sq = (nu20*nu02 - nu11^2) / nu20^3   (statistical curvature)
struct ErrorMoments {
  double mu = 0.0;
  double mu3 = 0.0;
  double mu4 = 0.0;
  double nu20 = 0.0;
  double nu11 = 0.0;
  double nu02 = 0.0;
  double gamma_sq = 0.0;
};

// Result of a per-point location fit: the MLE of the location and the
// observed information of the buffer at that MLE.
struct LocationFit {
  double eta_hat = 0.0;
  double info = 0.0;  // -sum l''(y_j - eta_hat), clamped at 0
  bool converged = false;
  int iterations = 0;
};

class ErrorModel {
 public:
  static ErrorModel normal();
  static ErrorModel student_t(double v);
  static ErrorModel gamma_hyperbola(double v);
  // CLI/config names: "normal", "str:v", "ghr:v".
  static ErrorModel parse(const std::string& name);

  ErrorFamily family() const { return family_; }
  double shape() const { return v_; }
  bool has_ancillary() const { return family_ == ErrorFamily::gamma_hyperbola; }
  std::string name() const;

  // Location-dependent part of the log density at residual eps (for the
  // gamma-hyperbola family, conditional on the ancillary a; additive terms
  // free of the location are dropped).
  double log_density(double eps, double a = 0.0) const;

  // k-th derivative (k in 1..5) of the log density with respect to the
  // location eta, evaluated at eps = y - eta. Note the sign alternation
  // relative to derivatives in eps.
  double log_density_derivative(int k, double eps, double a = 0.0) const;
  double log_density_derivative(int k, const ErrorDraw& draw) const;

  // Moments (cached per family/shape). May throw moment-computation errors.
  const ErrorMoments& moments() const;

  ErrorDraw draw(Stream& stream) const;
  std::vector<ErrorDraw> sample(long n, Stream& stream) const;

  // Per-point location MLE over a response buffer (ancillaries required
  // iff the family carries them). warm_start seeds the Newton iteration.
  LocationFit fit_location(const std::vector<double>& ys,
                           const std::vector<double>& ancillaries,
                           std::optional<double> warm_start = {}) const;

 private:
  ErrorModel(ErrorFamily family, double v) : family_(family), v_(v) {}
  ErrorFamily family_;
  double v_;
  mutable const ErrorMoments* cached_moments_ = nullptr;
};

// Computes (or fetches from cache) the derivative moments of a model.
ErrorMoments compute_moments(const ErrorModel& model);

}  // namespace oadlab
