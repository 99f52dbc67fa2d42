#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace oadlab {

// Adaptive Simpson integration of f on [a, b] to an absolute tolerance.
double integrate_adaptive(const std::function<double(double)>& f, double a,
                          double b, double abs_tol);

// Integral of f over the whole real line via the tangent substitution
// x = tan(theta). Assumes f is integrable with at least O(1/x^2) decay.
double integrate_real_line(const std::function<double(double)>& f,
                           double abs_tol);

// Generalized Gauss-Laguerre rule: nodes z_i and weights w_i such that
//   integral_0^inf g(z) z^alpha e^{-z} dz  ≈  sum_i w_i g(z_i),
// exact for polynomials g of degree <= 2n-1 (Golub-Welsch construction).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_laguerre(int n, double alpha);

// Regularized lower incomplete gamma P(a, x), accurate to ~1e-14.
double gamma_p(double a, double x);

// Chi-squared distribution with k degrees of freedom.
double chi2_cdf(double x, double k);
double chi2_quantile(double prob, double k);  // inverse CDF, prob in (0,1)

// Order-independent compensated (Neumaier) summation, used wherever
// results must be bit-identical regardless of worker scheduling.
class CompensatedSum {
 public:
  void add(double value) {
    double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      comp_ += (sum_ - t) + value;
    } else {
      comp_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace oadlab
