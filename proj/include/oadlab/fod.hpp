#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/model.hpp"

namespace oadlab {

struct FodOptions {
  long max_iter = 200000;       // combined step budget
  double tol = 1e-7;            // GET certificate tolerance (normalized)
  double prune_weight = 1e-6;   // weights below this are pruned
  long first_order_cap = 2000;  // 1/j steps before exchange refinement
};

struct FodResult {
  Design design;
  double criterion_value = 0.0;  // Psi* on the per-observation scale
  long iterations = 0;
  double get_violation = 0.0;  // final normalized min sensitivity
};

// Non-convergence carries the best design found so callers can inspect it.
class FodNonConvergence : public OadError {
 public:
  FodNonConvergence(std::string msg, FodResult best)
      : OadError(errc::non_convergence, std::move(msg)),
        best_(std::move(best)) {}
  const FodResult& best() const { return best_; }

 private:
  FodResult best_;
};

FodResult solve_fod(const ModelSpec& spec, const Criterion& crit,
                    std::optional<Design> init = {},
                    const FodOptions& opts = {});

// Largest-remainder rounding of a continuous design to n observations;
// ties break toward the lowest support index and every support point
// receives at least one observation.
ExactDesign round_to_exact(const Design& design, long n);

// Allocation-covariance convention for V*. The multinomial form
// diag(w_(d)) - w_(d) w_(d)^T is the delta-method covariance of the
// normalized allocation omega = q / sum(q) when the per-point information
// increments q_i fluctuate independently with variance proportional to
// w_i; it is invariant under relabeling of the support. The block form
// gdot = (I_{d-1} - J_{d-1} diag(w_(d)) , w_d 1_{d-1}) is kept for
// comparison; the two coincide at uniform weights.
enum class VStarForm { multinomial, block_formula };

// H* computation route. The analytic route differentiates the criterion
// through the information matrix in closed form (O(d^2 p)); the
// finite-difference route (central differences, step 1e-5, one Richardson
// step) is the slower cross-check.
enum class HessianMethod { analytic, finite_difference };

struct CurvatureCore {
  Eigen::MatrixXd H_star;  // (d-1) x (d-1), negative constrained Hessian
  Eigen::MatrixXd V_star;  // (d-1) x (d-1)
  double R_star = 0.0;     // tr(H* V*) / (2 Psi*)
  double psi_star = 0.0;   // criterion value at the optimum
};

struct CurvatureReport {
  Eigen::MatrixXd H_star;
  Eigen::MatrixXd V_star;
  double R_star = 0.0;
  double h = 0.0;
  double S_star = 0.0;
  double gamma_sq = 0.0;
};

// Error-model-free part (H*, V*, R*); used by table1.
CurvatureCore curvature_core(const ModelSpec& spec, const Criterion& crit,
                             const FodResult& fod,
                             VStarForm form = VStarForm::multinomial,
                             HessianMethod method = HessianMethod::analytic);

CurvatureReport curvature_report(const ModelSpec& spec, const Criterion& crit,
                                 const FodResult& fod, const ErrorModel& err,
                                 long n, VStarForm form = VStarForm::multinomial,
                                 HessianMethod method = HessianMethod::analytic);

struct Table1Cell {
  std::string family;
  int s = 0;
  int p = 0;
  std::string criterion;
  double R_star = 0.0;
  double psi_star = 0.0;
  int d = 0;
  bool ok = false;
  std::string error;
};

// The (family x s x criterion) grid of R* values. Quadratic rows stop at
// s = min(max_s, quadratic_max_s) — the published grid ends at 6 and the
// 3^s candidate set makes larger s expensive.
std::vector<Table1Cell> table1(int max_s, const std::vector<Criterion>& crits,
                               int quadratic_max_s = 6);

}  // namespace oadlab
