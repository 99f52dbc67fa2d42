#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/model.hpp"

namespace oadlab {

// A continuous design: distinct candidate indices with weights on the
// probability simplex.
struct Design {
  std::vector<int> support;
  Eigen::VectorXd weights;

  int d() const { return static_cast<int>(support.size()); }
};

// An exact design: integer replicate counts per support point.
struct ExactDesign {
  std::vector<int> support;
  Eigen::VectorXi counts;

  long n() const { return counts.sum(); }
};

enum class CriterionKind { D, A, c };

struct Criterion {
  CriterionKind kind = CriterionKind::D;
  Eigen::VectorXd cvec;  // used only for the c criterion

  static Criterion D() { return {CriterionKind::D, {}}; }
  static Criterion A() { return {CriterionKind::A, {}}; }
  static Criterion c(Eigen::VectorXd v);
  // CLI/config names: "D", "A", "c:[v1,...,vp]".
  static Criterion parse(const std::string& text);
  std::string name() const;
};

enum class InfoScale { normalized, total_observed };

struct InfoMatrix {
  Eigen::MatrixXd m;
  InfoScale scale = InfoScale::normalized;
};

// Validates support/weight shape invariants; throws on violation.
void validate_design(const ModelSpec& spec, const Design& design);

// M(xi) = sum_i w_i f(x_i) f(x_i)'.
InfoMatrix info_matrix(const ModelSpec& spec, const Design& design);

// D -> det(M)^{1/p} (0 if singular); A -> 1/tr(M^{-1}); c -> 1/(c'M^{-1}c).
// A and c raise singular-information errors on singular input.
double criterion_value(const Criterion& crit, const InfoMatrix& info);

// Exact directional derivative of psi = 1/Psi at M(design) toward the
// one-point design at the given candidate; negative where moving weight
// toward the candidate improves the design, and min over candidates is 0
// exactly at a Psi-optimal design.
double sensitivity(const Criterion& crit, const ModelSpec& spec,
                   const Design& design, int candidate);

// Sensitivities for all candidates at once (single factorization).
Eigen::VectorXd sensitivity_all(const Criterion& crit, const ModelSpec& spec,
                                const Design& design);

struct Certificate {
  bool optimal = false;
  double worst_violation = 0.0;  // min over candidates of phi / psi
  int worst_point = -1;
};

// General equivalence theorem check: optimal iff the scale-normalized
// minimum sensitivity is >= -tol. (Normalizing by psi(M) > 0 makes tol
// comparable across criteria and matrix scales; signs and argmins are
// unchanged.)
Certificate get_certificate(const Criterion& crit, const ModelSpec& spec,
                            const Design& design, double tol);

}  // namespace oadlab
