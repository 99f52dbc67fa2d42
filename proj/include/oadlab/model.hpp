#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "oadlab/common.hpp"

namespace oadlab {

enum class ModelFamily { treatment, interaction, quadratic, custom };

// A linear regression model family over a finite candidate design region:
// responses y = beta' f(x) + error, with f a fixed monomial basis in the
// design factors x. Immutable after construction.
struct ModelSpec {
  ModelFamily family = ModelFamily::custom;
  int s = 0;                  // number of design factors
  int p = 0;                  // number of model parameters
  std::string name;           // canonical CLI name, e.g. "treatment:4"
  Eigen::MatrixXd candidates; // n_candidates x s factor vectors
  Eigen::MatrixXi exponents;  // p x s monomial exponents of the basis
  Eigen::MatrixXd features;   // n_candidates x p, rows f(x_i)

  int n_candidates() const { return static_cast<int>(candidates.rows()); }

  // Evaluate the regression map on an arbitrary factor vector.
  Eigen::VectorXd regression_map(const Eigen::VectorXd& x) const;

  // Feature row of a candidate by index.
  Eigen::VectorXd feature(int candidate) const {
    require(candidate >= 0 && candidate < n_candidates(),
            errc::invalid_argument, "candidate index out of range");
    return features.row(candidate).transpose();
  }
};

ModelSpec build_treatment(int s);
ModelSpec build_interaction(int s);
ModelSpec build_quadratic(int s);

// Custom spec from a JSON document:
//   {"name": "...", "candidates": [[...], ...], "monomials": [[e1..es], ...]}
ModelSpec build_custom_from_json_text(const std::string& json_text);

// Parse a CLI/config model name: treatment:s, interaction:s, quadratic:s,
// or custom:<path-to-json>.
ModelSpec parse_model(const std::string& name);

}  // namespace oadlab
