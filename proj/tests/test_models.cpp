#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/model.hpp"

using oadlab::ModelSpec;
using oadlab::OadError;
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

}  // namespace

TEST_SUITE("models") {

TEST_CASE("treatment model is the identity basis on one-hot candidates") {
  ModelSpec spec = oadlab::build_treatment(4);
  CHECK(spec.s == 4);
  CHECK(spec.p == 4);
  CHECK(spec.n_candidates() == 4);
  CHECK(spec.name == "treatment:4");
  CHECK(spec.candidates.isApprox(Eigen::MatrixXd::Identity(4, 4)));
  CHECK(spec.features.isApprox(Eigen::MatrixXd::Identity(4, 4)));
}

TEST_CASE("interaction model enumerates the zero, single and pair points") {
  ModelSpec spec = oadlab::build_interaction(3);
  CHECK(spec.p == 7);
  CHECK(spec.n_candidates() == 7);

  // The all-zero point activates only the intercept.
  Eigen::VectorXd f0 = spec.feature(0);
  CHECK(f0(0) == doctest::Approx(1.0));
  CHECK(f0.tail(6).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  // The point e1 + e2 activates intercept, both mains, and their product.
  int pair12 = -1;
  for (int i = 0; i < spec.n_candidates(); ++i) {
    Eigen::VectorXd x = spec.candidates.row(i).transpose();
    if (x(0) == 1.0 && x(1) == 1.0 && x(2) == 0.0) pair12 = i;
  }
  REQUIRE(pair12 >= 0);
  Eigen::VectorXd f = spec.feature(pair12);
  Eigen::VectorXd want(7);
  want << 1, 1, 1, 0, 1, 0, 0;  // (1, x1, x2, x3, x1x2, x1x3, x2x3)
  CHECK((f - want).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  // Counting: 1 + s + s(s-1)/2 points and parameters.
  ModelSpec big = oadlab::build_interaction(9);
  CHECK(big.n_candidates() == 46);
  CHECK(big.p == 46);
}

TEST_CASE("quadratic model spans the three-level grid with square and cross terms") {
  ModelSpec spec = oadlab::build_quadratic(2);
  CHECK(spec.p == 6);
  CHECK(spec.n_candidates() == 9);

  // All nine grid points over {0, 1/2, 1}^2 appear exactly once.
  std::vector<std::pair<double, double>> seen;
  for (int i = 0; i < 9; ++i) {
    seen.emplace_back(spec.candidates(i, 0), spec.candidates(i, 1));
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
  for (auto [a, b] : seen) {
    CHECK((a == 0.0 || a == 0.5 || a == 1.0));
    CHECK((b == 0.0 || b == 0.5 || b == 1.0));
  }

  // Basis order (1, x1, x2, x1^2, x2^2, x1 x2) evaluated at (1/2, 1).
  Eigen::VectorXd x(2);
  x << 0.5, 1.0;
  Eigen::VectorXd f = spec.regression_map(x);
  Eigen::VectorXd want(6);
  want << 1.0, 0.5, 1.0, 0.25, 1.0, 0.5;
  CHECK(f.isApprox(want, 1e-14));

  CHECK(oadlab::build_quadratic(3).n_candidates() == 27);
  CHECK(oadlab::build_quadratic(3).p == 10);
}

TEST_CASE("feature rows agree with the regression map on every candidate") {
  std::vector<ModelSpec> specs;
  specs.push_back(oadlab::build_treatment(3));
  specs.push_back(oadlab::build_interaction(4));
  specs.push_back(oadlab::build_quadratic(2));
  for (const ModelSpec& spec : specs) {
    for (int i = 0; i < spec.n_candidates(); ++i) {
      Eigen::VectorXd via_row = spec.feature(i);
      Eigen::VectorXd via_map =
          spec.regression_map(spec.candidates.row(i).transpose());
      CHECK((via_row - via_map).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("model names parse back to their builders") {
  CHECK(oadlab::parse_model("treatment:5").p == 5);
  CHECK(oadlab::parse_model("interaction:2").p == 4);
  CHECK(oadlab::parse_model("quadratic:1").n_candidates() == 3);
  CHECK(throws_with_code([] { oadlab::parse_model("spline:3"); }, errc::config));
  CHECK(throws_with_code([] { oadlab::parse_model("treatment:0"); },
                         errc::invalid_dimension));
  CHECK(throws_with_code([] { oadlab::parse_model("treatment:"); }, errc::config));
  CHECK(throws_with_code([] { oadlab::parse_model("custom:/no/such/file.json"); },
                         errc::io));
}

TEST_CASE("custom models come from JSON candidate and monomial lists") {
  const std::string text = R"({
    "name": "line",
    "candidates": [[0.0], [0.5], [1.0]],
    "monomials": [[0], [1]]
  })";
  ModelSpec spec = oadlab::build_custom_from_json_text(text);
  CHECK(spec.s == 1);
  CHECK(spec.p == 2);
  CHECK(spec.n_candidates() == 3);
  Eigen::VectorXd f = spec.feature(1);
  CHECK(f(0) == doctest::Approx(1.0));
  CHECK(f(1) == doctest::Approx(0.5));

  CHECK(throws_with_code([] { oadlab::build_custom_from_json_text("{]"); },
                         errc::config));
  CHECK(throws_with_code(
      [] {
        oadlab::build_custom_from_json_text(
            R"({"candidates": [[0.0],[1.0, 2.0]], "monomials": [[0]]})");
      },
      errc::config));
  CHECK(throws_with_code(
      [] { oadlab::build_custom_from_json_text(R"({"monomials": [[0]]})"); },
      errc::config));
}

}  // TEST_SUITE
