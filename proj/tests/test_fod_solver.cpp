#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "oadlab/common.hpp"
#include "oadlab/design.hpp"
#include "oadlab/fod.hpp"
#include "oadlab/model.hpp"

using oadlab::Criterion;
using oadlab::CurvatureCore;
using oadlab::Design;
using oadlab::ErrorModel;
using oadlab::FodOptions;
using oadlab::FodResult;
using oadlab::HessianMethod;
using oadlab::ModelSpec;
using oadlab::VStarForm;

namespace {

// Finite-difference R* for an arbitrary scalar function of the weights on a
// fixed support, mirroring the pipeline: negated constrained Hessian (double
// difference against the last support point) contracted with the multinomial
// allocation covariance.
double fd_r_star(const std::function<double(const Eigen::VectorXd&)>& value,
                 const Eigen::VectorXd& w) {
  const int d = static_cast<int>(w.size());
  const double step = 1e-4;
  Eigen::MatrixXd full(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      Eigen::VectorXd wpp = w, wpm = w, wmp = w, wmm = w;
      wpp(i) += step; wpp(j) += step;
      wpm(i) += step; wpm(j) -= step;
      wmp(i) -= step; wmp(j) += step;
      wmm(i) -= step; wmm(j) -= step;
      full(i, j) = full(j, i) =
          (value(wpp) - value(wpm) - value(wmp) + value(wmm)) /
          (4.0 * step * step);
    }
  }
  Eigen::MatrixXd constrained(d - 1, d - 1);
  for (int i = 0; i + 1 < d; ++i) {
    for (int j = 0; j + 1 < d; ++j) {
      constrained(i, j) =
          full(i, j) - full(i, d - 1) - full(d - 1, j) + full(d - 1, d - 1);
    }
  }
  Eigen::VectorXd head = w.head(d - 1);
  Eigen::MatrixXd v_star =
      Eigen::MatrixXd(head.asDiagonal()) - head * head.transpose();
  return (-constrained * v_star).trace() / (2.0 * value(w));
}

}  // namespace

TEST_SUITE("fod_solver") {

TEST_CASE("treatment designs solve to uniform weights for D and A") {
  ModelSpec spec = oadlab::build_treatment(4);
  for (const Criterion& crit : {Criterion::D(), Criterion::A()}) {
    FodResult res = oadlab::solve_fod(spec, crit);
    REQUIRE(res.design.d() == 4);
    for (int i = 0; i < 4; ++i) {
      CHECK(res.design.weights(i) == doctest::Approx(0.25).epsilon(1e-7));
    }
    CHECK(res.get_violation >= -1e-7);
    CHECK(oadlab::get_certificate(crit, spec, res.design, 1e-6).optimal);
  }
  CHECK(oadlab::solve_fod(spec, Criterion::D()).criterion_value ==
        doctest::Approx(0.25).epsilon(1e-9));
  CHECK(oadlab::solve_fod(spec, Criterion::A()).criterion_value ==
        doctest::Approx(1.0 / 16.0).epsilon(1e-9));
}

TEST_CASE("saturated interaction design is uniform with known determinant") {
  ModelSpec spec = oadlab::build_interaction(2);  // p = 4 = candidate count
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  REQUIRE(res.design.d() == 4);
  for (int i = 0; i < res.design.d(); ++i) {
    CHECK(res.design.weights(i) == doctest::Approx(0.25).epsilon(1e-7));
  }
  CHECK(res.criterion_value == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("single-factor quadratic puts a third on each grid point") {
  ModelSpec spec = oadlab::build_quadratic(1);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  REQUIRE(res.design.d() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.design.weights(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
  }
  // det F = 1/4 on the grid {0, 1/2, 1}, so Psi* = (1/16)^{1/3} / 3.
  CHECK(res.criterion_value ==
        doctest::Approx(std::cbrt(1.0 / 16.0) / 3.0).epsilon(1e-9));
  // The reported value is consistent with the returned design.
  CHECK(res.criterion_value ==
        doctest::Approx(oadlab::criterion_value(
                            Criterion::D(), oadlab::info_matrix(spec, res.design)))
            .epsilon(1e-12));
}

TEST_CASE("contrast criterion solves the uniform treatment allocation") {
  ModelSpec spec = oadlab::build_treatment(3);
  Criterion ones = Criterion::c(Eigen::Vector3d::Ones());
  FodResult res = oadlab::solve_fod(spec, ones);
  REQUIRE(res.design.d() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.design.weights(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
  CHECK(res.criterion_value == doctest::Approx(1.0 / 9.0).epsilon(1e-9));
}

TEST_CASE("largest-remainder rounding with a per-point floor") {
  auto make = [](std::vector<int> support, std::vector<double> w) {
    Design d;
    d.support = std::move(support);
    d.weights = Eigen::Map<Eigen::VectorXd>(w.data(), w.size());
    return d;
  };
  auto counts = [](const oadlab::ExactDesign& e) {
    return std::vector<int>(e.counts.data(), e.counts.data() + e.counts.size());
  };

  auto a = oadlab::round_to_exact(make({0, 1, 2}, {0.5, 0.3, 0.2}), 7);
  CHECK(counts(a) == std::vector<int>{4, 2, 1});
  CHECK(a.n() == 7);

  auto b = oadlab::round_to_exact(
      make({0, 1, 2}, {1.0 / 3, 1.0 / 3, 1.0 / 3}), 10);
  CHECK(counts(b) == std::vector<int>{4, 3, 3});

  auto c = oadlab::round_to_exact(make({0, 1, 2, 3}, {0.25, 0.25, 0.25, 0.25}),
                                  16);
  CHECK(counts(c) == std::vector<int>{4, 4, 4, 4});

  // n equal to the support size forces one observation everywhere; the
  // floor also protects near-zero weights.
  auto d = oadlab::round_to_exact(make({0, 1, 2}, {0.98, 0.01, 0.01}), 3);
  CHECK(counts(d) == std::vector<int>{1, 1, 1});
  auto e = oadlab::round_to_exact(make({0, 1}, {0.999, 0.001}), 2);
  CHECK(counts(e) == std::vector<int>{1, 1});

  CHECK_THROWS_AS(oadlab::round_to_exact(make({0, 1, 2}, {0.5, 0.3, 0.2}), 2),
                  oadlab::OadError);
  try {
    oadlab::round_to_exact(make({0, 1, 2}, {0.5, 0.3, 0.2}), 2);
  } catch (const oadlab::OadError& err) {
    CHECK(err.code() == oadlab::errc::infeasible_rounding);
  }
}

TEST_CASE("curvature of the uniform treatment optimum, three ways") {
  ModelSpec spec = oadlab::build_treatment(4);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  CurvatureCore analytic = oadlab::curvature_core(spec, Criterion::D(), res);
  CHECK(analytic.R_star == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(analytic.psi_star == doctest::Approx(0.25).epsilon(1e-9));

  // Finite-difference Hessian route.
  CurvatureCore fd = oadlab::curvature_core(spec, Criterion::D(), res,
                                            VStarForm::multinomial,
                                            HessianMethod::finite_difference);
  CHECK(fd.R_star == doctest::Approx(analytic.R_star).epsilon(1e-4));
  CHECK((fd.H_star - analytic.H_star).cwiseAbs().maxCoeff() < 1e-3);

  // Closed form: for the treatment family Psi(w) = (prod w_i)^{1/p}, so
  // the full Hessian is Psi [1/(p^2 w_i w_j) - delta_ij / (p w_i^2)].
  const Eigen::VectorXd& w = res.design.weights;
  const int p = spec.p;
  const double psi = res.criterion_value;
  Eigen::MatrixXd full(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      full(i, j) = psi / (p * p * w(i) * w(j));
      if (i == j) full(i, j) -= psi / (p * w(i) * w(i));
    }
  }
  Eigen::MatrixXd closed(p - 1, p - 1);
  for (int i = 0; i + 1 < p; ++i) {
    for (int j = 0; j + 1 < p; ++j) {
      closed(i, j) = -(full(i, j) - full(i, p - 1) - full(p - 1, j) +
                       full(p - 1, p - 1));
    }
  }
  CHECK((closed - analytic.H_star).cwiseAbs().maxCoeff() < 1e-9);

  // Both allocation-covariance conventions agree at uniform weights.
  CurvatureCore block = oadlab::curvature_core(spec, Criterion::D(), res,
                                               VStarForm::block_formula);
  CHECK(block.R_star == doctest::Approx(analytic.R_star).epsilon(1e-9));
}

TEST_CASE("curvature constants across families and criteria") {
  // At any optimum the multinomial contraction gives (p-1)/2 under D and
  // p-1 under A or a contrast, independent of the support size.
  ModelSpec quad = oadlab::build_quadratic(2);
  FodResult quad_d = oadlab::solve_fod(quad, Criterion::D());
  CHECK(oadlab::curvature_core(quad, Criterion::D(), quad_d).R_star ==
        doctest::Approx(2.5).epsilon(1e-6));
  FodResult quad_a = oadlab::solve_fod(quad, Criterion::A());
  CHECK(oadlab::curvature_core(quad, Criterion::A(), quad_a).R_star ==
        doctest::Approx(5.0).epsilon(1e-6));

  ModelSpec inter = oadlab::build_interaction(3);
  FodResult inter_a = oadlab::solve_fod(inter, Criterion::A());
  CHECK(oadlab::curvature_core(inter, Criterion::A(), inter_a).R_star ==
        doctest::Approx(6.0).epsilon(1e-6));

  ModelSpec treat = oadlab::build_treatment(3);
  Criterion ones = Criterion::c(Eigen::Vector3d::Ones());
  FodResult treat_c = oadlab::solve_fod(treat, ones);
  CHECK(oadlab::curvature_core(treat, ones, treat_c).R_star ==
        doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("curvature is a property of the criterion scale, not just its argmax") {
  // Rescaling Psi -> Psi^2 leaves the optimal design alone but doubles the
  // contracted curvature, which is why the criterion normalization is pinned.
  ModelSpec spec = oadlab::build_treatment(4);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  // Build the information matrix directly: perturbed weight vectors live
  // slightly off the simplex, which design validation would reject.
  auto psi_of = [&](const Eigen::VectorXd& w) {
    oadlab::InfoMatrix info;
    info.m = Eigen::MatrixXd::Zero(spec.p, spec.p);
    for (int i = 0; i < res.design.d(); ++i) {
      Eigen::VectorXd f = spec.feature(res.design.support[i]);
      info.m += w(i) * f * f.transpose();
    }
    return oadlab::criterion_value(Criterion::D(), info);
  };
  auto psi_sq = [&](const Eigen::VectorXd& w) {
    double v = psi_of(w);
    return v * v;
  };
  const double base = fd_r_star(psi_of, res.design.weights);
  const double squared = fd_r_star(psi_sq, res.design.weights);
  CHECK(base == doctest::Approx(1.5).epsilon(1e-4));
  CHECK(squared == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("curvature report folds in the error-model constants") {
  ModelSpec spec = oadlab::build_treatment(4);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());

  auto normal = oadlab::curvature_report(spec, Criterion::D(), res,
                                         ErrorModel::normal(), 200);
  CHECK(normal.gamma_sq == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
  CHECK(normal.h == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(normal.S_star == doctest::Approx(1.0).epsilon(1e-12));

  auto str = oadlab::curvature_report(spec, Criterion::D(), res,
                                      ErrorModel::student_t(1.0), 200);
  CHECK(str.gamma_sq == doctest::Approx(2.5).epsilon(1e-6));
  CHECK(str.R_star == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(str.S_star ==
        doctest::Approx(1.0 / (1.0 - 2.5 * 1.5 / 200.0)).epsilon(1e-6));
}

TEST_CASE("information adjustment factor stays at or above one") {
  // h = 1 + d/(2 n mu^2) (mu3^2/mu + mu4) >= 1 is recorded as an invariant,
  // but the gamma-hyperbola family has mu3 = 0 and mu4 = -2v < 0, giving
  // h = 1 - d/(4 n v) < 1 for every finite n. The check is kept as written
  // and fails for that family; see the readme's known-discrepancies note.
  ModelSpec spec = oadlab::build_treatment(4);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  for (double v : {0.25, 0.5, 1.0}) {
    auto rep = oadlab::curvature_report(spec, Criterion::D(), res,
                                        ErrorModel::gamma_hyperbola(v), 200);
    CHECK(rep.h >= 1.0);
  }
}

TEST_CASE("allocation covariance trace matches the quoted cubic closed form") {
  // Claimed identity: trace(V*) = (d-1) sum_i w_i^3 + sum_i w_i (1 - w_i)
  // over the d-1 retained coordinates. The multinomial covariance
  // diag(w) - w w^T has trace sum_i w_i (1 - w_i) exactly, so the cubic
  // term is spurious under every indexing convention we could construct;
  // the check is kept as written and fails. See the readme's
  // known-discrepancies note.
  ModelSpec spec = oadlab::build_quadratic(1);
  FodResult res = oadlab::solve_fod(spec, Criterion::D());
  CurvatureCore core = oadlab::curvature_core(spec, Criterion::D(), res);
  const Eigen::VectorXd& w = res.design.weights;
  const int d = res.design.d();
  double cubic = 0.0, linear = 0.0;
  for (int i = 0; i + 1 < d; ++i) {
    cubic += w(i) * w(i) * w(i);
    linear += w(i) * (1.0 - w(i));
  }
  const double claimed = (d - 1) * cubic + linear;
  CHECK(core.V_star.trace() == doctest::Approx(claimed).epsilon(1e-10));
}

TEST_CASE("non-convergence carries the best design found") {
  ModelSpec spec = oadlab::build_quadratic(2);
  FodOptions opts;
  opts.max_iter = 3;
  opts.tol = 1e-16;
  bool threw = false;
  try {
    oadlab::solve_fod(spec, Criterion::D(), {}, opts);
  } catch (const oadlab::FodNonConvergence& e) {
    threw = true;
    CHECK(e.code() == oadlab::errc::non_convergence);
    const FodResult& best = e.best();
    CHECK_NOTHROW(oadlab::validate_design(spec, best.design));
    CHECK(best.criterion_value > 0.0);
    CHECK(best.get_violation < -1e-16);
  }
  CHECK(threw);
}

TEST_CASE("curvature grid covers the family-by-criterion lattice") {
  auto cells = oadlab::table1(3, {Criterion::D(), Criterion::A()}, 2);
  REQUIRE(cells.size() == 16);  // (3 + 3 + 2) rows x 2 criteria
  for (const auto& cell : cells) {
    CAPTURE(cell.family);
    CAPTURE(cell.s);
    CAPTURE(cell.criterion);
    REQUIRE(cell.ok);
    CHECK(cell.error.empty());
    CHECK(cell.psi_star > 0.0);
    CHECK(cell.d >= 1);
    int p = 0;
    if (cell.family == "treatment") p = cell.s;
    if (cell.family == "interaction") p = 1 + cell.s + cell.s * (cell.s - 1) / 2;
    if (cell.family == "quadratic") p = 1 + 2 * cell.s + cell.s * (cell.s - 1) / 2;
    REQUIRE(p == cell.p);
    const double want =
        cell.criterion == "D" ? (p - 1) / 2.0 : static_cast<double>(p - 1);
    if (cell.d == 1) {
      CHECK(cell.R_star == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    } else {
      CHECK(cell.R_star == doctest::Approx(want).epsilon(1e-5));
    }
  }
}

}  // TEST_SUITE
