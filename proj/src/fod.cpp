#include "oadlab/fod.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace oadlab {

namespace {

// ---------------------------------------------------------------------
// Criterion evaluation on a raw matrix (no design validation; used on
// perturbed weight vectors during Hessian evaluation and line searches).
struct PsiEval {
  double value = 0.0;  // Psi
  bool singular = false;
};

PsiEval psi_of_matrix(const Criterion& crit, const Eigen::MatrixXd& m) {
  const int p = static_cast<int>(m.rows());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  PsiEval out;
  if (ldlt.info() != Eigen::Success) {
    out.singular = true;
    return out;
  }
  const auto& diag = ldlt.vectorD();
  double dmax = diag.maxCoeff();
  if (!(dmax > 0.0)) {
    out.singular = true;
    return out;
  }
  double log_det = 0.0;
  for (int i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > dmax * 1e-13)) {
      out.singular = true;
      break;
    }
    log_det += std::log(diag(i));
  }
  switch (crit.kind) {
    case CriterionKind::D:
      out.value = out.singular ? 0.0 : std::exp(log_det / p);
      out.singular = false;  // D is defined (0) at singular matrices
      return out;
    case CriterionKind::A: {
      if (out.singular) return out;
      double tr = ldlt.solve(Eigen::MatrixXd::Identity(p, p)).trace();
      out.value = 1.0 / tr;
      return out;
    }
    case CriterionKind::c: {
      if (out.singular) return out;
      double quad = crit.cvec.dot(ldlt.solve(crit.cvec));
      out.value = 1.0 / quad;
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------
// Mutable solver state: support indices, weights, information matrix.
struct SolverState {
  const ModelSpec& spec;
  const Criterion& crit;
  std::vector<int> support;
  std::vector<double> weights;
  Eigen::MatrixXd M;

  SolverState(const ModelSpec& s, const Criterion& c) : spec(s), crit(c) {}

  int d() const { return static_cast<int>(support.size()); }

  void rebuild_matrix() {
    M = Eigen::MatrixXd::Zero(spec.p, spec.p);
    for (size_t i = 0; i < support.size(); ++i) {
      Eigen::VectorXd f = spec.feature(support[i]);
      M.noalias() += weights[i] * f * f.transpose();
    }
    M = 0.5 * (M + M.transpose()).eval();
  }

  int position_of(int candidate) const {
    for (size_t i = 0; i < support.size(); ++i) {
      if (support[i] == candidate) return static_cast<int>(i);
    }
    return -1;
  }

  void add_weight(int candidate, double amount) {
    int pos = position_of(candidate);
    if (pos < 0) {
      support.push_back(candidate);
      weights.push_back(amount);
    } else {
      weights[pos] += amount;
    }
  }

  void drop_zero_points(double floor_weight) {
    std::vector<int> ns;
    std::vector<double> nw;
    for (size_t i = 0; i < support.size(); ++i) {
      if (weights[i] > floor_weight) {
        ns.push_back(support[i]);
        nw.push_back(weights[i]);
      }
    }
    support.swap(ns);
    weights.swap(nw);
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= total;
  }

  Design as_design() const {
    Design dz;
    dz.support = support;
    dz.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(),
                                                   weights.size());
    // Guard against accumulated drift before validation downstream.
    dz.weights /= dz.weights.sum();
    return dz;
  }
};

// Per-iteration snapshot of the sensitivity landscape.
struct Landscape {
  Eigen::VectorXd phi;   // raw directional derivatives, all candidates
  double psi = 0.0;      // 1/Psi
  double psi_value = 0.0;  // Psi
  double min_phi = 0.0;
  int argmin = -1;
  bool singular = false;
};

Landscape scan(const SolverState& st) {
  Landscape ls;
  const int p = st.spec.p;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(st.M);
  const auto& diag = ldlt.vectorD();
  double dmax = diag.size() ? diag.maxCoeff() : 0.0;
  if (ldlt.info() != Eigen::Success || !(dmax > 0.0) ||
      !(diag.minCoeff() > dmax * 1e-13)) {
    ls.singular = true;
    return ls;
  }
  double log_det = 0.0;
  for (int i = 0; i < p; ++i) log_det += std::log(diag(i));
  Eigen::MatrixXd minv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd& F = st.spec.features;
  switch (st.crit.kind) {
    case CriterionKind::D: {
      double det_pow = std::exp(-log_det / p);
      Eigen::VectorXd dx =
          (F * minv).cwiseProduct(F).rowwise().sum();
      ls.phi = det_pow / p * (Eigen::VectorXd::Constant(F.rows(), p) - dx);
      ls.psi = det_pow;
      break;
    }
    case CriterionKind::A: {
      double tr = minv.trace();
      Eigen::MatrixXd minv2 = minv * minv;
      Eigen::VectorXd ax = (F * minv2).cwiseProduct(F).rowwise().sum();
      ls.phi = Eigen::VectorXd::Constant(F.rows(), tr) - ax;
      ls.psi = tr;
      break;
    }
    case CriterionKind::c: {
      Eigen::VectorXd minv_c = minv * st.crit.cvec;
      double quad = st.crit.cvec.dot(minv_c);
      Eigen::VectorXd t = F * minv_c;
      ls.phi = Eigen::VectorXd::Constant(F.rows(), quad) -
               t.cwiseProduct(t);
      ls.psi = quad;
      break;
    }
  }
  ls.psi_value = 1.0 / ls.psi;
  ls.min_phi = ls.phi.minCoeff(&ls.argmin);
  return ls;
}

// Woodbury pieces for the exchange line search along
//   M(lambda) = M + lambda (f_to f_to' - f_from f_from').
struct ExchangeCurve {
  double a = 0.0, b = 0.0, c = 0.0;  // S = U' M^{-1} U entries
  Eigen::Matrix2d T;                 // U' M^{-2} U  (A criterion)
  Eigen::Vector2d v;                 // U' M^{-1} cvec (c criterion)
  double psi0 = 0.0;                 // psi at lambda = 0
  CriterionKind kind = CriterionKind::D;

  // psi(lambda) (for A and c); the D branch uses det ratio directly.
  double psi(double lambda) const {
    Eigen::Matrix2d S;
    S << a, c, c, b;
    Eigen::Matrix2d D = Eigen::Matrix2d::Zero();
    D(0, 0) = lambda;
    D(1, 1) = -lambda;
    Eigen::Matrix2d ident = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d isd = ident + S * D;
    double det = isd(0, 0) * isd(1, 1) - isd(0, 1) * isd(1, 0);
    if (!(det > 1e-300)) return std::numeric_limits<double>::infinity();
    Eigen::Matrix2d adj;
    adj << isd(1, 1), -isd(0, 1), -isd(1, 0), isd(0, 0);
    Eigen::Matrix2d K = D * adj / det;  // (D^{-1} + S)^{-1}
    if (kind == CriterionKind::A) {
      return psi0 - (K * T).trace();
    }
    return psi0 - v.dot(K * v);
  }

  double det_ratio(double lambda) const {
    return (1.0 + a * lambda) * (1.0 - b * lambda) + c * c * lambda * lambda;
  }
};

double exchange_line_search(const ExchangeCurve& curve, double wmax) {
  if (curve.kind == CriterionKind::D) {
    // det ratio is the quadratic (1+a l)(1-b l) + c^2 l^2; its stationary
    // point is the classical exchange step.
    double denom = curve.a * curve.b - curve.c * curve.c;
    double lambda;
    if (denom > 0.0) {
      lambda = 0.5 * (curve.a - curve.b) / denom;
    } else {
      lambda = wmax;  // degenerate pair: move as much as allowed
    }
    return std::clamp(lambda, 0.0, wmax);
  }
  // psi(lambda) is unimodal on [0, wmax]; golden-section search.
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = 0.0, hi = wmax;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = curve.psi(x1), f2 = curve.psi(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, wmax); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = curve.psi(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = curve.psi(x2);
    }
  }
  double mid = 0.5 * (lo + hi);
  // Accept only improving steps.
  return curve.psi(mid) < curve.psi0 ? mid : 0.0;
}

// Substitute w_d = 1 - sum of the free weights into a full d x d
// simplex Hessian.
Eigen::MatrixXd constrain_full_hessian(const Eigen::MatrixXd& full) {
  const int d = static_cast<int>(full.rows());
  Eigen::MatrixXd constrained(d - 1, d - 1);
  for (int i = 0; i + 1 < d; ++i) {
    for (int j = 0; j + 1 < d; ++j) {
      constrained(i, j) =
          full(i, j) - full(i, d - 1) - full(d - 1, j) + full(d - 1, d - 1);
    }
  }
  return constrained;
}

// Value, gradient and full (unconstrained) Hessian of w -> Psi(M(w)) on
// a fixed support, by matrix calculus through M(w) = sum_i w_i f_i f_i'.
// Everything reduces to the pairwise forms B_ij = f_i' M^{-1} f_j (plus
// M^{-2} analogues), so the cost is O(d^2 p) after one factorization.
struct SupportCalculus {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

SupportCalculus support_calculus(const ModelSpec& spec, const Criterion& crit,
                                 const std::vector<int>& support,
                                 const Eigen::VectorXd& w) {
  const int d = static_cast<int>(support.size());
  const int p = spec.p;
  Eigen::MatrixXd fs(d, p);
  for (int i = 0; i < d; ++i) fs.row(i) = spec.feature(support[i]);
  Eigen::MatrixXd m = fs.transpose() * w.asDiagonal() * fs;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  const auto& diag = ldlt.vectorD();
  double dmax = diag.size() ? diag.maxCoeff() : 0.0;
  require(ldlt.info() == Eigen::Success && dmax > 0.0 &&
              diag.minCoeff() > dmax * 1e-13,
          errc::curvature_computation,
          "singular information matrix while differentiating the criterion");
  Eigen::MatrixXd minv_ft = ldlt.solve(fs.transpose());  // p x d
  Eigen::MatrixXd b = fs * minv_ft;                      // f_i' M^{-1} f_j
  SupportCalculus out;
  switch (crit.kind) {
    case CriterionKind::D: {
      double log_det = 0.0;
      for (int i = 0; i < p; ++i) log_det += std::log(diag(i));
      out.value = std::exp(log_det / p);
      Eigen::VectorXd a = b.diagonal();
      out.grad = (out.value / p) * a;
      out.hess = out.value * (a * a.transpose() / (static_cast<double>(p) * p) -
                              b.cwiseProduct(b) / p);
      return out;
    }
    case CriterionKind::A: {
      double tr = ldlt.solve(Eigen::MatrixXd::Identity(p, p)).trace();
      Eigen::MatrixXd c2 = minv_ft.transpose() * minv_ft;  // f_i' M^{-2} f_j
      Eigen::VectorXd bb = c2.diagonal();
      out.value = 1.0 / tr;
      out.grad = bb / (tr * tr);
      out.hess = 2.0 / (tr * tr) *
                 (bb * bb.transpose() / tr - b.cwiseProduct(c2));
      return out;
    }
    case CriterionKind::c: {
      Eigen::VectorXd mc = ldlt.solve(crit.cvec);
      double quad = crit.cvec.dot(mc);
      require(quad > 0.0, errc::curvature_computation,
              "degenerate contrast quadratic form");
      Eigen::VectorXd u = fs * mc;  // f_i' M^{-1} c
      Eigen::VectorXd u2 = u.cwiseProduct(u);
      out.value = 1.0 / quad;
      out.grad = u2 / (quad * quad);
      out.hess = 2.0 / (quad * quad) *
                 (u2 * u2.transpose() / quad -
                  b.cwiseProduct(u * u.transpose()));
      return out;
    }
  }
  throw OadError(errc::invalid_argument, "unknown criterion kind");
}
}  // namespace

FodResult solve_fod(const ModelSpec& spec, const Criterion& crit,
                    std::optional<Design> init, const FodOptions& opts) {
  require(opts.max_iter >= 1 && opts.tol > 0.0, errc::invalid_argument,
          "bad solver options");
  if (crit.kind == CriterionKind::c) {
    require(crit.cvec.size() == spec.p, errc::invalid_argument,
            "c vector length must equal parameter count");
  }

  SolverState st(spec, crit);
  if (init.has_value()) {
    validate_design(spec, *init);
    st.support = init->support;
    st.weights.assign(init->weights.data(),
                      init->weights.data() + init->weights.size());
  } else {
    st.support.resize(spec.n_candidates());
    std::iota(st.support.begin(), st.support.end(), 0);
    st.weights.assign(st.support.size(), 1.0 / st.support.size());
  }
  st.rebuild_matrix();

  {
    PsiEval check = psi_of_matrix(crit, st.M);
    require(!check.singular && check.value > 0.0, errc::singular_information,
            "initial design yields a singular information matrix");
  }

  long iterations = 0;
  const long virtual_start = st.d();  // 1/j steps mimic one-at-a-time draws
  double last_violation = 0.0;

  auto converged = [&](const Landscape& ls) {
    last_violation = ls.min_phi / ls.psi;
    return last_violation >= -opts.tol;
  };

  // ---- Phase 1: first-order 1/j steps (monotone, safeguarded) ----------
  bool done = false;
  for (long t = 1; t <= opts.first_order_cap && iterations < opts.max_iter;
       ++t) {
    Landscape ls = scan(st);
    require(!ls.singular, errc::singular_information,
            "information matrix became singular during the first-order phase");
    if (converged(ls)) {
      done = true;
      break;
    }
    double alpha = 1.0 / static_cast<double>(virtual_start + t);
    Eigen::VectorXd f = spec.feature(ls.argmin);
    double psi_old = ls.psi_value;
    // The 1/j step can overshoot; halve until the concave criterion does
    // not decrease (guaranteed possible since phi(argmin) < 0).
    Eigen::MatrixXd m_try;
    double alpha_try = alpha;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      m_try = (1.0 - alpha_try) * st.M + alpha_try * f * f.transpose();
      PsiEval trial = psi_of_matrix(crit, m_try);
      if (!trial.singular && trial.value >= psi_old * (1.0 - 1e-12)) {
        accepted = true;
        break;
      }
      alpha_try *= 0.5;
    }
    if (!accepted) break;  // step underflow: hand off to exchange phase
    for (double& w : st.weights) w *= (1.0 - alpha_try);
    st.add_weight(ls.argmin, alpha_try);
    st.M = 0.5 * (m_try + m_try.transpose()).eval();
    ++iterations;
  }

  // ---- Phase 1.5: multiplicative reweighting -----------------------------
  // w_i <- w_i (1 - phi_i/psi) rescales every weight by its variance
  // ratio at once (the ratio's weight-average is exactly 1, so the sweep
  // is self-normalizing up to rounding). Interior optima that single-pair
  // exchanges approach in a zigzag are reached in a few hundred sweeps.
  // Near the optimum the criterion gap is quadratic in the certificate
  // violation, so progress is tracked on the violation itself (the gap
  // disappears into rounding long before the certificate passes).
  double kappa = 1.0;
  double best_viol = -std::numeric_limits<double>::infinity();
  int stagnant_sweeps = 0;
  while (!done && iterations < opts.max_iter && stagnant_sweeps < 64) {
    Landscape ls = scan(st);
    require(!ls.singular, errc::singular_information,
            "information matrix became singular during reweighting");
    if (converged(ls)) {
      done = true;
      break;
    }
    double viol = ls.min_phi / ls.psi;
    if (viol >= 0.99 * best_viol) {
      best_viol = std::max(best_viol, viol);
      stagnant_sweeps = 0;
    } else {
      ++stagnant_sweeps;
    }
    std::vector<double> saved = st.weights;
    double total = 0.0;
    for (size_t i = 0; i < st.weights.size(); ++i) {
      double ratio =
          std::max(0.0, 1.0 - ls.phi(st.support[i]) / ls.psi);
      st.weights[i] *= (kappa == 1.0) ? ratio : std::sqrt(ratio);
      total += st.weights[i];
    }
    if (!(total > 0.0)) {
      st.weights = std::move(saved);
      break;
    }
    for (double& w : st.weights) w /= total;
    st.rebuild_matrix();
    PsiEval trial = psi_of_matrix(crit, st.M);
    if (trial.singular || trial.value < ls.psi_value * (1.0 - 1e-12)) {
      st.weights = std::move(saved);
      st.rebuild_matrix();
      if (kappa == 1.0) {
        kappa = 0.5;  // retry the sweep damped before giving up
        continue;
      }
      break;
    }
    kappa = 1.0;
    ++iterations;
  }

  // ---- Phase 1.75: Newton polish on the active support -------------------
  // Equality-constrained Newton steps on the simplex face found so far;
  // quadratic local convergence where the reweighting map crawls. Steps
  // that push a weight to the boundary clip against it; the zeroed point
  // is pruned and the polish repeats on the smaller face.
  for (int round = 0; !done && round < 64 && iterations < opts.max_iter;
       ++round) {
    Landscape ls = scan(st);
    require(!ls.singular, errc::singular_information,
            "information matrix became singular during Newton polish");
    if (converged(ls)) {
      done = true;
      break;
    }
    st.drop_zero_points(1e-14);
    st.rebuild_matrix();
    const int dd = st.d();
    if (dd <= 1) break;
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(st.weights.data(),
                                                          dd);
    SupportCalculus calc;
    try {
      calc = support_calculus(spec, crit, st.support, w);
    } catch (const OadError&) {
      break;  // degenerate face: let the exchange phase handle it
    }
    Eigen::VectorXd gtil(dd - 1);
    for (int i = 0; i + 1 < dd; ++i) {
      gtil(i) = calc.grad(i) - calc.grad(dd - 1);
    }
    Eigen::MatrixXd neg_h = -constrain_full_hessian(calc.hess);
    double scale = std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff());
    neg_h.diagonal().array() += 1e-13 * scale;
    Eigen::LDLT<Eigen::MatrixXd> step_ldlt(neg_h);
    if (step_ldlt.info() != Eigen::Success ||
        !(step_ldlt.vectorD().minCoeff() > 0.0)) {
      break;
    }
    Eigen::VectorXd delta = step_ldlt.solve(gtil);
    // Clip the step against the face boundary (all weights >= 0),
    // then backtrack until the criterion does not decrease.
    double t_max = 1.0;
    double delta_last = -delta.sum();
    for (int i = 0; i + 1 < dd; ++i) {
      if (delta(i) < 0.0) t_max = std::min(t_max, -w(i) / delta(i));
    }
    if (delta_last < 0.0) t_max = std::min(t_max, -w(dd - 1) / delta_last);
    if (!(t_max > 0.0)) break;
    bool accepted = false;
    for (double t = std::min(1.0, t_max); t > 1e-8; t *= 0.5) {
      std::vector<double> trial_w(static_cast<size_t>(dd));
      double total = 0.0;
      bool feasible = true;
      for (int i = 0; i < dd; ++i) {
        double di = (i + 1 < dd) ? delta(i) : delta_last;
        trial_w[static_cast<size_t>(i)] = w(i) + t * di;
        if (trial_w[static_cast<size_t>(i)] < 0.0) feasible = false;
        total += trial_w[static_cast<size_t>(i)];
      }
      if (!feasible || !(total > 0.0)) continue;
      std::vector<double> saved = st.weights;
      st.weights = std::move(trial_w);
      for (double& x : st.weights) x /= total;
      st.rebuild_matrix();
      PsiEval trial = psi_of_matrix(crit, st.M);
      if (!trial.singular && trial.value >= ls.psi_value * (1.0 - 1e-12)) {
        accepted = true;
        break;
      }
      st.weights = std::move(saved);
      st.rebuild_matrix();
    }
    if (!accepted) break;
    ++iterations;
  }

  // ---- Phase 2: vertex-exchange refinement ------------------------------
  // Repeated prune/refine cycles: exchanges drive surplus support weights
  // to zero exactly; pruning removes dust left by phase 1.
  int stalls = 0;
  while (!done && iterations < opts.max_iter) {
    Landscape ls = scan(st);
    require(!ls.singular, errc::singular_information,
            "information matrix became singular during exchange refinement");
    if (converged(ls)) {
      done = true;
      break;
    }
    // from: the support point the design needs least (largest phi).
    int from_pos = -1;
    double from_phi = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < st.d(); ++i) {
      if (st.weights[i] <= 0.0) continue;
      double ph = ls.phi(st.support[i]);
      if (ph > from_phi) {
        from_phi = ph;
        from_pos = i;
      }
    }
    int to = ls.argmin;
    if (from_pos < 0 || st.support[from_pos] == to) break;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(st.M);
    Eigen::VectorXd f_to = spec.feature(to);
    Eigen::VectorXd f_from = spec.feature(st.support[from_pos]);
    Eigen::VectorXd mi_to = ldlt.solve(f_to);
    Eigen::VectorXd mi_from = ldlt.solve(f_from);

    ExchangeCurve curve;
    curve.kind = crit.kind;
    curve.a = f_to.dot(mi_to);
    curve.b = f_from.dot(mi_from);
    curve.c = f_from.dot(mi_to);
    curve.psi0 = ls.psi;
    if (crit.kind == CriterionKind::A) {
      curve.T(0, 0) = mi_to.dot(mi_to);
      curve.T(0, 1) = curve.T(1, 0) = mi_to.dot(mi_from);
      curve.T(1, 1) = mi_from.dot(mi_from);
    } else if (crit.kind == CriterionKind::c) {
      Eigen::VectorXd mi_c = ldlt.solve(crit.cvec);
      curve.v(0) = f_to.dot(mi_c);
      curve.v(1) = f_from.dot(mi_c);
    }

    double wmax = st.weights[from_pos];
    double lambda = exchange_line_search(curve, wmax);
    if (lambda <= 0.0) {
      // No improving exchange with this pair; try pruning dust first,
      // then give up if still stuck.
      if (++stalls >= 3) break;
      st.drop_zero_points(opts.prune_weight);
      st.rebuild_matrix();
      ++iterations;
      continue;
    }
    stalls = 0;
    st.M.noalias() += lambda * (f_to * f_to.transpose());
    st.M.noalias() -= lambda * (f_from * f_from.transpose());
    st.M = 0.5 * (st.M + st.M.transpose()).eval();
    st.weights[from_pos] -= lambda;
    if (st.weights[from_pos] < 1e-15) st.weights[from_pos] = 0.0;
    st.add_weight(to, lambda);
    if (st.weights[from_pos] == 0.0) {
      st.support.erase(st.support.begin() + from_pos);
      st.weights.erase(st.weights.begin() + from_pos);
      st.rebuild_matrix();
    }
    ++iterations;
    // Periodic refresh controls drift from incremental updates.
    if (iterations % 512 == 0) st.rebuild_matrix();
  }

  // ---- Prune and re-verify ----------------------------------------------
  st.drop_zero_points(opts.prune_weight);
  st.rebuild_matrix();
  Landscape final_ls = scan(st);
  require(!final_ls.singular, errc::singular_information,
          "pruned design yields a singular information matrix");
  done = converged(final_ls);

  FodResult result;
  result.design = st.as_design();
  result.criterion_value = final_ls.psi_value;
  result.iterations = iterations;
  result.get_violation = last_violation;
  if (!done) {
    throw FodNonConvergence(
        "first-order/exchange solver exhausted its budget for " + spec.name +
            " under " + crit.name() + " (residual " +
            std::to_string(last_violation) + ")",
        result);
  }
  return result;
}

ExactDesign round_to_exact(const Design& design, long n) {
  const int d = design.d();
  require(d >= 1, errc::invalid_argument, "empty design");
  require(n >= d, errc::infeasible_rounding,
          "cannot place fewer observations than support points");
  ExactDesign exact;
  exact.support = design.support;
  exact.counts = Eigen::VectorXi::Zero(d);
  std::vector<double> frac(d);
  long placed = 0;
  for (int i = 0; i < d; ++i) {
    double target = design.weights(i) * static_cast<double>(n);
    exact.counts(i) = static_cast<int>(std::floor(target));
    frac[i] = target - std::floor(target);
    placed += exact.counts(i);
  }
  // Distribute the remainder by largest fractional part, ties toward the
  // lowest support index.
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&frac](int a, int b) { return frac[a] > frac[b]; });
  for (long r = 0; r < n - placed; ++r) {
    exact.counts(order[r % d]) += 1;
  }
  // Every support point receives at least one observation.
  for (int i = 0; i < d; ++i) {
    while (exact.counts(i) == 0) {
      int donor = 0;
      for (int j = 1; j < d; ++j) {
        if (exact.counts(j) > exact.counts(donor)) donor = j;
      }
      exact.counts(donor) -= 1;
      exact.counts(i) += 1;
    }
  }
  return exact;
}

namespace {

// Psi as a function of the free weights (last weight substituted), on a
// fixed support; used by the numerical Hessian.
double psi_of_free_weights(const ModelSpec& spec, const Criterion& crit,
                           const std::vector<int>& support,
                           const Eigen::VectorXd& free_w) {
  const int d = static_cast<int>(support.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(spec.p, spec.p);
  double last = 1.0 - free_w.sum();
  for (int i = 0; i < d; ++i) {
    double w = (i + 1 < d) ? free_w(i) : last;
    Eigen::VectorXd f = spec.feature(support[i]);
    m.noalias() += w * f * f.transpose();
  }
  m = 0.5 * (m + m.transpose()).eval();
  PsiEval ev = psi_of_matrix(crit, m);
  require(!ev.singular, errc::curvature_computation,
          "singular information matrix while differentiating the criterion");
  return ev.value;
}

Eigen::MatrixXd hessian_fd(const ModelSpec& spec, const Criterion& crit,
                           const std::vector<int>& support,
                           const Eigen::VectorXd& w0, double step) {
  const int k = static_cast<int>(w0.size());
  auto g = [&](const Eigen::VectorXd& w) {
    return psi_of_free_weights(spec, crit, support, w);
  };
  double g0 = g(w0);
  Eigen::MatrixXd hess(k, k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd wp = w0, wm = w0;
    wp(i) += step;
    wm(i) -= step;
    hess(i, i) = (g(wp) - 2.0 * g0 + g(wm)) / (step * step);
    for (int j = i + 1; j < k; ++j) {
      Eigen::VectorXd wpp = w0, wpm = w0, wmp = w0, wmm = w0;
      wpp(i) += step; wpp(j) += step;
      wpm(i) += step; wpm(j) -= step;
      wmp(i) -= step; wmp(j) += step;
      wmm(i) -= step; wmm(j) -= step;
      double hij =
          (g(wpp) - g(wpm) - g(wmp) + g(wmm)) / (4.0 * step * step);
      hess(i, j) = hij;
      hess(j, i) = hij;
    }
  }
  return hess;
}


Eigen::MatrixXd v_star_matrix(const Eigen::VectorXd& w, VStarForm form) {
  const int d = static_cast<int>(w.size());
  if (d <= 1) return Eigen::MatrixXd::Zero(0, 0);
  if (form == VStarForm::multinomial) {
    Eigen::VectorXd head = w.head(d - 1);
    return Eigen::MatrixXd(head.asDiagonal()) - head * head.transpose();
  }
  // Block formula: gdot = (I_{d-1} - J_{d-1} diag(w_(d)) , w_d 1_{d-1}).
  Eigen::MatrixXd gdot(d - 1, d);
  for (int i = 0; i + 1 < d; ++i) {
    for (int j = 0; j + 1 < d; ++j) {
      gdot(i, j) = (i == j ? 1.0 : 0.0) - w(j);
    }
    gdot(i, d - 1) = w(d - 1);
  }
  return gdot * w.asDiagonal() * gdot.transpose();
}

}  // namespace

CurvatureCore curvature_core(const ModelSpec& spec, const Criterion& crit,
                             const FodResult& fod, VStarForm form,
                             HessianMethod method) {
  validate_design(spec, fod.design);
  CurvatureCore core;
  core.psi_star = fod.criterion_value;
  require(core.psi_star > 0.0, errc::invalid_argument,
          "curvature needs a converged design with positive criterion value");
  const int d = fod.design.d();
  if (d == 1) {
    core.H_star = Eigen::MatrixXd::Zero(0, 0);
    core.V_star = Eigen::MatrixXd::Zero(0, 0);
    core.R_star = 0.0;
    return core;
  }

  const Eigen::VectorXd& w = fod.design.weights;
  if (method == HessianMethod::analytic) {
    core.H_star = -constrain_full_hessian(
        support_calculus(spec, crit, fod.design.support, w).hess);
  } else {
    // Central differences with one Richardson extrapolation step; the
    // step shrinks when the smallest weight is close.
    Eigen::VectorXd free_w = w.head(d - 1);
    double wmin = w.minCoeff();
    double step = std::min(1e-5, wmin / 8.0);
    require(step > 1e-9, errc::curvature_computation,
            "support weights too small for a stable numerical Hessian");
    Eigen::MatrixXd h1 =
        hessian_fd(spec, crit, fod.design.support, free_w, step);
    Eigen::MatrixXd h2 =
        hessian_fd(spec, crit, fod.design.support, free_w, 0.5 * step);
    core.H_star = -(4.0 * h2 - h1) / 3.0;
  }
  core.H_star = 0.5 * (core.H_star + core.H_star.transpose()).eval();

  // Indefiniteness signals a non-optimal input design.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(core.H_star);
  double max_eig = es.eigenvalues().cwiseAbs().maxCoeff();
  require(es.eigenvalues().minCoeff() >= -1e-6 * std::max(1.0, max_eig),
          errc::curvature_computation,
          "indefinite criterion Hessian: the design does not look optimal");

  core.V_star = v_star_matrix(w, form);
  core.R_star = (core.H_star * core.V_star).trace() / (2.0 * core.psi_star);
  if (core.R_star < 0.0 && core.R_star > -1e-12) core.R_star = 0.0;
  require(core.R_star >= 0.0, errc::curvature_computation,
          "negative curvature summary R*");
  return core;
}

CurvatureReport curvature_report(const ModelSpec& spec, const Criterion& crit,
                                 const FodResult& fod, const ErrorModel& err,
                                 long n, VStarForm form, HessianMethod method) {
  require(n >= 1, errc::invalid_argument, "sample size must be positive");
  CurvatureCore core = curvature_core(spec, crit, fod, form, method);
  const ErrorMoments& mom = err.moments();
  CurvatureReport rep;
  rep.H_star = std::move(core.H_star);
  rep.V_star = std::move(core.V_star);
  rep.R_star = core.R_star;
  rep.gamma_sq = mom.gamma_sq;
  const double d = static_cast<double>(fod.design.d());
  rep.h = 1.0 + d / (2.0 * n * mom.mu * mom.mu) *
                    (mom.mu3 * mom.mu3 / mom.mu + mom.mu4);
  double deficit = rep.gamma_sq * rep.R_star / static_cast<double>(n);
  require(deficit < 1.0, errc::invalid_argument,
          "sample size too small for the efficiency expansion");
  rep.S_star = 1.0 / (1.0 - deficit);
  return rep;
}

std::vector<Table1Cell> table1(int max_s, const std::vector<Criterion>& crits,
                               int quadratic_max_s) {
  require(max_s >= 1, errc::invalid_argument, "max_s must be positive");
  require(!crits.empty(), errc::invalid_argument, "no criteria requested");
  struct Job {
    std::string family;
    int s;
    Criterion crit;
  };
  std::vector<Job> jobs;
  auto add_family = [&](const std::string& family, int top) {
    for (int s = 1; s <= top; ++s) {
      for (const auto& crit : crits) jobs.push_back({family, s, crit});
    }
  };
  add_family("treatment", max_s);
  add_family("interaction", max_s);
  add_family("quadratic", std::min(max_s, quadratic_max_s));

  std::vector<Table1Cell> cells(jobs.size());
  auto run_job = [](const Job& job) {
    Table1Cell cell;
    cell.family = job.family;
    cell.s = job.s;
    cell.criterion = job.crit.name();
    try {
      ModelSpec spec = job.family == "treatment"
                           ? build_treatment(job.s)
                           : job.family == "interaction"
                                 ? build_interaction(job.s)
                                 : build_quadratic(job.s);
      cell.p = spec.p;
      FodResult fod = solve_fod(spec, job.crit);
      CurvatureCore core = curvature_core(spec, job.crit, fod);
      cell.R_star = core.R_star;
      cell.psi_star = core.psi_star;
      cell.d = fod.design.d();
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    return cell;
  };

  // Cells are independent; spread them across a small async pool.
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min<size_t>(workers, jobs.size()); ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        cells[i] = run_job(jobs[i]);
      }
    });
  }
  for (auto& th : pool) th.join();
  return cells;
}

}  // namespace oadlab
