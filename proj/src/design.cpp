#include "oadlab/design.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace oadlab {

Criterion Criterion::c(Eigen::VectorXd v) {
  require(v.size() > 0 && v.norm() > 0.0, errc::invalid_argument,
          "c criterion needs a nonzero vector");
  return {CriterionKind::c, std::move(v)};
}

Criterion Criterion::parse(const std::string& text) {
  if (text == "D") return Criterion::D();
  if (text == "A") return Criterion::A();
  if (text.rfind("c:", 0) == 0) {
    std::string body = text.substr(2);
    if (!body.empty() && body.front() == '[' && body.back() == ']') {
      body = body.substr(1, body.size() - 2);
    }
    std::vector<double> vals;
    std::stringstream ss(body);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail(errc::config, "bad number '" + tok + "' in c criterion");
      }
    }
    require(!vals.empty(), errc::config, "empty c criterion vector");
    Eigen::VectorXd v(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) v(i) = vals[i];
    return Criterion::c(std::move(v));
  }
  fail(errc::config,
       "unknown criterion '" + text + "' (expected D, A, or c:[v1,...,vp])");
}

std::string Criterion::name() const {
  switch (kind) {
    case CriterionKind::D: return "D";
    case CriterionKind::A: return "A";
    case CriterionKind::c: {
      std::ostringstream os;
      os << "c:[";
      for (int i = 0; i < cvec.size(); ++i) {
        if (i) os << ",";
        os << cvec(i);
      }
      os << "]";
      return os.str();
    }
  }
  return "?";
}

void validate_design(const ModelSpec& spec, const Design& design) {
  require(design.d() >= 1, errc::invalid_argument, "design needs support");
  require(design.weights.size() == design.d(), errc::invalid_argument,
          "design weight/support length mismatch");
  std::set<int> seen;
  for (int idx : design.support) {
    require(idx >= 0 && idx < spec.n_candidates(), errc::invalid_argument,
            "design support index out of candidate range");
    require(seen.insert(idx).second, errc::invalid_argument,
            "design support indices must be distinct");
  }
  for (int i = 0; i < design.weights.size(); ++i) {
    require(design.weights(i) >= 0.0, errc::invalid_argument,
            "design weights must be nonnegative");
  }
  require(std::abs(design.weights.sum() - 1.0) <= 1e-12,
          errc::invalid_argument, "design weights must sum to one");
}

InfoMatrix info_matrix(const ModelSpec& spec, const Design& design) {
  validate_design(spec, design);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(spec.p, spec.p);
  for (int i = 0; i < design.d(); ++i) {
    Eigen::VectorXd f = spec.feature(design.support[i]);
    m.noalias() += design.weights(i) * f * f.transpose();
  }
  // Exact symmetry by construction up to roundoff; enforce it.
  m = 0.5 * (m + m.transpose()).eval();
  return InfoMatrix{std::move(m), InfoScale::normalized};
}

namespace {

// Factorization helper shared by the criterion/sensitivity routines.
// Solves with LDLT and flags effective singularity.
struct Factorized {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  bool singular = false;
  double log_det = 0.0;

  explicit Factorized(const Eigen::MatrixXd& m) : ldlt(m) {
    if (ldlt.info() != Eigen::Success) {
      singular = true;
      return;
    }
    const auto& d = ldlt.vectorD();
    double dmax = d.maxCoeff();
    if (!(dmax > 0.0)) {
      singular = true;
      return;
    }
    for (int i = 0; i < d.size(); ++i) {
      if (!(d(i) > dmax * 1e-13)) {
        singular = true;
        return;
      }
      log_det += std::log(d(i));
    }
  }
};

}  // namespace

double criterion_value(const Criterion& crit, const InfoMatrix& info) {
  const Eigen::MatrixXd& m = info.m;
  require(m.rows() == m.cols() && m.rows() >= 1, errc::invalid_argument,
          "information matrix must be square");
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 *
              std::max(1.0, m.cwiseAbs().maxCoeff()),
          errc::invalid_argument, "information matrix must be symmetric");
  const int p = static_cast<int>(m.rows());
  Factorized fac(m);
  switch (crit.kind) {
    case CriterionKind::D:
      if (fac.singular) return 0.0;
      return std::exp(fac.log_det / p);
    case CriterionKind::A: {
      require(!fac.singular, errc::singular_information,
              "A criterion needs a nonsingular information matrix");
      double tr = fac.ldlt.solve(Eigen::MatrixXd::Identity(p, p)).trace();
      return 1.0 / tr;
    }
    case CriterionKind::c: {
      require(!fac.singular, errc::singular_information,
              "c criterion needs a nonsingular information matrix");
      require(crit.cvec.size() == p, errc::invalid_argument,
              "c vector length must equal parameter count");
      double quad = crit.cvec.dot(fac.ldlt.solve(crit.cvec));
      return 1.0 / quad;
    }
  }
  return 0.0;
}

namespace {

// Shared implementation: sensitivities of psi = 1/Psi toward each
// requested candidate, computed from one factorization of M.
Eigen::VectorXd sensitivities_impl(const Criterion& crit,
                                   const ModelSpec& spec,
                                   const Design& design,
                                   const std::vector<int>& candidates) {
  InfoMatrix info = info_matrix(spec, design);
  Factorized fac(info.m);
  require(!fac.singular, errc::singular_information,
          "sensitivity needs a nonsingular information matrix");
  const int p = spec.p;
  Eigen::VectorXd out(candidates.size());
  switch (crit.kind) {
    case CriterionKind::D: {
      double det_pow = std::exp(-fac.log_det / p);  // det(M)^{-1/p}
      for (size_t i = 0; i < candidates.size(); ++i) {
        Eigen::VectorXd f = spec.feature(candidates[i]);
        double dx = f.dot(fac.ldlt.solve(f));
        out(i) = det_pow * (p - dx) / p;
      }
      break;
    }
    case CriterionKind::A: {
      Eigen::MatrixXd minv = fac.ldlt.solve(Eigen::MatrixXd::Identity(p, p));
      double tr = minv.trace();
      Eigen::MatrixXd minv2 = minv * minv;
      for (size_t i = 0; i < candidates.size(); ++i) {
        Eigen::VectorXd f = spec.feature(candidates[i]);
        out(i) = tr - f.dot(minv2 * f);
      }
      break;
    }
    case CriterionKind::c: {
      require(crit.cvec.size() == p, errc::invalid_argument,
              "c vector length must equal parameter count");
      Eigen::VectorXd minv_c = fac.ldlt.solve(crit.cvec);
      double quad = crit.cvec.dot(minv_c);
      for (size_t i = 0; i < candidates.size(); ++i) {
        Eigen::VectorXd f = spec.feature(candidates[i]);
        double t = f.dot(minv_c);
        out(i) = quad - t * t;
      }
      break;
    }
  }
  return out;
}

// psi(M) > 0 used as the certificate normalizer.
double psi_value(const Criterion& crit, const ModelSpec& spec,
                 const Design& design) {
  double value = criterion_value(crit, info_matrix(spec, design));
  require(value > 0.0, errc::singular_information,
          "certificate needs a nonsingular design");
  return 1.0 / value;
}

}  // namespace

double sensitivity(const Criterion& crit, const ModelSpec& spec,
                   const Design& design, int candidate) {
  require(candidate >= 0 && candidate < spec.n_candidates(),
          errc::invalid_argument, "candidate index out of range");
  return sensitivities_impl(crit, spec, design, {candidate})(0);
}

Eigen::VectorXd sensitivity_all(const Criterion& crit, const ModelSpec& spec,
                                const Design& design) {
  std::vector<int> all(spec.n_candidates());
  for (int i = 0; i < spec.n_candidates(); ++i) all[i] = i;
  return sensitivities_impl(crit, spec, design, all);
}

Certificate get_certificate(const Criterion& crit, const ModelSpec& spec,
                            const Design& design, double tol) {
  Eigen::VectorXd phi = sensitivity_all(crit, spec, design);
  double psi = psi_value(crit, spec, design);
  Certificate cert;
  int argmin = 0;
  double minval = phi(0);
  for (int i = 1; i < phi.size(); ++i) {
    if (phi(i) < minval) {
      minval = phi(i);
      argmin = i;
    }
  }
  cert.worst_violation = minval / psi;
  cert.worst_point = argmin;
  cert.optimal = cert.worst_violation >= -tol;
  return cert;
}

}  // namespace oadlab
