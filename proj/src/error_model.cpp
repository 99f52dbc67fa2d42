#include "oadlab/error_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "oadlab/numerics.hpp"

namespace oadlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

double student_t_log_norm_const(double v) {
  return std::lgamma(0.5 * (v + 1.0)) - std::lgamma(0.5 * v) -
         0.5 * std::log(v * kPi);
}

}  // namespace

ErrorModel ErrorModel::normal() { return ErrorModel(ErrorFamily::normal, 0.0); }

ErrorModel ErrorModel::student_t(double v) {
  require(v > 0.0, errc::invalid_argument, "student-t shape must be positive");
  return ErrorModel(ErrorFamily::student_t, v);
}

ErrorModel ErrorModel::gamma_hyperbola(double v) {
  require(v > 0.0, errc::invalid_argument,
          "gamma-hyperbola shape must be positive");
  return ErrorModel(ErrorFamily::gamma_hyperbola, v);
}

ErrorModel ErrorModel::parse(const std::string& name) {
  if (name == "normal") return ErrorModel::normal();
  auto colon = name.find(':');
  std::string head = name.substr(0, colon);
  if ((head == "str" || head == "ghr") && colon != std::string::npos) {
    double v = 0.0;
    try {
      size_t used = 0;
      v = std::stod(name.substr(colon + 1), &used);
      require(used == name.size() - colon - 1, errc::config,
              "trailing junk in error model name");
    } catch (const OadError&) {
      throw;
    } catch (const std::exception&) {
      fail(errc::config, "error model '" + name + "' needs a decimal shape");
    }
    return head == "str" ? ErrorModel::student_t(v)
                         : ErrorModel::gamma_hyperbola(v);
  }
  fail(errc::config, "unknown error model '" + name +
                         "' (expected normal, str:v, or ghr:v)");
}

std::string ErrorModel::name() const {
  auto fmt_shape = [this]() {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v_);
    return std::string(buf);
  };
  switch (family_) {
    case ErrorFamily::normal: return "normal";
    case ErrorFamily::student_t: return "str:" + fmt_shape();
    case ErrorFamily::gamma_hyperbola: return "ghr:" + fmt_shape();
  }
  return "unknown";
}

double ErrorModel::log_density(double eps, double a) const {
  switch (family_) {
    case ErrorFamily::normal:
      return -0.5 * eps * eps - 0.5 * std::log(2.0 * kPi);
    case ErrorFamily::student_t:
      return student_t_log_norm_const(v_) -
             0.5 * (v_ + 1.0) * std::log1p(eps * eps / v_);
    case ErrorFamily::gamma_hyperbola:
      // Conditional on a; the a-only normalizer is location-free and
      // dropped (irrelevant to estimation and derivative checks).
      return -2.0 * a * std::cosh(eps);
  }
  return 0.0;
}

double ErrorModel::log_density_derivative(int k, double eps, double a) const {
  require(k >= 1 && k <= 5, errc::invalid_argument,
          "log-density derivative order must be in 1..5");
  switch (family_) {
    case ErrorFamily::normal:
      if (k == 1) return eps;
      if (k == 2) return -1.0;
      return 0.0;
    case ErrorFamily::student_t: {
      const double v = v_;
      const double q = v + eps * eps;
      switch (k) {
        case 1: return (v + 1.0) * eps / q;
        case 2: return -(v + 1.0) * (v - eps * eps) / (q * q);
        case 3: {
          double e2 = eps * eps;
          return -2.0 * eps * (v + 1.0) * (3.0 * v - e2) / (q * q * q);
        }
        case 4: {
          double e2 = eps * eps;
          return 6.0 * (v + 1.0) * (v * v - 6.0 * v * e2 + e2 * e2) /
                 (q * q * q * q);
        }
        case 5: {
          double e2 = eps * eps;
          return 24.0 * eps * (v + 1.0) *
                 (5.0 * v * v - 10.0 * v * e2 + e2 * e2) /
                 (q * q * q * q * q);
        }
      }
      return 0.0;
    }
    case ErrorFamily::gamma_hyperbola:
      // Derivatives in the location alternate with period two:
      // odd k -> 2a sinh(eps), even k -> -2a cosh(eps).
      return (k % 2 == 1) ? 2.0 * a * std::sinh(eps)
                          : -2.0 * a * std::cosh(eps);
  }
  return 0.0;
}

double ErrorModel::log_density_derivative(int k, const ErrorDraw& draw) const {
  if (has_ancillary()) {
    require(draw.ancillary.has_value(), errc::data_shape,
            "gamma-hyperbola draws need an ancillary value");
    return log_density_derivative(k, draw.epsilon, *draw.ancillary);
  }
  require(!draw.ancillary.has_value(), errc::data_shape,
          "unexpected ancillary value for " + name());
  return log_density_derivative(k, draw.epsilon);
}

ErrorDraw ErrorModel::draw(Stream& stream) const {
  ErrorDraw d;
  switch (family_) {
    case ErrorFamily::normal:
      d.epsilon = stream.normal();
      break;
    case ErrorFamily::student_t:
      d.epsilon = stream.student_t(v_);
      break;
    case ErrorFamily::gamma_hyperbola: {
      double z1 = stream.gamma(v_);
      double z2 = stream.gamma(v_);
      d.epsilon = 0.5 * std::log(z1 / z2);
      d.ancillary = std::sqrt(z1 * z2);
      break;
    }
  }
  return d;
}

std::vector<ErrorDraw> ErrorModel::sample(long n, Stream& stream) const {
  require(n >= 0, errc::invalid_argument, "sample count must be nonnegative");
  std::vector<ErrorDraw> out;
  out.reserve(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) out.push_back(draw(stream));
  return out;
}

namespace {

ErrorMoments student_t_moments(const ErrorModel& model) {
  const double v = model.shape();
  const double log_c = student_t_log_norm_const(v);
  auto density = [&](double eps) {
    return std::exp(log_c - 0.5 * (v + 1.0) * std::log1p(eps * eps / v));
  };
  auto expect = [&](auto&& g) {
    return integrate_real_line(
        [&](double eps) { return g(eps) * density(eps); }, 1e-11);
  };
  auto d = [&](int k, double eps) {
    return model.log_density_derivative(k, eps);
  };
  ErrorMoments m;
  double e2 = expect([&](double eps) { return d(2, eps); });
  m.mu = -e2;
  m.nu20 = expect([&](double eps) { return d(1, eps) * d(1, eps); });
  m.nu02 = expect([&](double eps) {
             double r = d(2, eps) - e2;
             return r * r;
           });
  m.nu11 = expect([&](double eps) { return d(1, eps) * (d(2, eps) - e2); });
  m.mu3 = expect([&](double eps) { return d(3, eps); });
  m.mu4 = expect([&](double eps) { return d(4, eps); });
  m.gamma_sq = (m.nu20 * m.nu02 - m.nu11 * m.nu11) / std::pow(m.nu20, 3);
  return m;
}

ErrorMoments gamma_hyperbola_moments(const ErrorModel& model) {
  // The pair (eps, a) is equivalent to two independent Gamma(v, 1)
  // variates z1 = a e^eps, z2 = a e^{-eps}; expectations reduce to the
  // product gamma measure, integrated with a generalized Gauss-Laguerre
  // rule (exact here: the integrands are low-degree polynomials in z).
  const double v = model.shape();
  const auto rule = gauss_laguerre(64, v - 1.0);
  const double norm = std::exp(std::lgamma(v));
  auto expect = [&](auto&& g) {
    CompensatedSum sum;
    for (size_t i = 0; i < rule.nodes.size(); ++i) {
      for (size_t j = 0; j < rule.nodes.size(); ++j) {
        double z1 = rule.nodes[i], z2 = rule.nodes[j];
        double eps = 0.5 * std::log(z1 / z2);
        double a = std::sqrt(z1 * z2);
        sum.add(rule.weights[i] * rule.weights[j] * g(eps, a));
      }
    }
    return sum.value() / (norm * norm);
  };
  auto d = [&](int k, double eps, double a) {
    return model.log_density_derivative(k, eps, a);
  };
  ErrorMoments m;
  double e2 = expect([&](double eps, double a) { return d(2, eps, a); });
  m.mu = -e2;
  m.nu20 =
      expect([&](double eps, double a) { return d(1, eps, a) * d(1, eps, a); });
  m.nu02 = expect([&](double eps, double a) {
             double r = d(2, eps, a) - e2;
             return r * r;
           });
  m.nu11 = expect(
      [&](double eps, double a) { return d(1, eps, a) * (d(2, eps, a) - e2); });
  m.mu3 = expect([&](double eps, double a) { return d(3, eps, a); });
  m.mu4 = expect([&](double eps, double a) { return d(4, eps, a); });
  m.gamma_sq = (m.nu20 * m.nu02 - m.nu11 * m.nu11) / std::pow(m.nu20, 3);
  return m;
}

}  // namespace

ErrorMoments compute_moments(const ErrorModel& model) {
  ErrorMoments m;
  switch (model.family()) {
    case ErrorFamily::normal:
      m.mu = 1.0;
      m.nu20 = 1.0;
      m.nu02 = 0.0;
      m.nu11 = 0.0;
      m.mu3 = 0.0;
      m.mu4 = 0.0;
      m.gamma_sq = 0.0;
      return m;
    case ErrorFamily::student_t:
      m = student_t_moments(model);
      break;
    case ErrorFamily::gamma_hyperbola:
      m = gamma_hyperbola_moments(model);
      break;
  }
  require(std::isfinite(m.mu) && m.mu > 0.0, errc::moment_computation,
          "expected information must be positive for " + model.name());
  require(std::isfinite(m.gamma_sq) && m.gamma_sq >= -1e-12,
          errc::moment_computation,
          "curvature computation failed for " + model.name());
  m.gamma_sq = std::max(0.0, m.gamma_sq);
  return m;
}

const ErrorMoments& ErrorModel::moments() const {
  if (cached_moments_ != nullptr) return *cached_moments_;
  static std::mutex cache_mutex;
  static std::map<std::string, ErrorMoments> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(name());
  if (it == cache.end()) {
    it = cache.emplace(name(), compute_moments(*this)).first;
  }
  cached_moments_ = &it->second;
  return *cached_moments_;
}

namespace {

// Log likelihood, score and observed information of a location buffer.
struct BufferEval {
  double score = 0.0;
  double info = 0.0;
};

BufferEval eval_buffer(const ErrorModel& model, const std::vector<double>& ys,
                       const std::vector<double>& as, double eta) {
  BufferEval ev;
  const bool anc = model.has_ancillary();
  for (size_t j = 0; j < ys.size(); ++j) {
    double a = anc ? as[j] : 0.0;
    ev.score += model.log_density_derivative(1, ys[j] - eta, a);
    ev.info -= model.log_density_derivative(2, ys[j] - eta, a);
  }
  return ev;
}

double buffer_loglik(const ErrorModel& model, const std::vector<double>& ys,
                     const std::vector<double>& as, double eta) {
  double ll = 0.0;
  const bool anc = model.has_ancillary();
  for (size_t j = 0; j < ys.size(); ++j) {
    ll += model.log_density(ys[j] - eta, anc ? as[j] : 0.0);
  }
  return ll;
}

double log_sum_exp(const std::vector<double>& terms) {
  double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

}  // namespace

LocationFit ErrorModel::fit_location(const std::vector<double>& ys,
                                     const std::vector<double>& ancillaries,
                                     std::optional<double> warm_start) const {
  require(!ys.empty(), errc::estimation, "empty buffer in location fit");
  if (has_ancillary()) {
    require(ancillaries.size() == ys.size(), errc::data_shape,
            "each gamma-hyperbola response needs an ancillary value");
  } else {
    require(ancillaries.empty() || ancillaries.size() == ys.size(),
            errc::data_shape, "unexpected ancillary buffer");
  }

  LocationFit fit;
  const size_t n = ys.size();

  if (family_ == ErrorFamily::normal) {
    double sum = 0.0;
    for (double y : ys) sum += y;
    fit.eta_hat = sum / static_cast<double>(n);
    fit.info = static_cast<double>(n);
    fit.converged = true;
    return fit;
  }

  if (family_ == ErrorFamily::gamma_hyperbola) {
    // Closed form: the score 2 sum a_j sinh(y_j - eta) = 0 solves to
    // eta = (1/2) log( sum a_j e^{y_j} / sum a_j e^{-y_j} ), evaluated in
    // log space for overflow safety. The log likelihood is strictly
    // concave in eta, so this is the unique MLE.
    std::vector<double> plus(n), minus(n);
    for (size_t j = 0; j < n; ++j) {
      require(ancillaries[j] > 0.0, errc::data_shape,
              "gamma-hyperbola ancillaries must be positive");
      plus[j] = std::log(ancillaries[j]) + ys[j];
      minus[j] = std::log(ancillaries[j]) - ys[j];
    }
    fit.eta_hat = 0.5 * (log_sum_exp(plus) - log_sum_exp(minus));
    fit.info = 0.0;
    for (size_t j = 0; j < n; ++j) {
      fit.info += 2.0 * ancillaries[j] * std::cosh(ys[j] - fit.eta_hat);
    }
    fit.converged = true;
    return fit;
  }

  // Student-t: safeguarded Newton on the score with a bisection fallback
  // on [min y, max y].
  double lo = *std::min_element(ys.begin(), ys.end());
  double hi = *std::max_element(ys.begin(), ys.end());
  if (lo == hi) {
    fit.eta_hat = lo;
    fit.info = std::max(0.0, eval_buffer(*this, ys, ancillaries, lo).info);
    fit.converged = true;
    return fit;
  }

  std::vector<double> sorted(ys);
  std::sort(sorted.begin(), sorted.end());
  double median = (n % 2 == 1)
                      ? sorted[n / 2]
                      : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  double eta;
  if (n <= 5) {
    // Small heavy-tailed buffers can be multimodal (especially Cauchy):
    // scan the log likelihood on a 200-point grid over the bracket and
    // seed Newton at the best mode; likelihood ties break toward the
    // buffer median.
    constexpr int kGrid = 200;
    double best_ll = -std::numeric_limits<double>::infinity();
    double best_x = median;
    for (int g = 0; g < kGrid; ++g) {
      double x = lo + (hi - lo) * (g + 0.5) / kGrid;
      double ll = buffer_loglik(*this, ys, ancillaries, x);
      bool better = ll > best_ll + 1e-12;
      bool tie = std::abs(ll - best_ll) <= 1e-12 &&
                 std::abs(x - median) < std::abs(best_x - median);
      if (better || tie) {
        best_ll = ll;
        best_x = x;
      }
    }
    eta = best_x;
  } else {
    eta = warm_start.value_or(median);
    if (!(eta >= lo && eta <= hi)) eta = median;
  }

  // Maintain the invariant score(blo) >= 0 >= score(bhi); the score is
  // positive left of every local maximum at the bracket edges because all
  // residuals have one sign there.
  double blo = lo, bhi = hi;
  bool converged = false;
  int it = 0;
  for (; it < 200; ++it) {
    BufferEval ev = eval_buffer(*this, ys, ancillaries, eta);
    if (std::abs(ev.score) < 1e-12 * static_cast<double>(n)) {
      converged = true;
      break;
    }
    if (ev.score > 0.0) {
      blo = std::max(blo, eta);
    } else {
      bhi = std::min(bhi, eta);
    }
    double next;
    if (ev.info > 0.0) {
      next = eta + ev.score / ev.info;
      if (!(next > blo && next < bhi)) next = 0.5 * (blo + bhi);
    } else {
      next = 0.5 * (blo + bhi);
    }
    if (std::abs(next - eta) < 1e-13 * std::max(1.0, std::abs(eta))) {
      eta = next;
      converged = true;
      break;
    }
    eta = next;
    if (bhi - blo < 1e-13 * std::max(1.0, std::abs(eta))) {
      converged = true;
      break;
    }
  }
  fit.eta_hat = eta;
  fit.info = std::max(0.0, eval_buffer(*this, ys, ancillaries, eta).info);
  fit.converged = converged;
  fit.iterations = it;
  if (!converged) {
    fail(errc::estimation,
         "location MLE failed to converge for " + name() + " buffer of size " +
             std::to_string(n));
  }
  return fit;
}

}  // namespace oadlab
