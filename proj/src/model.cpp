#include "oadlab/model.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <vector>

namespace oadlab {

namespace {

double int_pow(double base, int e) {
  // Convention: x^0 = 1 for every x, including 0 (constant basis term).
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

void finalize(ModelSpec& spec) {
  const int n = spec.n_candidates();
  spec.p = static_cast<int>(spec.exponents.rows());
  spec.features.resize(n, spec.p);
  for (int i = 0; i < n; ++i) {
    spec.features.row(i) =
        spec.regression_map(spec.candidates.row(i).transpose()).transpose();
  }
  // Identifiability on the region: the Gram matrix over all candidates
  // must be nonsingular (condition-based check).
  Eigen::MatrixXd gram = spec.features.transpose() * spec.features;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
  double smax = svd.singularValues()(0);
  double smin = svd.singularValues()(spec.p - 1);
  require(smin > 1e-12 * std::max(1.0, smax), errc::invalid_dimension,
          "model is not identifiable on its candidate region: singular Gram "
          "matrix for " + spec.name);
  // Candidate points must be distinct (lexicographic sort + adjacent
  // compare keeps this cheap on large factorial grids).
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  auto row_less = [&spec](int a, int b) {
    for (int k = 0; k < spec.s; ++k) {
      if (spec.candidates(a, k) != spec.candidates(b, k)) {
        return spec.candidates(a, k) < spec.candidates(b, k);
      }
    }
    return false;
  };
  std::sort(order.begin(), order.end(), row_less);
  for (int i = 0; i + 1 < n; ++i) {
    if (!row_less(order[i], order[i + 1]) && !row_less(order[i + 1], order[i])) {
      fail(errc::invalid_argument, "duplicate candidate points in " + spec.name);
    }
  }
}

}  // namespace

Eigen::VectorXd ModelSpec::regression_map(const Eigen::VectorXd& x) const {
  require(x.size() == s, errc::invalid_argument,
          "factor vector has wrong length for " + name);
  Eigen::VectorXd f(exponents.rows());
  for (int j = 0; j < exponents.rows(); ++j) {
    double v = 1.0;
    for (int k = 0; k < s; ++k) v *= int_pow(x(k), exponents(j, k));
    f(j) = v;
  }
  return f;
}

ModelSpec build_treatment(int s) {
  require(s >= 1, errc::invalid_dimension, "treatment model requires s >= 1");
  ModelSpec spec;
  spec.family = ModelFamily::treatment;
  spec.s = s;
  spec.name = "treatment:" + std::to_string(s);
  // Candidates: the s unit indicator vectors; features are the indicators
  // themselves (f(x) = x), so p = s and F is the identity.
  spec.candidates = Eigen::MatrixXd::Identity(s, s);
  spec.exponents = Eigen::MatrixXi::Identity(s, s);
  finalize(spec);
  return spec;
}

ModelSpec build_interaction(int s) {
  require(s >= 1, errc::invalid_dimension,
          "interaction model requires s >= 1");
  ModelSpec spec;
  spec.family = ModelFamily::interaction;
  spec.s = s;
  spec.name = "interaction:" + std::to_string(s);
  // Candidates: all 0/1 vectors with at most two coordinates equal to one,
  // including the zero vector; ordered zero, singles, then pairs (i < j).
  const int n = 1 + s + s * (s - 1) / 2;
  spec.candidates = Eigen::MatrixXd::Zero(n, s);
  int row = 1;
  for (int i = 0; i < s; ++i) spec.candidates(row++, i) = 1.0;
  for (int i = 0; i < s; ++i) {
    for (int j = i + 1; j < s; ++j) {
      spec.candidates(row, i) = 1.0;
      spec.candidates(row, j) = 1.0;
      ++row;
    }
  }
  // Basis: (1, x_1..x_s, x_1 x_2, ..., x_{s-1} x_s); p = 1 + s + s(s-1)/2.
  spec.exponents = Eigen::MatrixXi::Zero(n, s);
  row = 1;
  for (int i = 0; i < s; ++i) spec.exponents(row++, i) = 1;
  for (int i = 0; i < s; ++i) {
    for (int j = i + 1; j < s; ++j) {
      spec.exponents(row, i) = 1;
      spec.exponents(row, j) = 1;
      ++row;
    }
  }
  finalize(spec);
  return spec;
}

ModelSpec build_quadratic(int s) {
  require(s >= 1, errc::invalid_dimension, "quadratic model requires s >= 1");
  require(s < 12, errc::candidate_set_too_large,
          "quadratic grid 3^s is too large for s >= 12; supply a custom spec");
  ModelSpec spec;
  spec.family = ModelFamily::quadratic;
  spec.s = s;
  spec.name = "quadratic:" + std::to_string(s);
  // Candidates: the full factorial grid {0, 1/2, 1}^s, first factor slowest.
  long n = 1;
  for (int i = 0; i < s; ++i) n *= 3;
  spec.candidates.resize(n, s);
  static const double kLevels[3] = {0.0, 0.5, 1.0};
  for (long idx = 0; idx < n; ++idx) {
    long rem = idx;
    for (int k = s - 1; k >= 0; --k) {
      spec.candidates(idx, k) = kLevels[rem % 3];
      rem /= 3;
    }
  }
  // Basis: (1, x_1..x_s, x_1^2..x_s^2, x_1 x_2, ..., x_{s-1} x_s).
  const int pcount = 1 + 2 * s + s * (s - 1) / 2;
  spec.exponents = Eigen::MatrixXi::Zero(pcount, s);
  int row = 1;
  for (int i = 0; i < s; ++i) spec.exponents(row++, i) = 1;
  for (int i = 0; i < s; ++i) spec.exponents(row++, i) = 2;
  for (int i = 0; i < s; ++i) {
    for (int j = i + 1; j < s; ++j) {
      spec.exponents(row, i) = 1;
      spec.exponents(row, j) = 1;
      ++row;
    }
  }
  finalize(spec);
  return spec;
}

ModelSpec build_custom_from_json_text(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::config, std::string("custom model JSON parse failure: ") +
                           e.what());
  }
  require(doc.contains("candidates") && doc["candidates"].is_array() &&
              !doc["candidates"].empty(),
          errc::config, "custom model needs a nonempty 'candidates' array");
  require(doc.contains("monomials") && doc["monomials"].is_array() &&
              !doc["monomials"].empty(),
          errc::config, "custom model needs a nonempty 'monomials' array");

  ModelSpec spec;
  spec.family = ModelFamily::custom;
  spec.name = doc.value("name", std::string("custom"));
  const auto& cand = doc["candidates"];
  const auto& mono = doc["monomials"];
  spec.s = static_cast<int>(cand[0].size());
  require(spec.s >= 1, errc::invalid_dimension,
          "custom model candidate points must have at least one factor");
  spec.candidates.resize(cand.size(), spec.s);
  for (size_t i = 0; i < cand.size(); ++i) {
    require(static_cast<int>(cand[i].size()) == spec.s, errc::config,
            "custom model candidate rows must share one length");
    for (int k = 0; k < spec.s; ++k) {
      spec.candidates(static_cast<long>(i), k) = cand[i][k].get<double>();
    }
  }
  spec.exponents.resize(mono.size(), spec.s);
  for (size_t j = 0; j < mono.size(); ++j) {
    require(static_cast<int>(mono[j].size()) == spec.s, errc::config,
            "custom model monomial rows must have one exponent per factor");
    for (int k = 0; k < spec.s; ++k) {
      spec.exponents(static_cast<long>(j), k) = mono[j][k].get<int>();
    }
  }
  finalize(spec);
  return spec;
}

ModelSpec parse_model(const std::string& name) {
  auto colon = name.find(':');
  std::string head = name.substr(0, colon);
  std::string tail =
      colon == std::string::npos ? std::string() : name.substr(colon + 1);
  auto parse_s = [&]() -> int {
    try {
      size_t used = 0;
      int s = std::stoi(tail, &used);
      require(used == tail.size(), errc::config, "trailing junk in model name");
      return s;
    } catch (const OadError&) {
      throw;
    } catch (const std::exception&) {
      fail(errc::config, "model name '" + name + "' needs an integer size, "
                         "e.g. treatment:4");
    }
  };
  if (head == "treatment") return build_treatment(parse_s());
  if (head == "interaction") return build_interaction(parse_s());
  if (head == "quadratic") return build_quadratic(parse_s());
  if (head == "custom") {
    std::ifstream in(tail);
    require(in.good(), errc::io, "cannot open custom model file " + tail);
    std::ostringstream buf;
    buf << in.rdbuf();
    return build_custom_from_json_text(buf.str());
  }
  fail(errc::config, "unknown model '" + name +
                         "' (expected treatment:s, interaction:s, "
                         "quadratic:s, or custom:file.json)");
}

}  // namespace oadlab
