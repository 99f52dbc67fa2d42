#include "oadlab/sim.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "oadlab/inference.hpp"
#include "oadlab/numerics.hpp"
#include "oadlab/rng.hpp"

namespace oadlab {

std::string arm_name(Arm arm) { return arm == Arm::ROAD ? "ROAD" : "FOD"; }

Arm parse_arm(const std::string& name) {
  if (name == "ROAD") return Arm::ROAD;
  if (name == "FOD") return Arm::FOD;
  fail(errc::invalid_argument, "unknown arm '" + name + "'");
}

namespace {

void validate_config(const SimConfig& config) {
  require(config.replicates >= 1, errc::config,
          "replicates must be positive");
  require(!config.n_grid.empty(), errc::config, "empty sample-size grid");
  require(!config.arms.empty(), errc::config, "no arms requested");
  require(config.beta.size() == config.spec.p, errc::config,
          "beta length must equal the feature dimension");
  if (config.power_block) {
    require(config.power_block->c.size() == config.spec.p, errc::config,
            "power contrast length must equal the feature dimension");
    require(config.power_block->alpha > 0.0 && config.power_block->alpha < 1.0,
            errc::config, "power alpha must lie in (0, 1)");
  }
  for (size_t i = 0; i + 1 < config.arms.size(); ++i) {
    for (size_t j = i + 1; j < config.arms.size(); ++j) {
      require(config.arms[i] != config.arms[j], errc::config,
              "duplicate arm in config");
    }
  }
}

// Per-replicate observables; devs are kept so the MSE matrix can be
// aggregated in a fixed order afterwards.
struct ReplicateRecord {
  bool ok = false;
  double psi = 0.0;
  double psi_fig = 0.0;
  bool reject = false;
  Eigen::VectorXd dev;
};

double figure_scale_value(const Criterion& crit, const InfoMatrix& info) {
  if (crit.kind != CriterionKind::D) return criterion_value(crit, info);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info.m);
  const auto& diag = ldlt.vectorD();
  double dmax = diag.maxCoeff();
  require(ldlt.info() == Eigen::Success && dmax > 0.0 &&
              diag.minCoeff() > dmax * 1e-13,
          errc::singular_information,
          "singular observed information in the determinant scale");
  double log_det = 0.0;
  for (int i = 0; i < diag.size(); ++i) log_det += std::log(diag(i));
  return std::exp(0.5 * log_det);
}

ReplicateRecord one_replicate(const SimConfig& config, const FodResult& fod,
                              const ExactDesign& exact, Arm arm, long n,
                              long r) {
  Stream stream = Stream::derive(
      config.master_seed,
      {static_cast<std::uint64_t>(arm == Arm::ROAD ? 1 : 2),
       static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)});
  ReplicateRecord rec;
  try {
    SampleData data;
    if (arm == Arm::ROAD) {
      RoadConfig cfg = config.road;
      cfg.total_n = n;
      ExperimentState state = run_road(config.spec, fod, config.err,
                                       config.crit, cfg, stream, config.beta);
      data = from_state(state);
    } else {
      data.support = exact.support;
      data.ys.resize(exact.support.size());
      data.ancillaries.resize(exact.support.size());
      for (size_t i = 0; i < exact.support.size(); ++i) {
        double eta = config.beta.dot(config.spec.feature(exact.support[i]));
        for (int rep = 0; rep < exact.counts(static_cast<int>(i)); ++rep) {
          ErrorDraw draw = config.err.draw(stream);
          data.ys[i].push_back(eta + draw.epsilon);
          if (draw.ancillary) data.ancillaries[i].push_back(*draw.ancillary);
        }
      }
    }
    FitResult fit = fit_mle(config.spec, data, config.err);
    rec.psi = criterion_value(config.crit, fit.J);
    rec.psi_fig = figure_scale_value(config.crit, fit.J);
    rec.dev = fit.beta_hat - config.beta;
    if (config.power_block) {
      TestResult tr = chi2_test(fit, config.power_block->c,
                                config.power_block->C0,
                                config.power_block->alpha);
      rec.reject = tr.reject;
    }
    rec.ok = true;
  } catch (const OadError&) {
    rec.ok = false;
  }
  return rec;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Two-pass compensated mean / standard error of the mean.
template <typename Get>
MeanSe mean_se(const std::vector<ReplicateRecord>& recs,
               const std::vector<char>& keep, Get&& get) {
  CompensatedSum sum;
  long count = 0;
  for (size_t r = 0; r < recs.size(); ++r) {
    if (!keep[r]) continue;
    sum.add(get(recs[r]));
    ++count;
  }
  MeanSe out;
  if (count == 0) return out;
  out.mean = sum.value() / count;
  CompensatedSum sq;
  for (size_t r = 0; r < recs.size(); ++r) {
    if (!keep[r]) continue;
    double dev = get(recs[r]) - out.mean;
    sq.add(dev * dev);
  }
  if (count > 1) {
    out.se = std::sqrt(sq.value() / (count - 1) / count);
  }
  return out;
}

unsigned resolve_workers(int workers) {
  if (workers > 0) return static_cast<unsigned>(workers);
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace

SimResult run_sim(const SimConfig& config, int workers) {
  validate_config(config);
  auto t0 = std::chrono::steady_clock::now();

  FodResult fod = solve_fod(config.spec, config.crit);
  const int d = fod.design.d();
  for (long n : config.n_grid) {
    require(n >= static_cast<long>(config.road.k) * d, errc::config,
            "every n must cover the initialization schedule (k*d)");
  }

  SimResult result;
  result.master_seed = config.master_seed;
  result.replicates = config.replicates;
  result.model_name = config.spec.name;
  result.error_name = config.err.name();
  result.criterion_name = config.crit.name();

  const unsigned pool_size = resolve_workers(workers);
  const bool paired = config.arms.size() == 2;

  for (long n : config.n_grid) {
    ExactDesign exact = round_to_exact(fod.design, n);
    std::vector<std::vector<ReplicateRecord>> per_arm(config.arms.size());
    for (auto& v : per_arm) v.resize(config.replicates);

    std::atomic<long> next{0};
    auto worker = [&]() {
      for (;;) {
        long r = next.fetch_add(1);
        if (r >= config.replicates) return;
        for (size_t a = 0; a < config.arms.size(); ++a) {
          per_arm[a][r] =
              one_replicate(config, fod, exact, config.arms[a], n, r);
        }
      }
    };
    std::vector<std::thread> pool;
    unsigned threads =
        std::min<unsigned>(pool_size,
                           static_cast<unsigned>(std::max<long>(
                               1, config.replicates)));
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    // A replicate failing in any arm is excluded everywhere at this n so
    // that ratios always compare matched replicate sets.
    std::vector<char> keep(config.replicates, 1);
    for (long r = 0; r < config.replicates; ++r) {
      for (size_t a = 0; a < config.arms.size(); ++a) {
        if (!per_arm[a][r].ok) keep[r] = 0;
      }
    }
    long kept = 0;
    for (char k : keep) kept += k;
    require(kept * 100 >= config.replicates * 99, errc::harness,
            "more than 1% of replicates failed at n = " + std::to_string(n));

    std::vector<ArmCell> cells_here;
    for (size_t a = 0; a < config.arms.size(); ++a) {
      const auto& recs = per_arm[a];
      ArmCell cell;
      cell.arm = config.arms[a];
      cell.n = n;
      cell.completed = kept;
      for (long r = 0; r < config.replicates; ++r) {
        if (!recs[r].ok) ++cell.failures;
      }
      MeanSe psi = mean_se(recs, keep, [](const ReplicateRecord& r) {
        return r.psi;
      });
      MeanSe fig = mean_se(recs, keep, [](const ReplicateRecord& r) {
        return r.psi_fig;
      });
      cell.psi_mean = psi.mean;
      cell.psi_se = psi.se;
      cell.psi_fig_mean = fig.mean;
      cell.psi_fig_se = fig.se;

      const int p = config.spec.p;
      cell.mse = Eigen::MatrixXd::Zero(p, p);
      std::vector<CompensatedSum> acc(p * p);
      for (long r = 0; r < config.replicates; ++r) {
        if (!keep[r]) continue;
        const Eigen::VectorXd& dev = recs[r].dev;
        for (int i = 0; i < p; ++i) {
          for (int j = 0; j < p; ++j) {
            acc[i * p + j].add(dev(i) * dev(j));
          }
        }
      }
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          cell.mse(i, j) = acc[i * p + j].value() / kept;
        }
      }
      Eigen::LDLT<Eigen::MatrixXd> mse_ldlt(cell.mse);
      if (mse_ldlt.info() == Eigen::Success &&
          mse_ldlt.vectorD().minCoeff() >
              mse_ldlt.vectorD().maxCoeff() * 1e-13) {
        Eigen::MatrixXd inv =
            mse_ldlt.solve(Eigen::MatrixXd::Identity(p, p));
        inv = 0.5 * (inv + inv.transpose()).eval();
        cell.psi_mse_inv = criterion_value(
            config.crit, InfoMatrix{inv, InfoScale::total_observed});
      }
      if (config.power_block) {
        cell.has_power = true;
        MeanSe rej = mean_se(recs, keep, [](const ReplicateRecord& r) {
          return r.reject ? 1.0 : 0.0;
        });
        cell.reject_rate = rej.mean;
        cell.reject_se = rej.se;
      }
      cells_here.push_back(std::move(cell));
    }

    if (paired) {
      const ArmCell* road = nullptr;
      const ArmCell* fixed = nullptr;
      for (const auto& cell : cells_here) {
        (cell.arm == Arm::ROAD ? road : fixed) = &cell;
      }
      EffCell eff;
      eff.n = n;
      eff.eff_ci = road->psi_fig_mean / fixed->psi_fig_mean;
      // Independent arms: delta method for the ratio of means.
      double rel_var =
          std::pow(road->psi_fig_se / road->psi_fig_mean, 2) +
          std::pow(fixed->psi_fig_se / fixed->psi_fig_mean, 2);
      eff.eff_ci_se = std::abs(eff.eff_ci) * std::sqrt(rel_var);
      if (fixed->psi_mse_inv > 0.0) {
        eff.eff_umse = road->psi_mse_inv / fixed->psi_mse_inv;
      }
      result.eff.push_back(eff);
    }
    for (auto& cell : cells_here) result.cells.push_back(std::move(cell));
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

TheoremCheck theorem3_check(const SimConfig& config, long n, int workers) {
  SimConfig local = config;
  local.n_grid = {n};
  local.arms = {Arm::ROAD, Arm::FOD};
  SimResult sim = run_sim(local, workers);

  FodResult fod = solve_fod(config.spec, config.crit);
  CurvatureReport rep =
      curvature_report(config.spec, config.crit, fod, config.err, n);
  const double mu = config.err.moments().mu;

  TheoremCheck chk;
  chk.n = n;
  chk.mu = mu;
  chk.h = rep.h;
  chk.gamma_sq = rep.gamma_sq;
  chk.R_star = rep.R_star;
  chk.psi_star = fod.criterion_value;
  chk.S_star = rep.S_star;
  for (const auto& cell : sim.cells) {
    if (cell.arm == Arm::ROAD) {
      chk.lhs_road = cell.psi_mean;
      chk.lhs_road_se = cell.psi_se;
    } else {
      chk.lhs_fod = cell.psi_mean;
      chk.lhs_fod_se = cell.psi_se;
    }
  }
  chk.rhs_road = mu * rep.h * chk.psi_star * static_cast<double>(n);
  chk.rhs_fod = mu * rep.h * chk.psi_star *
                (static_cast<double>(n) - rep.gamma_sq * rep.R_star);
  chk.z_road = (chk.lhs_road - chk.rhs_road) / chk.lhs_road_se;
  chk.z_fod = (chk.lhs_fod - chk.rhs_fod) / chk.lhs_fod_se;
  chk.ratio = chk.lhs_road / chk.lhs_fod;
  double rel_var = std::pow(chk.lhs_road_se / chk.lhs_road, 2) +
                   std::pow(chk.lhs_fod_se / chk.lhs_fod, 2);
  chk.ratio_se = std::abs(chk.ratio) * std::sqrt(rel_var);
  return chk;
}

PowerCurve power_curve(const SimConfig& config, double target_power,
                       int workers) {
  require(config.power_block.has_value(), errc::config,
          "power_curve needs a power block (contrast, C0, alpha)");
  require(target_power > 0.0 && target_power < 1.0, errc::invalid_argument,
          "target power must lie in (0, 1)");
  SimResult sim = run_sim(config, workers);

  PowerCurve curve;
  curve.target = target_power;
  for (const auto& cell : sim.cells) {
    PowerPoint pt;
    pt.arm = cell.arm;
    pt.n = cell.n;
    pt.power = cell.reject_rate;
    pt.se = cell.reject_se;
    pt.completed = cell.completed;
    curve.points.push_back(pt);
  }
  auto interpolate = [&](Arm arm) {
    std::vector<std::pair<long, double>> pts;
    for (const auto& pt : curve.points) {
      if (pt.arm == arm) pts.emplace_back(pt.n, pt.power);
    }
    std::sort(pts.begin(), pts.end());
    if (pts.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (pts.front().second >= target_power) {
      return static_cast<double>(pts.front().first);
    }
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
      double p1 = pts[i].second, p2 = pts[i + 1].second;
      if (p1 < target_power && p2 >= target_power) {
        double t = (target_power - p1) / (p2 - p1);
        return pts[i].first + t * (pts[i + 1].first - pts[i].first);
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  for (Arm arm : config.arms) {
    (arm == Arm::ROAD ? curve.n_road : curve.n_fod) = interpolate(arm);
  }
  return curve;
}

namespace {

struct Row {
  std::string arm;
  long n;
  std::string metric;
  double value;
  double stderr_;
};

std::vector<Row> long_format(const SimResult& result) {
  std::vector<Row> rows;
  const bool paired = !result.eff.empty();
  for (const auto& cell : result.cells) {
    std::string arm = arm_name(cell.arm);
    rows.push_back({arm, cell.n, "psi_j", cell.psi_mean, cell.psi_se});
    rows.push_back(
        {arm, cell.n, "psi_j_fig", cell.psi_fig_mean, cell.psi_fig_se});
    rows.push_back({arm, cell.n, "psi_mse_inv", cell.psi_mse_inv, 0.0});
    if (cell.has_power) {
      rows.push_back(
          {arm, cell.n, "reject_rate", cell.reject_rate, cell.reject_se});
    }
    if (paired) {
      const EffCell* eff = nullptr;
      for (const auto& e : result.eff) {
        if (e.n == cell.n) eff = &e;
      }
      if (cell.arm == Arm::ROAD) {
        rows.push_back({arm, cell.n, "eff_ci", eff->eff_ci, eff->eff_ci_se});
        rows.push_back({arm, cell.n, "eff_umse", eff->eff_umse, 0.0});
      } else {
        rows.push_back({arm, cell.n, "eff_ci", 1.0, 0.0});
        rows.push_back({arm, cell.n, "eff_umse", 1.0, 0.0});
      }
    }
  }
  return rows;
}

void atomic_write(const std::string& path, const std::string& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), errc::io, "cannot open '" + tmp + "' for writing");
    out << contents;
    out.flush();
    require(out.good(), errc::io, "write to '" + tmp + "' failed");
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, errc::io,
          "cannot move results into place at '" + path + "'");
}

std::string format_double(double v) {
  nlohmann::json j = v;  // shortest round-trip representation
  return j.dump();
}

}  // namespace

void emit_results(const SimResult& result, const std::string& path,
                  EmitFormat format) {
  std::vector<Row> rows = long_format(result);
  if (format == EmitFormat::csv) {
    std::string out = "arm,n,metric,value,stderr,replicates,seed\n";
    for (const auto& row : rows) {
      out += row.arm + "," + std::to_string(row.n) + "," + row.metric + "," +
             format_double(row.value) + "," + format_double(row.stderr_) +
             "," + std::to_string(result.replicates) + "," +
             std::to_string(result.master_seed) + "\n";
    }
    atomic_write(path, out);
    return;
  }
  nlohmann::json doc;
  doc["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    doc["rows"].push_back({{"arm", row.arm},
                           {"n", row.n},
                           {"metric", row.metric},
                           {"value", row.value},
                           {"stderr", row.stderr_},
                           {"replicates", result.replicates},
                           {"seed", result.master_seed}});
  }
  doc["metadata"] = {{"model", result.model_name},
                     {"error_model", result.error_name},
                     {"criterion", result.criterion_name},
                     {"replicates", result.replicates},
                     {"seed", result.master_seed},
                     {"wall_seconds", result.wall_seconds}};
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& cell : result.cells) {
    failures.push_back({{"arm", arm_name(cell.arm)},
                        {"n", cell.n},
                        {"failures", cell.failures},
                        {"completed", cell.completed}});
  }
  doc["metadata"]["cells"] = failures;
  atomic_write(path, doc.dump(2) + "\n");
}

}  // namespace oadlab
