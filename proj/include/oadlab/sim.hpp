#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/fod.hpp"
#include "oadlab/model.hpp"
#include "oadlab/road.hpp"

namespace oadlab {

enum class Arm { ROAD, FOD };

std::string arm_name(Arm arm);
Arm parse_arm(const std::string& name);

struct PowerBlock {
  Eigen::VectorXd c;
  double C0 = 0.0;
  double alpha = 0.05;
};

struct SimConfig {
  ModelSpec spec;
  ErrorModel err = ErrorModel::normal();
  Criterion crit = Criterion::D();
  RoadConfig road;  // k and q_floor; total_n is set per grid point
  Eigen::VectorXd beta;
  std::vector<long> n_grid;
  long replicates = 10000;
  std::uint64_t master_seed = 0;
  std::vector<Arm> arms = {Arm::ROAD, Arm::FOD};
  std::optional<PowerBlock> power_block;
};

// Monte Carlo summaries for one (arm, n) cell. The criterion value of
// the observed information is tracked on two scales: the homogeneous
// criterion scale used by the expansion checks, and the reporting scale
// of the figures (determinant^(1/2) for D, identical otherwise).
struct ArmCell {
  Arm arm = Arm::ROAD;
  long n = 0;
  long completed = 0;
  long failures = 0;
  double psi_mean = 0.0;
  double psi_se = 0.0;
  double psi_fig_mean = 0.0;
  double psi_fig_se = 0.0;
  Eigen::MatrixXd mse;       // empirical MSE matrix of beta_hat
  double psi_mse_inv = 0.0;  // criterion applied to MSE^{-1}
  double reject_rate = 0.0;  // present only with a power block
  double reject_se = 0.0;
  bool has_power = false;
};

// Efficiency of the adaptive arm relative to the fixed arm at one n.
struct EffCell {
  long n = 0;
  double eff_ci = 0.0;     // ratio of psi_fig means
  double eff_ci_se = 0.0;  // delta-method standard error
  double eff_umse = 0.0;   // ratio of criterion values of MSE^{-1}
};

struct SimResult {
  std::vector<ArmCell> cells;
  std::vector<EffCell> eff;  // filled when both arms were run
  std::uint64_t master_seed = 0;
  long replicates = 0;
  double wall_seconds = 0.0;
  std::string model_name;
  std::string error_name;
  std::string criterion_name;
};

// Paired Monte Carlo study over config.n_grid. Replicate r of sample
// size n uses the RNG stream derived from (master_seed, arm, n, r), so
// results are identical for any worker count. When both arms run, a
// replicate failing in either arm is excluded from both so every ratio
// compares matched replicate sets; more than 1% exclusions at any n is
// an error.
SimResult run_sim(const SimConfig& config, int workers = 0);

// Expansion check of the expected criterion value of the observed
// information at one n against mu * h * Psi* * n (adaptive arm) and
// mu * h * Psi* * (n - gamma^2 R*) (fixed arm).
struct TheoremCheck {
  long n = 0;
  double mu = 0.0;
  double h = 0.0;
  double gamma_sq = 0.0;
  double R_star = 0.0;
  double psi_star = 0.0;
  double S_star = 0.0;
  double lhs_road = 0.0, lhs_road_se = 0.0;
  double lhs_fod = 0.0, lhs_fod_se = 0.0;
  double rhs_road = 0.0;
  double rhs_fod = 0.0;
  double z_road = 0.0;
  double z_fod = 0.0;
  double ratio = 0.0;     // lhs_road / lhs_fod
  double ratio_se = 0.0;  // delta-method standard error
};

TheoremCheck theorem3_check(const SimConfig& config, long n, int workers = 0);

struct PowerPoint {
  Arm arm = Arm::ROAD;
  long n = 0;
  double power = 0.0;
  double se = 0.0;
  long completed = 0;
};

struct PowerCurve {
  std::vector<PowerPoint> points;
  double target = 0.0;
  // Smallest n reaching the target power per arm, linearly interpolated
  // between grid points; NaN when the target is never reached.
  double n_road = std::numeric_limits<double>::quiet_NaN();
  double n_fod = std::numeric_limits<double>::quiet_NaN();
};

PowerCurve power_curve(const SimConfig& config, double target_power = 0.8,
                       int workers = 0);

enum class EmitFormat { csv, json };

// Long-format export: arm,n,metric,value,stderr,replicates,seed.
// Efficiency metrics appear on the adaptive arm's rows (the fixed arm
// lists them as the 1.0 baseline). Writes are atomic (temp + rename).
void emit_results(const SimResult& result, const std::string& path,
                  EmitFormat format);

}  // namespace oadlab
