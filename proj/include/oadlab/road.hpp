#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/fod.hpp"
#include "oadlab/model.hpp"
#include "oadlab/rng.hpp"

namespace oadlab {

struct RoadConfig {
  int k = 3;             // initial replicates per support point
  double q_floor = 1e-8; // substitute for zero observed information
  long total_n = 0;      // target sample size

  void validate(int d) const;
};

struct HistoryEntry {
  int point = 0;  // position within the stage-1 support (0-based)
  double y = 0.0;
  std::optional<double> ancillary;
};

// Single-owner mutable state of one adaptive experiment. Distinct
// replicates use distinct states and RNG streams; nothing is shared.
struct ExperimentState {
  const ModelSpec* spec = nullptr;
  ErrorModel err = ErrorModel::normal();
  RoadConfig cfg;
  Design design;            // stage-1 continuous design (support, w*)
  std::vector<std::vector<double>> ys;          // per support point
  std::vector<std::vector<double>> ancillaries; // per support point
  Eigen::VectorXd eta_hat;  // per-point location MLE
  Eigen::VectorXd i_a;      // per-point observed information (>= 0)
  Eigen::VectorXd q;        // i_a / mu, floored at q_floor
  double Q = 0.0;           // sum of q
  Eigen::VectorXd omega;    // q / Q
  long j = 0;               // observations recorded so far
  std::vector<HistoryEntry> history;

  int d() const { return design.d(); }
  long initial_phase_length() const {
    return static_cast<long>(cfg.k) * d();
  }
  // Realized exact design (observation counts per support point).
  ExactDesign realized() const;
};

ExperimentState init_state(const ModelSpec& spec, const FodResult& fod,
                           const ErrorModel& err, const RoadConfig& cfg);

// The deterministic initialization schedule: k round-robin passes over
// the support, so step 0..k*d-1 maps to step mod d.
int scheduled_initial_point(const ExperimentState& state, long step);

void record_response(ExperimentState& state, int point, double y,
                     std::optional<double> ancillary = {});

// Recompute eta_hat, i_a, q, Q, omega from the buffers alone. Recording
// keeps these current; a refresh must be a no-op (idempotence check).
void refresh_information(ExperimentState& state);

// Next point under the ancillary-weight design: restrict to support
// points whose realized share omega_i is still below w*_i, and take the
// one minimizing the sensitivity there; ties break toward the lowest
// index. An empty candidate set falls back to the global minimizer.
int next_point(const ExperimentState& state, const Criterion& crit);

ExperimentState run_road(const ModelSpec& spec, const FodResult& fod,
                         const ErrorModel& err, const Criterion& crit,
                         const RoadConfig& cfg, Stream& stream,
                         const Eigen::VectorXd& beta);

}  // namespace oadlab
