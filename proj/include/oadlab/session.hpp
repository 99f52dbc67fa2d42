#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oadlab/design.hpp"
#include "oadlab/error_model.hpp"
#include "oadlab/fod.hpp"
#include "oadlab/model.hpp"
#include "oadlab/road.hpp"

namespace oadlab {

// One recorded response in a session file. `point` is the 1-based
// position within the stage-1 support (the numbering printed by the
// live command); the ancillary accompanies error models that carry one.
struct Observation {
  int point = 0;
  double y = 0.0;
  std::optional<double> ancillary;
};

struct SessionFile {
  std::string model;        // e.g. "treatment:4"
  std::string criterion;    // e.g. "D"
  std::string error_model;  // e.g. "str:1"
  Design fod;               // stage-1 support (candidate indices) + w*
  RoadConfig road_config;
  std::vector<Observation> observations;
};

SessionFile parse_session_text(const std::string& json_text);
SessionFile load_session(const std::string& path);
std::string session_to_json(const SessionFile& session);

// A session file materialized into a live experiment: the model, error
// model and criterion are parsed, and every recorded observation is
// replayed into the adaptive state. ExperimentState points into `spec`,
// which the unique_ptr keeps at a stable address.
struct LiveSession {
  std::unique_ptr<ModelSpec> spec;
  ErrorModel err = ErrorModel::normal();
  Criterion crit = Criterion::D();
  FodResult fod;
  ExperimentState state;
};

LiveSession open_session(const SessionFile& session);

}  // namespace oadlab
