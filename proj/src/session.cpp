#include "oadlab/session.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace oadlab {

namespace {

using nlohmann::json;

const json& field(const json& doc, const char* name) {
  require(doc.contains(name), errc::config,
          std::string("session file is missing the '") + name + "' field");
  return doc.at(name);
}

double number_field(const json& obj, const char* name) {
  const json& j = field(obj, name);
  require(j.is_number(), errc::config,
          std::string("session field '") + name + "' must be a number");
  return j.get<double>();
}

}  // namespace

SessionFile parse_session_text(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(errc::config, std::string("session JSON parse failure: ") + e.what());
  }
  require(doc.is_object(), errc::config,
          "session file must be a JSON object");

  SessionFile s;
  for (const char* name : {"model", "criterion", "error_model"}) {
    const json& j = field(doc, name);
    require(j.is_string(), errc::config,
            std::string("session field '") + name + "' must be a string");
  }
  s.model = doc["model"].get<std::string>();
  s.criterion = doc["criterion"].get<std::string>();
  s.error_model = doc["error_model"].get<std::string>();

  const json& fod = field(doc, "fod");
  const json& support = field(fod, "support");
  const json& weights = field(fod, "weights");
  require(support.is_array() && weights.is_array() && !support.empty() &&
              support.size() == weights.size(),
          errc::config,
          "session 'fod' needs matching nonempty 'support' and 'weights' "
          "arrays");
  s.fod.weights.resize(static_cast<long>(weights.size()));
  for (size_t i = 0; i < support.size(); ++i) {
    require(support[i].is_number_integer(), errc::config,
            "session 'fod.support' entries must be candidate indices");
    require(weights[i].is_number(), errc::config,
            "session 'fod.weights' entries must be numbers");
    s.fod.support.push_back(support[i].get<int>());
    s.fod.weights(static_cast<long>(i)) = weights[i].get<double>();
  }

  const json& rc = field(doc, "road_config");
  s.road_config.k = static_cast<int>(number_field(rc, "k"));
  s.road_config.q_floor = number_field(rc, "q_floor");
  s.road_config.total_n = static_cast<long>(number_field(rc, "total_n"));

  const json& obs = field(doc, "observations");
  require(obs.is_array(), errc::config,
          "session 'observations' must be an array");
  for (const auto& entry : obs) {
    Observation o;
    o.point = static_cast<int>(number_field(entry, "point"));
    o.y = number_field(entry, "y");
    if (entry.contains("a")) {
      require(entry["a"].is_number(), errc::config,
              "session observation field 'a' must be a number");
      o.ancillary = entry["a"].get<double>();
    }
    require(o.point >= 1 && o.point <= s.fod.d(), errc::config,
            "observation 'point' must be a 1-based support position");
    s.observations.push_back(o);
  }
  return s;
}

SessionFile load_session(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io, "cannot open session file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_session_text(buf.str());
}

std::string session_to_json(const SessionFile& session) {
  json doc;
  doc["model"] = session.model;
  doc["criterion"] = session.criterion;
  doc["error_model"] = session.error_model;
  json support = json::array();
  json weights = json::array();
  for (int i = 0; i < session.fod.d(); ++i) {
    support.push_back(session.fod.support[i]);
    weights.push_back(session.fod.weights(i));
  }
  doc["fod"] = {{"support", support}, {"weights", weights}};
  doc["road_config"] = {{"k", session.road_config.k},
                        {"q_floor", session.road_config.q_floor},
                        {"total_n", session.road_config.total_n}};
  doc["observations"] = json::array();
  for (const auto& o : session.observations) {
    json entry = {{"point", o.point}, {"y", o.y}};
    if (o.ancillary) entry["a"] = *o.ancillary;
    doc["observations"].push_back(entry);
  }
  return doc.dump(2) + "\n";
}

LiveSession open_session(const SessionFile& session) {
  LiveSession live;
  live.spec = std::make_unique<ModelSpec>(parse_model(session.model));
  live.err = ErrorModel::parse(session.error_model);
  live.crit = Criterion::parse(session.criterion);
  if (live.crit.kind == CriterionKind::c) {
    require(live.crit.cvec.size() == live.spec->p, errc::config,
            "criterion c vector length must equal the parameter count");
  }
  live.fod.design = session.fod;
  validate_design(*live.spec, live.fod.design);
  live.fod.criterion_value = criterion_value(
      live.crit, info_matrix(*live.spec, live.fod.design));
  live.state =
      init_state(*live.spec, live.fod, live.err, session.road_config);
  for (size_t i = 0; i < session.observations.size(); ++i) {
    const Observation& o = session.observations[i];
    try {
      record_response(live.state, o.point - 1, o.y, o.ancillary);
    } catch (const OadError& e) {
      fail(e.code(), "observation " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return live;
}

}  // namespace oadlab
