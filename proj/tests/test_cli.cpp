#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#ifndef OADLAB_CLI_PATH
#error "OADLAB_CLI_PATH must point at the command-line binary"
#endif

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << contents;
  REQUIRE(out.good());
}

std::string temp_path(const std::string& tag) {
  static int counter = 0;
  return "/tmp/oadlab_cli_" + std::to_string(::getpid()) + "_" + tag + "_" +
         std::to_string(counter++);
}

CliResult run_cli(const std::string& args) {
  const std::string out_path = temp_path("stdout");
  const std::string err_path = temp_path("stderr");
  const std::string cmd = std::string(OADLAB_CLI_PATH) + " " + args + " >" +
                          out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out_path);
  result.err = slurp(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  return result;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& tag) : path(temp_path(tag)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

const char* kGhrSession = R"({
  "model": "treatment:2",
  "criterion": "D",
  "error_model": "ghr:0.25",
  "fod": {"support": [0, 1], "weights": [0.5, 0.5]},
  "road_config": {"k": 1, "q_floor": 1e-8, "total_n": 10},
  "observations": [
    {"point": 1, "y": 0.7, "a": 1.2},
    {"point": 2, "y": -0.1, "a": 0.8}
  ]
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version, missing subcommand, and unknown flags") {
  auto version = run_cli("--version");
  CHECK(version.exit_code == 0);
  CHECK(version.out.find("1.0.0") != std::string::npos);

  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("fod --model treatment:4 --bogus-flag 1").exit_code == 2);
  CHECK(run_cli("not-a-subcommand").exit_code == 2);
}

TEST_CASE("design solving prints and writes the optimum") {
  auto direct = run_cli("fod --model treatment:4 --criterion D");
  REQUIRE(direct.exit_code == 0);
  nlohmann::json doc = nlohmann::json::parse(direct.out);
  CHECK(doc["model"] == "treatment:4");
  CHECK(doc["criterion"] == "D");
  REQUIRE(doc["weights"].size() == 4);
  for (const auto& w : doc["weights"]) {
    CHECK(w.get<double>() == doctest::Approx(0.25).epsilon(1e-6));
  }
  CHECK(doc["criterion_value"].get<double>() ==
        doctest::Approx(0.25).epsilon(1e-9));
  CHECK(doc["get_violation"].get<double>() >= -1e-7);

  TempFile out("fod.json");
  auto filed = run_cli("fod --model treatment:4 --criterion A --out " +
                       out.path);
  REQUIRE(filed.exit_code == 0);
  nlohmann::json from_file = nlohmann::json::parse(slurp(out.path));
  CHECK(from_file["criterion"] == "A");
  CHECK(from_file["criterion_value"].get<double>() ==
        doctest::Approx(1.0 / 16.0).epsilon(1e-9));

  CHECK(run_cli("fod --model spline:3").exit_code == 2);
  // An impossible tolerance inside a tiny budget is a runtime failure,
  // not a usage error.
  CHECK(run_cli("fod --model quadratic:2 --max-iter 3 --tol 1e-15")
            .exit_code == 3);
  auto failed = run_cli("fod --model quadratic:2 --max-iter 3 --tol 1e-15");
  CHECK(failed.err.find("non-convergence") != std::string::npos);
}

TEST_CASE("curvature grid export") {
  TempFile out("table.csv");
  auto res = run_cli("table1 --max-s 3 --criteria D --quad-max-s 2 --out " +
                     out.path);
  REQUIRE(res.exit_code == 0);
  std::istringstream file(slurp(out.path));
  std::string header;
  std::getline(file, header);
  CHECK(header == "family,s,p,criterion,d,R_star,psi_star,ok,error");
  int rows = 0;
  std::string line;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.find(",1,\"\"") != std::string::npos);  // ok flag, empty error
  }
  CHECK(rows == 8);  // treatment 1..3, interaction 1..3, quadratic 1..2
}

TEST_CASE("curvature report blends the optimum with the error model") {
  auto res = run_cli(
      "curvature --model treatment:4 --criterion D --error str:1 --n 200");
  REQUIRE(res.exit_code == 0);
  nlohmann::json doc = nlohmann::json::parse(res.out);
  CHECK(doc["R_star"].get<double>() == doctest::Approx(1.5).epsilon(1e-7));
  CHECK(doc["gamma_sq"].get<double>() == doctest::Approx(2.5).epsilon(1e-6));
  CHECK(doc["S_star"].get<double>() ==
        doctest::Approx(1.0 / (1.0 - 2.5 * 1.5 / 200.0)).epsilon(1e-6));
  CHECK(doc["psi_star"].get<double>() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(doc.contains("h"));
  CHECK(doc["d"] == 4);

  CHECK(run_cli("curvature --model treatment:4 --v-form banana").exit_code ==
        2);
}

TEST_CASE("session fitting reproduces the by-hand estimates") {
  TempFile session("session.json");
  spit(session.path, kGhrSession);

  auto res = run_cli("fit --session " + session.path +
                     " --c [1,-1] --C0 0 --alpha 0.05");
  REQUIRE(res.exit_code == 0);
  nlohmann::json doc = nlohmann::json::parse(res.out);
  REQUIRE(doc["beta_hat"].size() == 2);
  CHECK(doc["beta_hat"][0].get<double>() == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(doc["beta_hat"][1].get<double>() ==
        doctest::Approx(-0.1).epsilon(1e-10));
  // Observed information 2 a cosh(0) per single-observation arm.
  CHECK(doc["i_a"][0].get<double>() == doctest::Approx(2.4).epsilon(1e-10));
  CHECK(doc["i_a"][1].get<double>() == doctest::Approx(1.6).epsilon(1e-10));
  CHECK(doc["converged"] == true);
  CHECK(doc.contains("ellipsoid_log_volume"));
  REQUIRE(doc.contains("test"));
  CHECK(doc["test"]["c_value"].get<double>() ==
        doctest::Approx(1.0 / (1.0 / 2.4 + 1.0 / 1.6)).epsilon(1e-10));

  // A session without observations cannot be fitted.
  TempFile empty_session("empty_session.json");
  nlohmann::json trimmed = nlohmann::json::parse(kGhrSession);
  trimmed["observations"] = nlohmann::json::array();
  spit(empty_session.path, trimmed.dump());
  CHECK(run_cli("fit --session " + empty_session.path).exit_code == 2);

  // Missing required fields name the field on stderr and exit as usage.
  TempFile broken("broken_session.json");
  nlohmann::json no_road = nlohmann::json::parse(kGhrSession);
  no_road.erase("road_config");
  spit(broken.path, no_road.dump());
  auto bad = run_cli("fit --session " + broken.path);
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("road_config") != std::string::npos);

  CHECK(run_cli("fit --session /no/such/file.json").exit_code == 2);
}

TEST_CASE("next-point recommendations are one-based and phase-labeled") {
  // Fresh session: still inside the k*d initialization schedule.
  TempFile fresh("fresh_session.json");
  nlohmann::json doc = nlohmann::json::parse(kGhrSession);
  doc["error_model"] = "normal";
  doc["observations"] = nlohmann::json::array();
  spit(fresh.path, doc.dump());
  auto first = run_cli("road-next --session " + fresh.path);
  REQUIRE(first.exit_code == 0);
  CHECK(first.out.find("phase: initialization") != std::string::npos);
  CHECK(first.out.find("next_point: 1") != std::string::npos);

  // Past initialization with realized shares (0.7, 0.3) against the
  // half/half target: the understocked second point is recommended.
  TempFile warm("warm_session.json");
  nlohmann::json obs = nlohmann::json::array();
  for (int i = 0; i < 7; ++i) obs.push_back({{"point", 1}, {"y", 0.5}});
  for (int i = 0; i < 3; ++i) obs.push_back({{"point", 2}, {"y", 0.4}});
  doc["observations"] = obs;
  doc["road_config"]["total_n"] = 20;
  spit(warm.path, doc.dump());
  auto adaptive = run_cli("road-next --session " + warm.path);
  REQUIRE(adaptive.exit_code == 0);
  CHECK(adaptive.out.find("phase: adaptive") != std::string::npos);
  CHECK(adaptive.out.find("next_point: 2") != std::string::npos);
}

TEST_CASE("simulation runs are seed-reported and replayable") {
  TempFile config("sim_config.json");
  spit(config.path, R"({
    "model": "treatment:2",
    "criterion": "D",
    "error_model": "str:1",
    "beta": [0.0, 0.0],
    "n_grid": [8],
    "replicates": 30,
    "seed": 4,
    "k": 1
  })");

  TempFile out1("sim1.csv"), out2("sim2.csv"), out3("sim3.csv");
  auto r1 = run_cli("simulate --config " + config.path + " --out " +
                    out1.path + " --workers 2");
  REQUIRE(r1.exit_code == 0);
  CHECK(r1.out.rfind("seed: 4\n", 0) == 0);
  const std::string bytes1 = slurp(out1.path);
  CHECK(bytes1.rfind("arm,n,metric,value,stderr,replicates,seed\n", 0) == 0);

  auto r2 = run_cli("simulate --config " + config.path + " --out " +
                    out2.path + " --workers 3");
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(out2.path) == bytes1);

  auto r3 = run_cli("simulate --config " + config.path + " --out " +
                    out3.path + " --seed 5");
  REQUIRE(r3.exit_code == 0);
  CHECK(r3.out.rfind("seed: 5\n", 0) == 0);
  CHECK(slurp(out3.path) != bytes1);

  CHECK(run_cli("simulate --config /no/such/config.json --out " + out1.path)
            .exit_code == 2);
  CHECK(run_cli("simulate --config " + config.path + " --out " + out1.path +
                " --format yaml")
            .exit_code == 2);
}

TEST_CASE("power command reports per-arm sample sizes for the target") {
  TempFile config("power_config.json");
  spit(config.path, R"({
    "model": "treatment:2",
    "criterion": "D",
    "error_model": "normal",
    "beta": [0.5, 0.0],
    "n_grid": [16, 64],
    "replicates": 60,
    "seed": 11,
    "k": 1,
    "power": {"c": [1.0, -1.0], "C0": 0.0, "alpha": 0.05}
  })");

  auto res = run_cli("power --config " + config.path + " --target 0.5");
  REQUIRE(res.exit_code == 0);
  CHECK(res.out.rfind("seed: 11\n", 0) == 0);
  const auto brace = res.out.find('{');
  REQUIRE(brace != std::string::npos);
  nlohmann::json doc = nlohmann::json::parse(res.out.substr(brace));
  CHECK(doc["target"].get<double>() == doctest::Approx(0.5));
  REQUIRE(doc["points"].size() == 4);
  for (const auto& pt : doc["points"]) {
    CHECK(pt["completed"].get<long>() == 60);
  }
  REQUIRE(doc.contains("n_for_target"));
  CHECK(doc["n_for_target"].contains("ROAD"));
  CHECK(doc["n_for_target"].contains("FOD"));
}

}  // TEST_SUITE
