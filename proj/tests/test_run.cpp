#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "brakeorbit/error.hpp"
#include "brakeorbit/io.hpp"
#include "brakeorbit/radial_grid.hpp"
#include "brakeorbit/run.hpp"
#include "brakeorbit/solution.hpp"
#include "brakeorbit/trajectory.hpp"

using namespace brakeorbit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path tmp_root = BRAKEORBIT_TEST_TMP;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = tmp_root / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

int cli(const std::string& args, const fs::path& err = {}) {
  std::string cmd = std::string(BRAKEORBIT_CLI) + " " + args;
  if (!err.empty()) cmd += " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json small_config(const fs::path& out) {
  return {{"N", 1},
          {"nonlinearity", {{"kind", "pure_power"}, {"p", 3.0}}},
          {"grid", {{"r_max", 16.0}, {"n_r", 400}, {"dy", 0.025}}},
          {"constants", {{"profiles", 16}, {"scales", 32}}},
          {"b_list", json::array()},
          {"output_dir", out.string()},
          {"seed", 7}};
}

std::string config_key(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const auto c = parse_run_config(json::object());
    CHECK(c.N == 1);
    CHECK(c.n_r == 2000);
    CHECK(c.r_max == 20.0);
    CHECK(c.b_list.empty());
  }
  SUBCASE("full document") {
    const json j = {{"N", 2},
                    {"nonlinearity", {{"kind", "pure_power"}, {"p", 2.5}}},
                    {"grid", {{"r_max", 15.0}, {"n_r", 900}, {"dy", 0.05}, {"initial_window", 9.0}}},
                    {"b_list", {0.0, 0.25}},
                    {"minimizer", {{"max_iters", 100}, {"tol_grad", 1e-6}, {"checkpoint_every", 5}}},
                    {"output_dir", "somewhere"},
                    {"seed", 99}};
    const auto c = parse_run_config(j);
    CHECK(c.N == 2);
    CHECK(c.n_r == 900);
    CHECK(c.initial_window == 9.0);
    CHECK(c.b_list == std::vector<double>{0.0, 0.25});
    CHECK(c.max_iters == 100);
    CHECK(c.checkpoint_every == 5);
    CHECK(c.seed == 99);
    CHECK(c.output_dir == "somewhere");
  }
  SUBCASE("errors name the key") {
    CHECK(config_key({{"grid", {{"n_r", -4}}}}) == "grid.n_r");
    CHECK(config_key({{"grid", {{"dy", "small"}}}}) == "grid.dy");
    CHECK(config_key({{"grid", {{"r_mx", 3.0}}}}) == "grid.r_mx");
    CHECK(config_key({{"b_list", {0.5, 1.0}}}) == "b_list[1]");
    CHECK(config_key({{"b_list", 0.5}}) == "b_list");
    CHECK(config_key({{"N", 0}}) == "N");
    CHECK(config_key({{"colour", 1}}) == "colour");
    CHECK(config_key({{"nonlinearity", {{"kind", "exp"}}}}) == "nonlinearity.kind");
    CHECK(config_key({{"nonlinearity", {{"kind", "pure_power"}}}}) == "nonlinearity.p");
  }
}

TEST_CASE("nonlinearity JSON round trip") {
  const auto nl = Nonlinearity::pure_power(2.5);
  const auto back = nonlinearity_from_json(to_json(nl));
  CHECK(back.p() == 2.5);
  const auto table = Nonlinearity::from_table({0.5, 1.0, 2.0}, {0.125, 1.0, 8.0}, 3.0);
  const auto t2 = nonlinearity_from_json(to_json(table));
  CHECK(t2.kind() == Nonlinearity::Kind::UserTable);
  CHECK(t2.f(1.5) == table.f(1.5));

  const fs::path dir = fresh_dir("table");
  std::ofstream(dir / "f.csv") << "t,f\n0.5,0.125\n1,1\n2,8\n";
  const auto t3 = nonlinearity_from_json({{"kind", "table"}, {"path", "f.csv"}, {"p", 3.0}}, dir);
  CHECK(t3.f(1.5) == table.f(1.5));
  CHECK(config_key({{"nonlinearity", {{"kind", "table"}, {"path", 3}}}}) == "nonlinearity.path");
}

TEST_CASE("summary and diagram") {
  const fs::path dir = fresh_dir("summary");
  std::vector<SummaryRow> rows(4);
  const double fracs[] = {0.75, 0.0, 0.5, 0.25};
  for (int i = 0; i < 4; ++i) {
    rows[i].b_fraction = fracs[i];
    rows[i].b = fracs[i] * 4.0 / 3.0;
    rows[i].m_b = 1.0 / 3.0 + i;
    rows[i].T_b = fracs[i] > 0 ? 2.0 + fracs[i] : std::numeric_limits<double>::infinity();
    rows[i].checks_passed = 15;
    rows[i].checks_total = 15;
    rows[i].converged = true;
  }
  write_summary_csv(dir / "summary.csv", rows);
  const auto back = read_summary_csv(dir / "summary.csv");
  REQUIRE(back.size() == 4);
  for (int i = 0; i + 1 < 4; ++i) CHECK(back[i].b < back[i + 1].b);
  CHECK(std::isinf(back[0].T_b));
  CHECK(back[2].m_b == 1.0 / 3.0 + 2);
  CHECK(back[3].converged);

  std::ostringstream out;
  energy_diagram(back, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "b,minus_b,m_b,T_b");
  double prev_b = -1.0, prev_minus = 1.0;
  int count = 0;
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string b, mb;
    std::getline(s, b, ',');
    std::getline(s, mb, ',');
    CHECK(std::stod(b) > prev_b);
    CHECK(std::stod(mb) < prev_minus);
    prev_b = std::stod(b);
    prev_minus = std::stod(mb);
    if (count == 0) CHECK(line.substr(line.rfind(',') + 1) == "inf");
    ++count;
  }
  CHECK(count == 4);

  std::ostringstream single;
  energy_diagram({back[0]}, single);
  CHECK(single.str() == "b,minus_b,m_b,T_b\n0,-0,1.3333333333333333,inf\n");
}

TEST_CASE("cli: malformed configs") {
  const fs::path dir = fresh_dir("malformed");
  json j = small_config(dir / "out");
  j["grid"]["n_r"] = "many";
  const auto cfg = write_config(dir, j);
  CHECK(cli("solve -q --config " + cfg.string(), dir / "err.txt") == 2);
  const json err = json::parse(slurp(dir / "err.txt"));
  CHECK(err.at("key") == "grid.n_r");
  CHECK(err.at("error") == "Config");

  std::ofstream(dir / "broken.json") << "{\"N\": 1,";
  CHECK(cli("solve -q --config " + (dir / "broken.json").string(), dir / "err2.txt") == 2);
  CHECK(cli("solve -q --config " + (dir / "missing.json").string(), dir / "err3.txt") == 2);
  CHECK(cli("verify --solution " + dir.string(), dir / "err4.txt") == 1);
  CHECK(json::parse(slurp(dir / "err4.txt")).at("error") == "Io");
}

TEST_CASE("cli: empty sweep") {
  const fs::path dir = fresh_dir("empty");
  const auto cfg = write_config(dir, small_config(dir / "out"));
  CHECK(cli("solve -q --config " + cfg.string()) == 0);
  const fs::path out = dir / "out";
  CHECK(fs::exists(out / "ground_state.csv"));
  CHECK(read_json(out / "ground_state.json").at("c").get<double>() == doctest::Approx(4.0 / 3.0).epsilon(1e-3));
  CHECK(read_json(out / "hypotheses.json").at("pass").get<bool>());
  CHECK(read_field_csv(out / "ground_state.csv").size() == 400);
  CHECK(!fs::exists(out / "summary.csv"));
  for (const auto& e : fs::directory_iterator(out)) CHECK(!e.is_directory());
}

TEST_CASE("cli: output root override") {
  const fs::path dir = fresh_dir("root_override");
  json j = small_config("relative_out");
  const auto cfg = write_config(dir, j);
  const std::string cmd = "BRAKEORBIT_OUTPUT_ROOT=" + (dir / "root").string() + " " + std::string(BRAKEORBIT_CLI) +
                          " solve -q --config " + cfg.string();
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(dir / "root" / "relative_out" / "ground_state.json"));
}

TEST_CASE("cli: half-level run end to end") {
  const fs::path dir = fresh_dir("half");
  json j = small_config(dir / "out");
  j["b_list"] = {0.5};
  const auto cfg = write_config(dir, j);
  REQUIRE(cli("solve -q --config " + cfg.string()) == 0);
  const fs::path out = dir / "out";
  const auto rows = read_summary_csv(out / "summary.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].T_b > 0.0);
  CHECK(rows[0].converged);
  CHECK(rows[0].checks_passed == rows[0].checks_total);
  CHECK(rows[0].m_b >= 0.0);

  const fs::path run = out / "b_0.5";
  CHECK(!fs::exists(out / "b_0.5.partial"));
  for (const char* f : {"constants.json", "verdict.json", "run.json", "solution.json"}) {
    CHECK_NOTHROW(read_json(run / f));
  }
  const auto traj = read_trajectory_csv(run / "trajectory.csv");
  CHECK(traj.n_r() == 400);
  CHECK_NOTHROW(read_trajectory_csv(run / "core.csv"));
  CHECK(read_json(run / "verdict.json").at("pass").get<bool>());

  CHECK(cli("verify --solution " + run.string() + " --out " + (dir / "verdict.json").string()) == 0);
  CHECK(read_json(dir / "verdict.json").at("pass").get<bool>());
  CHECK(cli("diagram --summary " + (out / "summary.csv").string() + " --out " + (dir / "diagram.csv").string()) == 0);
  CHECK(slurp(dir / "diagram.csv").rfind("b,minus_b,m_b,T_b\n", 0) == 0);

  // a resumed run reuses the finished directory and reproduces the summary
  const std::string before = slurp(out / "summary.csv");
  CHECK(cli("solve -q --resume --config " + cfg.string()) == 0);
  CHECK(slurp(out / "summary.csv") == before);

  // tampering with the verdict inputs makes verify fail
  auto loaded = read_solution(run);
  loaded.sol.v.values(3, 5) += 0.1;
  fs::create_directories(dir / "tampered");
  write_solution(dir / "tampered", loaded.sol, loaded.nl);
  CHECK(cli("verify --solution " + (dir / "tampered").string() + " --out " + (dir / "t.json").string()) == 1);
}
