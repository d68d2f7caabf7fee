#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "brakeorbit/error.hpp"
#include "brakeorbit/run.hpp"
#include "brakeorbit/solution.hpp"

namespace bo = brakeorbit;

namespace {

int verify_command(const std::string& dir, const std::string& out_path) {
  const bo::LoadedSolution loaded = bo::read_solution(dir);
  const bo::Verdict verdict = bo::verify(loaded.sol, loaded.nl);
  const std::string text = bo::to_json(verdict).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream(out_path) << text;
  }
  return verdict.all_passed() ? 0 : 1;
}

int diagram_command(const std::string& summary, const std::string& out_path) {
  const auto rows = bo::read_summary_csv(summary);
  if (rows.empty()) throw bo::Error(bo::ErrorKind::Io, "summary has no completed runs");
  if (out_path.empty()) {
    bo::energy_diagram(rows, std::cout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw bo::Error(bo::ErrorKind::Io, "cannot write '" + out_path + "'");
    bo::energy_diagram(rows, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered solutions of -Delta u + u = f(u) as brake orbits"};
  app.require_subcommand(1);

  std::string config;
  int jobs = 1;
  bool resume = false;
  bool quiet = false;
  auto* solve = app.add_subcommand("solve", "Ground state, b sweep, solution bundles and verdicts");
  solve->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  solve->add_option("--jobs", jobs, "Worker threads for the b sweep")->check(CLI::PositiveNumber);
  solve->add_flag("--resume", resume, "Reuse finished runs and continue from checkpoints");
  solve->add_flag("-q,--quiet", quiet, "No progress log");

  std::string solution;
  std::string verdict_out;
  auto* verify = app.add_subcommand("verify", "Re-check a solution bundle");
  verify->add_option("--solution", solution, "Solution directory")->required()->check(CLI::ExistingDirectory);
  verify->add_option("--out", verdict_out, "Write the verdict here instead of stdout");

  std::string summary;
  std::string diagram_out;
  auto* diagram = app.add_subcommand("diagram", "Energy diagram rows from a summary CSV");
  diagram->add_option("--summary", summary, "summary.csv from a solve run")->required()->check(CLI::ExistingFile);
  diagram->add_option("--out", diagram_out, "Write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "Config"}, {"key", "argv"}, {"message", e.what()}}.dump()
              << std::endl;
    return 2;
  }

  try {
    if (*solve) {
      bo::RunOptions opt;
      opt.jobs = jobs;
      opt.resume = resume;
      opt.log = quiet ? nullptr : &std::cerr;
      return bo::run(config, opt);
    }
    if (*verify) return verify_command(solution, verdict_out);
    return diagram_command(summary, diagram_out);
  } catch (const std::exception& e) {
    std::cerr << bo::error_json(e).dump() << std::endl;
    return 1;
  }
}
