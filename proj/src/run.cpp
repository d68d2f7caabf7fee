#include "brakeorbit/run.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "brakeorbit/io.hpp"
#include "brakeorbit/minimizer.hpp"
#include "brakeorbit/nonlinearity.hpp"
#include "brakeorbit/potential.hpp"
#include "brakeorbit/solution.hpp"

namespace brakeorbit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Typed accessors over one JSON object that remember which keys were read.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  std::string key(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

  double number(const std::string& k, double def, bool positive = false) {
    if (!has(k)) return def;
    const json& v = j_[k];
    if (!v.is_number()) throw ConfigError(key(k), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || (positive && !(x > 0.0))) throw ConfigError(key(k), "expected a positive number");
    return x;
  }
  int integer(const std::string& k, int def, int min) {
    if (!has(k)) return def;
    const json& v = j_[k];
    if (!v.is_number_integer() || v.get<long long>() < min || v.get<long long>() > 1'000'000'000) {
      throw ConfigError(key(k), "expected an integer >= " + std::to_string(min));
    }
    return v.get<int>();
  }
  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

double parse_number(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  const double x = std::stod(s, &pos);
  if (pos != s.size()) throw Error(ErrorKind::Io, "bad number '" + s + "' in summary");
  return x;
}

std::string run_name(double frac) {
  std::ostringstream s;
  s << "b_" << std::setprecision(6) << frac;
  return s.str();
}

json to_json(const SummaryRow& r) {
  return {{"b_fraction", r.b_fraction},      {"b", r.b},
          {"m_b", r.m_b},                    {"T_b", finite_or_null(r.T_b)},
          {"max_energy_dev", r.max_energy_dev}, {"residual", r.residual},
          {"checks_passed", r.checks_passed}, {"checks_total", r.checks_total},
          {"lower_bound", r.lower_bound},    {"converged", r.converged}};
}

SummaryRow row_from_json(const json& j) {
  SummaryRow r;
  r.b_fraction = j.at("b_fraction").get<double>();
  r.b = j.at("b").get<double>();
  r.m_b = j.at("m_b").get<double>();
  r.T_b = number_or(j.at("T_b"), kInf);
  r.max_energy_dev = j.at("max_energy_dev").get<double>();
  r.residual = j.at("residual").get<double>();
  r.checks_passed = j.at("checks_passed").get<int>();
  r.checks_total = j.at("checks_total").get<int>();
  r.lower_bound = j.at("lower_bound").get<double>();
  r.converged = j.at("converged").get<bool>();
  return r;
}

json validation_json(const ValidationReport& v) {
  json checks = json::array();
  for (const HypothesisCheck& c : v.checks) {
    checks.push_back({{"name", c.name}, {"pass", c.passed}, {"worst", c.worst}, {"detail", c.detail}});
  }
  return {{"dim", v.dim},
          {"p", v.p},
          {"mu", v.mu},
          {"growth_constant", v.growth_constant},
          {"a_half", v.a_half},
          {"checks", checks},
          {"pass", v.all_passed()}};
}

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void operator()(const std::string& msg) {
    if (!out_) return;
    std::lock_guard<std::mutex> lock(m_);
    *out_ << msg << std::endl;
  }

 private:
  std::ostream* out_;
  std::mutex m_;
};

void write_trajectory_atomic(const fs::path& path, const Trajectory& v) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_trajectory_csv(tmp, v);
  fs::rename(tmp, path);
}

struct Context {
  const RunConfig& cfg;
  const Nonlinearity& nl;
  const GroundState& gs;
  fs::path out;
  bool resume;
  Logger& log;
};

// One b value; files are staged in <name>.partial and renamed on completion.
SummaryRow solve_one(const Context& ctx, double frac) {
  const std::string name = run_name(frac);
  const fs::path final_dir = ctx.out / name;
  const fs::path stage = ctx.out / (name + ".partial");
  if (ctx.resume && fs::exists(final_dir / "run.json")) {
    ctx.log(name + ": already complete, reusing");
    return row_from_json(read_json(final_dir / "run.json"));
  }
  fs::create_directories(stage);

  const double c = ctx.gs.c;
  const double b = frac * c;
  ConstantsBudget budget;
  budget.seed = ctx.cfg.seed;
  budget.profiles = ctx.cfg.constant_profiles;
  budget.scales = ctx.cfg.constant_scales;
  const PotentialConstants k = estimate_constants(b, ctx.gs, ctx.nl, budget);
  write_text_atomic(stage / "constants.json", to_json(k).dump(2) + "\n");

  MinimizeConfig mc;
  mc.b = b;
  mc.mode = b > 0.0 ? BoundaryMode::ClampedMinus : BoundaryMode::FreeDecay;
  mc.seed = ctx.gs.w0;
  mc.dy = ctx.cfg.dy;
  mc.decay_length = ctx.cfg.initial_window;
  mc.max_iters = ctx.cfg.max_iters;
  mc.tol_grad = ctx.cfg.tol_grad;
  mc.tol_constraint = ctx.cfg.tol_constraint;
  mc.tol_residual = ctx.cfg.tol_residual;
  mc.checkpoint_every = ctx.cfg.checkpoint_every;
  const fs::path ckpt = stage / "checkpoint.csv";
  if (ctx.resume && fs::exists(ckpt)) {
    ctx.log(name + ": resuming from checkpoint");
    mc.resume_from = read_trajectory_csv(ckpt);
  }
  Logger& log = ctx.log;
  mc.on_checkpoint = [&, name](const CheckpointInfo& info, const Trajectory& t) {
    write_trajectory_atomic(ckpt, t);
    json j = {{"iteration", info.iteration}, {"phi", info.phi},  {"grad_norm", info.grad_norm},
              {"dy", info.dy},               {"min_slack", info.min_slack}};
    write_text_atomic(stage / "checkpoint.json", j.dump(2) + "\n");
    std::ostringstream s;
    s << name << ": it " << info.iteration << " phi " << info.phi << " grad " << info.grad_norm;
    log(s.str());
  };

  const CoreSegment core = minimize(mc, k, ctx.nl);
  SummaryRow row;
  row.b_fraction = frac;
  row.b = b;
  row.m_b = core.m_b;
  row.lower_bound = m_b_lower_bound(k);
  row.converged = core.converged;
  if (!core.converged) {
    write_trajectory_atomic(ckpt, core.v);
    throw Error(ErrorKind::NotConverged,
                name + ": minimizer stopped at gradient norm " + fmt(core.grad_norm));
  }
  write_trajectory_atomic(stage / "core.csv", core.v);

  BrakeOrbitSolution sol = assemble(core, b, c, ctx.nl);
  sol.provenance["config_seed"] = ctx.cfg.seed;
  sol.provenance["b_fraction"] = frac;
  sol.provenance["constants"] = to_json(k);
  const Verdict verdict = verify(sol, ctx.nl);
  write_solution(stage, sol, ctx.nl);
  write_text_atomic(stage / "verdict.json", to_json(verdict).dump(2) + "\n");

  row.T_b = sol.periodic() ? sol.T_b : kInf;
  for (const Check& ch : verdict.checks) {
    if (ch.name == "energy_identity") row.max_energy_dev = ch.value;
    if (ch.name == "pde_residual") row.residual = ch.value;
  }
  row.checks_passed = verdict.passed();
  row.checks_total = static_cast<int>(verdict.checks.size());
  write_text_atomic(stage / "run.json", to_json(row).dump(2) + "\n");
  fs::remove(ckpt);
  fs::remove(stage / "checkpoint.json");

  if (fs::exists(final_dir)) fs::remove_all(final_dir);
  fs::rename(stage, final_dir);
  ctx.log(name + ": done, " + std::to_string(row.checks_passed) + "/" +
          std::to_string(row.checks_total) + " checks");
  return row;
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base) {
  RunConfig c;
  c.base = base;
  Section root(j, "");
  c.N = root.integer("N", c.N, 1);
  if (root.has("nonlinearity")) {
    c.nonlinearity = root.raw("nonlinearity");
    try {
      (void)nonlinearity_from_json(c.nonlinearity, base);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("nonlinearity", e.what());
    }
  }
  if (root.has("grid")) {
    Section g(root.raw("grid"), "grid");
    c.r_max = g.number("r_max", c.r_max, true);
    c.n_r = g.integer("n_r", c.n_r, 3);
    c.dy = g.number("dy", c.dy, true);
    c.initial_window = g.number("initial_window", c.initial_window, true);
    if (c.initial_window < 4.0 * c.dy) throw ConfigError("grid.initial_window", "must be at least 4 dy");
    g.finish();
  }
  if (root.has("b_list")) {
    const json& bl = root.raw("b_list");
    if (!bl.is_array()) throw ConfigError("b_list", "expected an array of fractions of c");
    for (std::size_t i = 0; i < bl.size(); ++i) {
      const std::string key = "b_list[" + std::to_string(i) + "]";
      if (!bl[i].is_number()) throw ConfigError(key, "expected a number");
      const double f = bl[i].get<double>();
      if (!(f >= 0.0 && f < 1.0)) throw ConfigError(key, "fraction must lie in [0, 1)");
      c.b_list.push_back(f);
    }
    std::vector<double> sorted = c.b_list;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("b_list", "duplicate fraction");
    }
  }
  if (root.has("minimizer")) {
    Section m(root.raw("minimizer"), "minimizer");
    c.max_iters = m.integer("max_iters", c.max_iters, 1);
    c.tol_grad = m.number("tol_grad", c.tol_grad, true);
    c.tol_constraint = m.number("tol_constraint", c.tol_constraint, true);
    c.tol_residual = m.number("tol_residual", c.tol_residual, true);
    c.checkpoint_every = m.integer("checkpoint_every", c.checkpoint_every, 0);
    m.finish();
  }
  if (root.has("constants")) {
    Section k(root.raw("constants"), "constants");
    c.constant_profiles = k.integer("profiles", c.constant_profiles, 1);
    c.constant_scales = k.integer("scales", c.constant_scales, 2);
    k.finish();
  }
  if (root.has("output_dir")) {
    const json& o = root.raw("output_dir");
    if (!o.is_string() || o.get<std::string>().empty()) throw ConfigError("output_dir", "expected a path");
    c.output_dir = o.get<std::string>();
  }
  if (root.has("seed")) {
    const json& s = root.raw("seed");
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0) throw ConfigError("seed", "expected a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  root.finish();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

void write_summary_csv(const fs::path& path, std::vector<SummaryRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const SummaryRow& a, const SummaryRow& b) { return a.b < b.b; });
  std::ostringstream out;
  out << "b_fraction,b,m_b,T_b,max_energy_dev,residual,checks_passed,checks_total,lower_bound,"
         "converged\n";
  for (const SummaryRow& r : rows) {
    out << fmt(r.b_fraction) << ',' << fmt(r.b) << ',' << fmt(r.m_b) << ',' << fmt(r.T_b) << ','
        << fmt(r.max_energy_dev) << ',' << fmt(r.residual) << ',' << r.checks_passed << ','
        << r.checks_total << ',' << fmt(r.lower_bound) << ',' << (r.converged ? 1 : 0) << '\n';
  }
  write_text_atomic(path, out.str());
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("b_fraction,", 0) != 0) {
    throw Error(ErrorKind::Io, "'" + path.string() + "' is not a summary CSV");
  }
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw Error(ErrorKind::Io, "summary row with " + std::to_string(cells.size()) + " cells");
    SummaryRow r;
    r.b_fraction = parse_number(cells[0]);
    r.b = parse_number(cells[1]);
    r.m_b = parse_number(cells[2]);
    r.T_b = parse_number(cells[3]);
    r.max_energy_dev = parse_number(cells[4]);
    r.residual = parse_number(cells[5]);
    r.checks_passed = std::stoi(cells[6]);
    r.checks_total = std::stoi(cells[7]);
    r.lower_bound = parse_number(cells[8]);
    r.converged = cells[9] == "1";
    rows.push_back(r);
  }
  return rows;
}

void energy_diagram(const std::vector<SummaryRow>& rows, std::ostream& out) {
  std::vector<SummaryRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(),
            [](const SummaryRow& a, const SummaryRow& b) { return a.b < b.b; });
  out << "b,minus_b,m_b,T_b\n";
  for (const SummaryRow& r : sorted) {
    out << fmt(r.b) << ',' << fmt(-r.b) << ',' << fmt(r.m_b) << ',' << fmt(r.T_b) << '\n';
  }
}

json error_json(const std::exception& e) {
  json j = {{"error", "Internal"}, {"message", e.what()}};
  if (const auto* be = dynamic_cast<const Error*>(&e)) j["error"] = std::string(to_string(be->kind()));
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) j["key"] = ce->key();
  return j;
}

int run(const fs::path& config_path, const RunOptions& opt) {
  Logger log(opt.log);
  fs::path out;
  auto fail = [&](const std::exception& e, int code) {
    const json j = error_json(e);
    std::cerr << j.dump() << std::endl;
    if (!out.empty()) {
      try {
        fs::create_directories(out);
        write_text_atomic(out / "error.json", j.dump(2) + "\n");
      } catch (const std::exception&) {
      }
    }
    return code;
  };

  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ConfigError& e) {
    return fail(e, 2);
  }
  out = cfg.output_dir;
  if (out.is_relative()) {
    const char* root = std::getenv("BRAKEORBIT_OUTPUT_ROOT");
    if (root && *root) out = fs::path(root) / out;
  }

  try {
    fs::create_directories(out);
    fs::remove(out / "error.json");
    const Nonlinearity nl = nonlinearity_from_json(cfg.nonlinearity, cfg.base);
    const ValidationReport report = validate_hypotheses(nl, cfg.N, default_samples());
    write_text_atomic(out / "hypotheses.json", validation_json(report).dump(2) + "\n");
    if (!report.all_passed()) throw Error(ErrorKind::InvalidNonlinearity, "hypothesis check failed");

    GroundStateOptions gopt;
    gopt.r_max = cfg.r_max;
    gopt.n_r = cfg.n_r;
    const GroundState gs = ground_state(cfg.N, nl, gopt);
    write_field_csv(out / "ground_state.csv", gs.w0);
    json gj = {{"N", cfg.N},           {"c", gs.c},          {"residual", gs.residual},
               {"amplitude", gs.amplitude}, {"r_max", cfg.r_max}, {"n_r", cfg.n_r},
               {"nonlinearity", to_json(nl)}};
    write_text_atomic(out / "ground_state.json", gj.dump(2) + "\n");
    log("ground state: c = " + fmt(gs.c));

    Context ctx{cfg, nl, gs, out, opt.resume, log};
    const std::size_t count = cfg.b_list.size();
    std::vector<SummaryRow> rows(count);
    std::vector<std::string> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          rows[i] = solve_one(ctx, cfg.b_list[i]);
        } catch (const std::exception& e) {
          errors[i] = error_json(e).dump();
          rows[i].b_fraction = cfg.b_list[i];
          rows[i].b = cfg.b_list[i] * gs.c;
          rows[i].m_b = std::numeric_limits<double>::quiet_NaN();
          rows[i].T_b = std::numeric_limits<double>::quiet_NaN();
          log(run_name(cfg.b_list[i]) + ": failed: " + e.what());
        }
      }
    };
    const int width = std::max(1, std::min<int>(opt.jobs, static_cast<int>(std::max<std::size_t>(count, 1))));
    std::vector<std::thread> pool;
    for (int t = 1; t < width; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    if (count > 0) {
      write_summary_csv(out / "summary.csv", rows);
      std::ostringstream diagram;
      energy_diagram(rows, diagram);
      write_text_atomic(out / "energy_diagram.csv", diagram.str());
    }

    json failures = json::array();
    bool ok = true;
    for (std::size_t i = 0; i < count; ++i) {
      if (!errors[i].empty()) {
        failures.push_back({{"b_fraction", cfg.b_list[i]}, {"report", json::parse(errors[i])}});
        ok = false;
      } else if (!rows[i].converged || rows[i].checks_passed != rows[i].checks_total) {
        failures.push_back({{"b_fraction", cfg.b_list[i]},
                            {"report", {{"error", "VerdictFailed"},
                                        {"message", std::to_string(rows[i].checks_passed) + "/" +
                                                        std::to_string(rows[i].checks_total) +
                                                        " checks passed"}}}});
        ok = false;
      }
    }
    if (!ok) {
      const json j = {{"error", "RunFailed"}, {"failures", failures}};
      std::cerr << j.dump() << std::endl;
      write_text_atomic(out / "error.json", j.dump(2) + "\n");
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    return fail(e, 1);
  }
}

}  // namespace brakeorbit
