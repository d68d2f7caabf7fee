#include "brakeorbit/io.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <fstream>
#include <sstream>
#include <vector>

#include "brakeorbit/error.hpp"

namespace brakeorbit {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const Nonlinearity& nl) {
  if (nl.kind() == Nonlinearity::Kind::PurePower) return {{"kind", "pure_power"}, {"p", nl.p()}};
  // the stored table carries the implied origin sample
  std::vector<double> t(nl.table_t().begin() + 1, nl.table_t().end());
  std::vector<double> f(nl.table_f().begin() + 1, nl.table_f().end());
  return {{"kind", "table"}, {"p", nl.p()}, {"t", t}, {"f", f}};
}

Nonlinearity nonlinearity_from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("nonlinearity", "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"kind", "p", "t", "f", "path"};
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
      throw ConfigError("nonlinearity." + it.key(), "unknown key");
    }
  }
  if (j.contains("kind") && !j["kind"].is_string()) throw ConfigError("nonlinearity.kind", "expected a string");
  const std::string kind = j.value("kind", std::string("pure_power"));
  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw ConfigError(std::string("nonlinearity.") + key, "expected a number");
    return j[key].get<double>();
  };
  if (kind == "pure_power") {
    if (!j.contains("p")) throw ConfigError("nonlinearity.p", "missing exponent");
    return Nonlinearity::pure_power(number("p", 3.0));
  }
  if (kind == "table") {
    const double p = number("p", 0.0);
    if (j.contains("path")) {
      if (!j["path"].is_string()) throw ConfigError("nonlinearity.path", "expected a path");
      fs::path path = j["path"].get<std::string>();
      if (path.is_relative() && !base.empty()) path = base / path;
      return Nonlinearity::from_csv(path, p);
    }
    if (!j.contains("t") || !j["t"].is_array()) throw ConfigError("nonlinearity.t", "expected an array");
    if (!j.contains("f") || !j["f"].is_array()) throw ConfigError("nonlinearity.f", "expected an array");
    return Nonlinearity::from_table(j["t"].get<std::vector<double>>(),
                                    j["f"].get<std::vector<double>>(), p);
  }
  throw ConfigError("nonlinearity.kind", "expected \"pure_power\" or \"table\"");
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error(ErrorKind::Io, "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot rename '" + tmp.string() + "': " + ec.message());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Io, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_or(const json& j, double fallback) {
  return j.is_number() ? j.get<double>() : fallback;
}

}  // namespace brakeorbit
