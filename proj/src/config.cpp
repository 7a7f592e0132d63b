#include "lagid/config.hpp"

#include <cmath>
#include <fstream>

namespace lagid {

void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

nlohmann::json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

std::string to_string(ode::Method m) { return m == ode::Method::tsit5 ? "tsit5" : "rk4"; }

ode::Method parse_method(const std::string& s) {
  if (s == "tsit5") return ode::Method::tsit5;
  if (s == "rk4") return ode::Method::rk4;
  throw ConfigError("unknown solver method '" + s + "' (valid: tsit5, rk4)");
}

namespace ode {

void to_json(nlohmann::json& j, const SolverConfig& c) {
  j = nlohmann::json{{"method", lagid::to_string(c.method)},
                     {"rtol", c.rtol},
                     {"atol", c.atol},
                     {"initial_step", c.initial_step},
                     {"min_step", c.min_step},
                     {"max_steps", c.max_steps},
                     {"safety", c.safety},
                     {"factor_min", c.factor_min},
                     {"factor_max", c.factor_max},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"fixed_dt", c.fixed_dt},
                     {"state_bound", c.state_bound}};
  // JSON has no infinity; an absent max_step means unbounded.
  if (std::isfinite(c.max_step)) j["max_step"] = c.max_step;
}

void from_json(const nlohmann::json& j, SolverConfig& c) {
  require_known_keys(j,
                     {"method", "rtol", "atol", "initial_step", "min_step", "max_step", "max_steps", "safety",
                      "factor_min", "factor_max", "beta1", "beta2", "fixed_dt", "state_bound"},
                     "solver config");
  std::string method = lagid::to_string(c.method);
  read_optional(j, "method", method);
  c.method = parse_method(method);
  read_optional(j, "rtol", c.rtol);
  read_optional(j, "atol", c.atol);
  read_optional(j, "initial_step", c.initial_step);
  read_optional(j, "min_step", c.min_step);
  read_optional(j, "max_step", c.max_step);
  read_optional(j, "max_steps", c.max_steps);
  read_optional(j, "safety", c.safety);
  read_optional(j, "factor_min", c.factor_min);
  read_optional(j, "factor_max", c.factor_max);
  read_optional(j, "beta1", c.beta1);
  read_optional(j, "beta2", c.beta2);
  read_optional(j, "fixed_dt", c.fixed_dt);
  read_optional(j, "state_bound", c.state_bound);
  c.validate();
}

}  // namespace ode
}  // namespace lagid
