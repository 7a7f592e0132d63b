#pragma once

// JSON helpers shared by the run configs.

#include "lagid/ode.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>

namespace lagid {

/// Throws ConfigError naming the first key of `j` outside `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

/// Assigns j[key] to `out` when present; ConfigError on a type mismatch.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out);

nlohmann::json read_json_file(const std::filesystem::path& file);
void write_json_file(const std::filesystem::path& file, const nlohmann::json& j);

std::string to_string(ode::Method m);
ode::Method parse_method(const std::string& s);

namespace ode {
void to_json(nlohmann::json& j, const SolverConfig& c);
void from_json(const nlohmann::json& j, SolverConfig& c);
}  // namespace ode

}  // namespace lagid

#include "lagid/errors.hpp"

namespace lagid {

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace lagid
