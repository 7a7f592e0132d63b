#include "lagid/systems.hpp"

#include "lagid/errors.hpp"

namespace lagid {

std::string to_string(SystemId id) {
  switch (id) {
    case SystemId::nmsd:
      return "nmsd";
    case SystemId::furuta:
      return "furuta";
  }
  return "unknown";
}

SystemId parse_system_id(const std::string& name) {
  if (name == "nmsd") return SystemId::nmsd;
  if (name == "furuta") return SystemId::furuta;
  throw ConfigError("unknown system id '" + name + "' (valid ids: nmsd, furuta)");
}

void NmsdParams::validate() const {
  if (!(m > 0 && k1 > 0 && k2 > 0 && b1 > 0 && b2 > 0)) {
    throw ConfigError("N-MSD parameters m, k1, k2, b1, b2 must all be positive");
  }
}

void FurutaParams::validate() const {
  if (!(J1 > 0 && J2 > 0 && m_p > 0 && L_p > 0 && L_r > 0 && k_t > 0 && R_m > 0 && g > 0)) {
    throw ConfigError("Furuta inertias, masses, lengths and motor constants must be positive");
  }
  if (c_r < 0 || c_p < 0 || k_m < 0) throw ConfigError("Furuta friction coefficients must be non-negative");
  // Positive definiteness of M at β = 0, the worst case for the coupling term.
  const double c = 0.5 * m_p * L_r * L_p;
  if (J1 * J2 - c * c <= 1e-12 * J1 * J2) throw ConfigError("Furuta parameters give a singular mass matrix");
}

void to_json(nlohmann::json& j, const NmsdParams& p) {
  j = nlohmann::json{{"m", p.m}, {"k1", p.k1}, {"k2", p.k2}, {"b1", p.b1}, {"b2", p.b2}};
}

void from_json(const nlohmann::json& j, NmsdParams& p) {
  NmsdParams d;
  p.m = j.value("m", d.m);
  p.k1 = j.value("k1", d.k1);
  p.k2 = j.value("k2", d.k2);
  p.b1 = j.value("b1", d.b1);
  p.b2 = j.value("b2", d.b2);
}

void to_json(nlohmann::json& j, const FurutaParams& p) {
  j = nlohmann::json{{"J1", p.J1},   {"J2", p.J2},   {"m_p", p.m_p}, {"L_p", p.L_p},
                     {"L_r", p.L_r}, {"c_r", p.c_r}, {"c_p", p.c_p}, {"k_t", p.k_t},
                     {"R_m", p.R_m}, {"k_m", p.k_m}, {"g", p.g}};
}

void from_json(const nlohmann::json& j, FurutaParams& p) {
  FurutaParams d;
  p.J1 = j.value("J1", d.J1);
  p.J2 = j.value("J2", d.J2);
  p.m_p = j.value("m_p", d.m_p);
  p.L_p = j.value("L_p", d.L_p);
  p.L_r = j.value("L_r", d.L_r);
  p.c_r = j.value("c_r", d.c_r);
  p.c_p = j.value("c_p", d.c_p);
  p.k_t = j.value("k_t", d.k_t);
  p.R_m = j.value("R_m", d.R_m);
  p.k_m = j.value("k_m", d.k_m);
  p.g = j.value("g", d.g);
}

}  // namespace lagid
