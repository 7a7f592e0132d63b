#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace lagid {

enum class SystemId { nmsd, furuta };

std::string to_string(SystemId id);
/// Parses "nmsd" or "furuta"; throws ConfigError naming the valid ids otherwise.
SystemId parse_system_id(const std::string& name);

/// Nonlinear mass-spring-damper: M = m, V = ½k1 p² + ¼k2 p⁴,
/// τ_NC = −b1 ṗ − b2 ṗ³, τ_u = u.
struct NmsdParams {
  double m = 1.0;
  double k1 = 1.0;
  double k2 = 0.5;
  double b1 = 0.2;
  double b2 = 0.1;

  void validate() const;
};

/// Furuta pendulum with q = (α, β). Defaults are Quanser QUBE-Servo 2 vendor
/// nominals (rotor arm 0.095 kg / 0.085 m, pendulum 0.024 kg / 0.129 m,
/// motor k_t = k_m = 0.042, R_m = 8.4 Ω). J1 is the rotor-axis inertia
/// including the pendulum point mass, J2 the pendulum inertia about its pivot.
/// Viscous coefficients are not published by the vendor; ours.
struct FurutaParams {
  double J1 = 0.095 * 0.085 * 0.085 / 12.0 + 0.024 * 0.085 * 0.085;
  double J2 = 0.024 * 0.129 * 0.129 / 3.0;
  double m_p = 0.024;
  double L_p = 0.129;
  double L_r = 0.085;
  double c_r = 5e-4;
  double c_p = 5e-5;
  double k_t = 0.042;
  double R_m = 8.4;
  double k_m = 0.042;
  double g = 9.81;

  void validate() const;
};

void to_json(nlohmann::json& j, const NmsdParams& p);
void from_json(const nlohmann::json& j, NmsdParams& p);
void to_json(nlohmann::json& j, const FurutaParams& p);
void from_json(const nlohmann::json& j, FurutaParams& p);

}  // namespace lagid
