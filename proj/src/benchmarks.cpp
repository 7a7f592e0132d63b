#include "lagid/benchmarks.hpp"

#include "lagid/errors.hpp"
#include "lagid/models.hpp"
#include "lagid/rng.hpp"
#include "lagid/rollout.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lagid {

Eigen::VectorXd nmsd_rhs(const NmsdParams& p, const State& s, double u) {
  s.validate();
  if (s.dof() != 1) throw ContractViolation("N-MSD state must have one coordinate");
  const double x = s.q(0), v = s.qdot(0);
  Eigen::VectorXd d(2);
  d << v, (u - p.k1 * x - p.k2 * x * x * x - p.b1 * v - p.b2 * v * v * v) / p.m;
  return d;
}

Eigen::VectorXd furuta_rhs(const FurutaParams& p, const State& s, double u) {
  s.validate();
  if (s.dof() != 2) throw ContractViolation("Furuta state must have two coordinates");
  const Model gt = ground_truth_model(SystemId::furuta, {}, p);
  Eigen::VectorXd d(4);
  d << s.qdot, forward_dynamics(gt.mechanics(), s, Eigen::VectorXd::Constant(1, u));
  return d;
}

double chirp(double amplitude, double f0, double f1, double T, double t) {
  if (!(T > 0)) throw ConfigError("chirp duration must be positive");
  const double phase = f0 * t + (f1 - f0) * t * t / (2.0 * T);
  return amplitude * std::sin(2.0 * std::numbers::pi * phase);
}

double square_impulse(double amplitude, double start, double width, double t) {
  if (!(width > 0)) throw ConfigError("impulse width must be positive");
  return (t >= start && t < start + width) ? amplitude : 0.0;
}

void Trajectory::validate() const {
  if (!(dt > 0)) throw ContractViolation("trajectory sample interval must be positive");
  if (states.rows() < 2 || states.rows() % 2 != 0) throw ContractViolation("trajectory states must stack (q, q̇)");
  if (states.cols() != inputs.cols()) throw ContractViolation("trajectory states and inputs differ in length");
  if (states.cols() < 1) throw ContractViolation("empty trajectory");
}

void Dataset::validate() const {
  for (const auto& t : trajectories) {
    t.validate();
    if (std::abs(t.dt - dt) > 1e-12 * dt) throw ContractViolation("dataset trajectories must share one sample interval");
    if (t.states.rows() != trajectories.front().states.rows() || t.inputs.rows() != trajectories.front().inputs.rows()) {
      throw ContractViolation("dataset trajectories must share dimensions");
    }
  }
}

std::vector<double> filter_velocity(const DerivativeFilter& f, const std::vector<double>& positions, double dt) {
  if (std::abs(dt - f.dt) > 1e-12 * f.dt) throw ConfigError("sample interval does not match the filter discretization");
  if (!(f.omega0 > 0 && f.xi > 0 && dt > 0)) throw ConfigError("invalid derivative filter parameters");
  const double k = 2.0 / dt;
  const double w2 = f.omega0 * f.omega0;
  const double a0 = k * k + 2.0 * f.xi * f.omega0 * k + w2;
  const double a1 = (2.0 * w2 - 2.0 * k * k) / a0;
  const double a2 = (k * k - 2.0 * f.xi * f.omega0 * k + w2) / a0;
  const double b0 = w2 * k / a0;
  const double b1 = 0.0;
  const double b2 = -b0;
  std::vector<double> out(positions.size());
  if (positions.empty()) return out;
  // Transposed direct form II, initialised at rest on the first sample.
  double z1 = -b0 * positions[0];
  double z2 = -(b0 + b1) * positions[0];
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double x = positions[i];
    const double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    out[i] = y;
  }
  return out;
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = nlohmann::json{{"dt", c.dt},
                     {"nmsd_chirp_amplitude", c.nmsd_chirp_amplitude},
                     {"nmsd_square_amplitude", c.nmsd_square_amplitude},
                     {"nmsd_test_trajectories", c.nmsd_test_trajectories},
                     {"furuta_chirp_amplitude", c.furuta_chirp_amplitude},
                     {"furuta_forced_trajectories", c.furuta_forced_trajectories},
                     {"velocity_source", c.velocity_source},
                     {"filter", {{"omega0", c.filter.omega0}, {"xi", c.filter.xi}}},
                     {"rtol", c.rtol},
                     {"atol", c.atol}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  GenerationConfig d;
  c.dt = j.value("dt", d.dt);
  c.nmsd_chirp_amplitude = j.value("nmsd_chirp_amplitude", d.nmsd_chirp_amplitude);
  c.nmsd_square_amplitude = j.value("nmsd_square_amplitude", d.nmsd_square_amplitude);
  c.nmsd_test_trajectories = j.value("nmsd_test_trajectories", d.nmsd_test_trajectories);
  c.furuta_chirp_amplitude = j.value("furuta_chirp_amplitude", d.furuta_chirp_amplitude);
  c.furuta_forced_trajectories = j.value("furuta_forced_trajectories", d.furuta_forced_trajectories);
  c.velocity_source = j.value("velocity_source", d.velocity_source);
  if (j.contains("filter")) {
    c.filter.omega0 = j["filter"].value("omega0", d.filter.omega0);
    c.filter.xi = j["filter"].value("xi", d.filter.xi);
  }
  c.rtol = j.value("rtol", d.rtol);
  c.atol = j.value("atol", d.atol);
  if (c.velocity_source != "exact" && c.velocity_source != "filtered") {
    throw ConfigError("velocity_source must be 'exact' or 'filtered'");
  }
  if (!(c.dt > 0)) throw ConfigError("generation dt must be positive");
}

Trajectory simulate(SystemId system, const nlohmann::json& params, const Eigen::VectorXd& x0,
                    const Eigen::MatrixXd& inputs, double dt, double rtol, double atol) {
  Model gt = system == SystemId::nmsd ? ground_truth_model(system, params.get<NmsdParams>(), {})
                                      : ground_truth_model(system, {}, params.get<FurutaParams>());
  if (x0.size() != gt.state_dim() || inputs.rows() != gt.input_dim()) {
    throw ContractViolation("initial state or input has wrong dimension for the system");
  }
  const auto n = static_cast<std::size_t>(inputs.cols());
  Trajectory traj;
  traj.t0 = 0.0;
  traj.dt = dt;
  traj.inputs = inputs;
  ode::InterpolatedSignal signal(0.0, dt, inputs);
  ModelRhs rhs(gt, {&signal});
  ode::SolverConfig cfg;
  cfg.rtol = rtol;
  cfg.atol = atol;
  cfg.min_step = 1e-14;
  auto grid = ode::uniform_grid(0.0, dt, n - 1);
  ode::BatchSolution sol = ode::solve_batch(rhs, x0, grid, cfg);
  if (!sol.all_completed()) {
    std::ostringstream os;
    os << "ground-truth simulation failed at t = " << sol.failure_time[0];
    throw IntegrationError(os.str(), sol.failure_time[0]);
  }
  traj.states.resize(x0.size(), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) traj.states.col(static_cast<Eigen::Index>(k)) = sol.values[k].col(0);
  return traj;
}

namespace {

void apply_velocity_source(Trajectory& t, const GenerationConfig& cfg) {
  if (cfg.velocity_source != "filtered") return;
  DerivativeFilter f = cfg.filter;
  f.dt = t.dt;
  const int n = t.dof();
  for (int i = 0; i < n; ++i) {
    std::vector<double> p(static_cast<std::size_t>(t.samples()));
    for (Eigen::Index j = 0; j < t.samples(); ++j) p[static_cast<std::size_t>(j)] = t.states(i, j);
    auto v = filter_velocity(f, p, t.dt);
    for (Eigen::Index j = 0; j < t.samples(); ++j) t.states(n + i, j) = v[static_cast<std::size_t>(j)];
  }
}

Dataset make_dataset(SystemId system, const std::string& split, std::uint64_t seed, const nlohmann::json& params,
                     const GenerationConfig& cfg) {
  Dataset d;
  d.system = system;
  d.split = split;
  d.dt = cfg.dt;
  d.seed = seed;
  d.params = params;
  d.velocity_source = cfg.velocity_source;
  return d;
}

std::size_t samples_for(double duration, double dt) { return static_cast<std::size_t>(std::llround(duration / dt)) + 1; }

Eigen::MatrixXd sample_input(std::size_t n, double dt, const std::function<double(double)>& u) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) m(0, static_cast<Eigen::Index>(j)) = u(static_cast<double>(j) * dt);
  return m;
}

}  // namespace

NmsdDatasets generate_nmsd_dataset(const NmsdParams& params, std::uint64_t seed, const GenerationConfig& cfg) {
  params.validate();
  const nlohmann::json pj = params;
  NmsdDatasets out;
  out.train = make_dataset(SystemId::nmsd, "train", seed, pj, cfg);
  out.test_chirp = make_dataset(SystemId::nmsd, "test_chirp", seed, pj, cfg);
  out.test_square = make_dataset(SystemId::nmsd, "test_square", seed, pj, cfg);

  auto initial_state = [](Rng& rng) {
    Eigen::VectorXd x0(2);
    x0(0) = rng.uniform(-1.0, 1.0);
    x0(1) = rng.uniform(-5.0, 5.0);
    return x0;
  };

  {
    Rng rng(Rng::derive(seed, 0));
    const double T = 60.0;
    const std::size_t n = samples_for(T, cfg.dt);
    const double A = cfg.nmsd_chirp_amplitude;
    Trajectory full = simulate(SystemId::nmsd, pj, initial_state(rng),
                               sample_input(n, cfg.dt, [&](double t) { return chirp(A, 0.1, 1.1, T, t); }), cfg.dt,
                               cfg.rtol, cfg.atol);
    apply_velocity_source(full, cfg);
    const std::size_t per = samples_for(2.0, cfg.dt) - 1;
    for (std::size_t s = 0; s + per < n; s += per) {
      Trajectory seg;
      seg.t0 = full.time(static_cast<Eigen::Index>(s));
      seg.dt = cfg.dt;
      seg.states = full.states.middleCols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(per + 1));
      seg.inputs = full.inputs.middleCols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(per + 1));
      out.train.trajectories.push_back(std::move(seg));
    }
  }
  for (std::size_t i = 0; i < cfg.nmsd_test_trajectories; ++i) {
    Rng rng(Rng::derive(seed, 100 + i));
    const double T = 25.0;
    const double A = cfg.nmsd_chirp_amplitude;
    Trajectory t = simulate(SystemId::nmsd, pj, initial_state(rng),
                            sample_input(samples_for(T, cfg.dt), cfg.dt, [&](double s) { return chirp(A, 0.1, 1.1, T, s); }),
                            cfg.dt, cfg.rtol, cfg.atol);
    apply_velocity_source(t, cfg);
    out.test_chirp.trajectories.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < cfg.nmsd_test_trajectories; ++i) {
    Rng rng(Rng::derive(seed, 200 + i));
    const double A = cfg.nmsd_square_amplitude;
    Trajectory t = simulate(SystemId::nmsd, pj, initial_state(rng),
                            sample_input(samples_for(15.0, cfg.dt), cfg.dt, [&](double s) { return square_impulse(A, 2.0, 3.0, s); }),
                            cfg.dt, cfg.rtol, cfg.atol);
    apply_velocity_source(t, cfg);
    out.test_square.trajectories.push_back(std::move(t));
  }
  return out;
}

std::string to_string(FurutaMode m) {
  switch (m) {
    case FurutaMode::train_free:
      return "train";
    case FurutaMode::test_free:
      return "test_free";
    case FurutaMode::test_forced:
      return "test_forced";
  }
  return "unknown";
}

FurutaMode parse_furuta_mode(const std::string& s) {
  if (s == "train" || s == "train_free") return FurutaMode::train_free;
  if (s == "test_free") return FurutaMode::test_free;
  if (s == "test_forced") return FurutaMode::test_forced;
  throw ConfigError("unknown Furuta split '" + s + "' (valid: train, test_free, test_forced)");
}

Dataset generate_furuta_dataset(const FurutaParams& params, std::uint64_t seed, FurutaMode mode,
                                const GenerationConfig& cfg) {
  params.validate();
  const nlohmann::json pj = params;
  Dataset d = make_dataset(SystemId::furuta, to_string(mode), seed, pj, cfg);
  std::size_t count = 64;
  double duration = 1.0;
  double rate = 5.0;
  std::uint64_t stream = 1000;
  if (mode == FurutaMode::test_free) {
    count = 6;
    duration = 6.0;
    rate = 20.0;
    stream = 2000;
  } else if (mode == FurutaMode::test_forced) {
    count = cfg.furuta_forced_trajectories;
    duration = 20.0;
    stream = 3000;
  }
  const std::size_t n = samples_for(duration, cfg.dt);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(Rng::derive(seed, stream + i));
    const double pi = std::numbers::pi;
    Eigen::VectorXd x0(4);
    x0(0) = rng.uniform(-pi, pi);
    x0(1) = rng.uniform(-pi, pi);
    x0(2) = rng.uniform(-rate, rate);
    x0(3) = rng.uniform(-rate, rate);
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(n));
    if (mode == FurutaMode::test_forced) {
      const double A = cfg.furuta_chirp_amplitude;
      u = sample_input(n, cfg.dt, [&](double t) { return chirp(A, 0.5, 6.0, duration, t); });
    }
    Trajectory t = simulate(SystemId::furuta, pj, x0, u, cfg.dt, cfg.rtol, cfg.atol);
    apply_velocity_source(t, cfg);
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& file) {
  t.validate();
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  const int n = t.dof();
  os << "t";
  for (int i = 0; i < n; ++i) os << ",q" << i;
  for (int i = 0; i < n; ++i) os << ",qd" << i;
  for (Eigen::Index i = 0; i < t.inputs.rows(); ++i) os << ",u" << i;
  os << '\n';
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (Eigen::Index j = 0; j < t.samples(); ++j) {
    put(t.time(j));
    for (Eigen::Index i = 0; i < t.states.rows(); ++i) {
      os << ',';
      put(t.states(i, j));
    }
    for (Eigen::Index i = 0; i < t.inputs.rows(); ++i) {
      os << ',';
      put(t.inputs(i, j));
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + file.string());
}

Trajectory read_trajectory_csv(const std::filesystem::path& file, int dof, int input_dim) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot open trajectory file " + file.string());
  std::string line;
  std::getline(is, line);
  const int cols = 1 + 2 * dof + input_dim;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      r.push_back(std::strtod(line.c_str() + pos, nullptr));
      pos = next + 1;
    }
    if (static_cast<int>(r.size()) != cols) throw ConfigError("trajectory row has wrong column count in " + file.string());
    rows.push_back(std::move(r));
  }
  if (rows.size() < 2) throw ConfigError("trajectory file needs at least two rows: " + file.string());
  Trajectory t;
  t.t0 = rows[0][0];
  t.dt = rows[1][0] - rows[0][0];
  t.states.resize(2 * dof, static_cast<Eigen::Index>(rows.size()));
  t.inputs.resize(input_dim, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (int i = 0; i < 2 * dof; ++i) t.states(i, static_cast<Eigen::Index>(j)) = rows[j][static_cast<std::size_t>(1 + i)];
    for (int i = 0; i < input_dim; ++i) {
      t.inputs(i, static_cast<Eigen::Index>(j)) = rows[j][static_cast<std::size_t>(1 + 2 * dof + i)];
    }
  }
  return t;
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  d.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "traj_%03zu.csv", i);
    write_trajectory_csv(d.trajectories[i], dir / name);
    files.push_back({{"file", name}, {"t0", d.trajectories[i].t0}, {"samples", d.trajectories[i].samples()}});
  }
  const int dof = d.trajectories.empty() ? (d.system == SystemId::nmsd ? 1 : 2) : d.trajectories.front().dof();
  const auto input_dim = d.trajectories.empty() ? 1 : d.trajectories.front().inputs.rows();
  nlohmann::json j{{"system", to_string(d.system)},
                   {"split", d.split},
                   {"dt", d.dt},
                   {"seed", d.seed},
                   {"params", d.params},
                   {"velocity_source", d.velocity_source},
                   {"dof", dof},
                   {"input_dim", input_dim},
                   {"trajectories", files}};
  std::ofstream os(dir / "dataset.json", std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing dataset manifest in " + dir.string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.json");
  if (!is) throw ConfigError("no dataset manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  Dataset d;
  d.system = parse_system_id(j.at("system").get<std::string>());
  d.split = j.at("split").get<std::string>();
  d.dt = j.at("dt").get<double>();
  d.seed = j.value("seed", std::uint64_t{0});
  d.params = j.value("params", nlohmann::json::object());
  d.velocity_source = j.value("velocity_source", std::string("exact"));
  const int dof = j.at("dof").get<int>();
  const int input_dim = j.at("input_dim").get<int>();
  for (const auto& f : j.at("trajectories")) {
    Trajectory t = read_trajectory_csv(dir / f.at("file").get<std::string>(), dof, input_dim);
    t.dt = d.dt;
    t.t0 = f.value("t0", t.t0);
    d.trajectories.push_back(std::move(t));
  }
  d.validate();
  return d;
}

}  // namespace lagid
