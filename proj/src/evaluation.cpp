#include "lagid/evaluation.hpp"

#include "lagid/config.hpp"
#include "lagid/errors.hpp"
#include "lagid/parallel.hpp"
#include "lagid/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace lagid {

namespace {

Model reference_model(const Dataset& d) {
  if (d.system == SystemId::nmsd) return ground_truth_model(SystemId::nmsd, d.params.get<NmsdParams>());
  return ground_truth_model(SystemId::furuta, {}, d.params.get<FurutaParams>());
}

void require_energy(const Model& model) {
  if (!model.identifies_lagrangian()) throw CapabilityError("model has no identified energy (APH)");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<Eigen::Index> wrapped_rows(SystemId s) {
  return s == SystemId::furuta ? std::vector<Eigen::Index>{1} : std::vector<Eigen::Index>{};
}

}  // namespace

Predictions rollout_predictions(const RhsFactory& make_rhs, const Dataset& test, const RolloutOptions& opt) {
  const std::size_t n = test.trajectories.size();
  Predictions p;
  p.states.resize(n);
  p.diverged.assign(n, false);
  std::vector<char> flags(n, 0);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    const Trajectory& t = test.trajectories[i];
    const ode::InterpolatedSignal u = t.input_signal();
    std::unique_ptr<ode::BatchRhs> rhs = make_rhs(u);
    const auto grid = ode::uniform_grid(t.t0, t.dt, static_cast<std::size_t>(t.samples() - 1));
    ode::BatchSolution sol = ode::solve_batch(*rhs, t.states.col(0), grid, opt.solver);
    const std::size_t valid = sol.valid_saves[0];
    Eigen::MatrixXd out(t.states.rows(), static_cast<Eigen::Index>(valid));
    for (std::size_t k = 0; k < valid; ++k) out.col(static_cast<Eigen::Index>(k)) = sol.values[k].col(0);
    p.states[i] = std::move(out);
    flags[i] = sol.completed(0) ? 0 : 1;
  });
  for (std::size_t i = 0; i < n; ++i) p.diverged[i] = flags[i] != 0;
  return p;
}

Predictions rollout_predictions(const Model& model, const Dataset& test, const RolloutOptions& opt) {
  return rollout_predictions(
      [&](const ode::InterpolatedSignal& u) -> std::unique_ptr<ode::BatchRhs> {
        return std::make_unique<ModelRhs>(model, std::vector<const ode::InterpolatedSignal*>{&u});
      },
      test, opt);
}

double angle_difference(double a, double b) {
  const double two_pi = 2 * std::numbers::pi;
  double d = std::fmod(a - b, two_pi);
  if (d > std::numbers::pi) d -= two_pi;
  if (d <= -std::numbers::pi) d += two_pi;
  return d;
}

double log_rmse(const std::vector<Eigen::MatrixXd>& predicted, const std::vector<Eigen::MatrixXd>& reference,
                const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& wrapped) {
  if (rows.empty()) throw ContractViolation("log_rmse needs at least one channel");
  if (predicted.size() != reference.size()) throw ContractViolation("prediction and reference counts differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const Eigen::Index cols = std::min(predicted[i].cols(), reference[i].cols());
    for (Eigen::Index r : rows) {
      if (r < 0 || r >= predicted[i].rows() || r >= reference[i].rows()) {
        throw ContractViolation("log_rmse channel out of range");
      }
      const bool wrap = std::find(wrapped.begin(), wrapped.end(), r) != wrapped.end();
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double d = wrap ? angle_difference(predicted[i](r, j), reference[i](r, j))
                              : predicted[i](r, j) - reference[i](r, j);
        sum += d * d;
      }
      count += static_cast<std::size_t>(cols);
    }
  }
  if (count == 0) throw ContractViolation("log_rmse over an empty selection");
  const double rmse = std::sqrt(sum / static_cast<double>(count));
  if (std::isnan(rmse)) return rmse;
  return std::log10(std::max(rmse, kRmseFloor));
}

Eigen::VectorXd model_energy(const Model& model, const Eigen::MatrixXd& states) {
  require_energy(model);
  if (states.rows() != model.state_dim()) throw ContractViolation("state dimension does not match the model");
  const int n = model.dof();
  ad::Tape tape(false);
  BoundParams bp(tape, model.parameters(), false);
  LagrangianTerms terms = model.lagrangian_terms(tape, bp, tape.constant(states.topRows(n)));
  return mech::energy(terms, tape.constant(states.bottomRows(n))).value().row(0).transpose();
}

EnergyCalibration fit_energy_scale(const Model& model, const Eigen::MatrixXd& states,
                                   const Eigen::VectorXd& reference) {
  const Eigen::VectorXd e = model_energy(model, states);
  if (reference.size() != e.size()) throw ContractViolation("one reference energy per state required");
  const double mean = e.mean();
  const double spread = std::sqrt((e.array() - mean).square().mean());
  if (!(spread > 1e-9 * std::max(1.0, std::abs(mean)))) {
    throw CalibrationError("model energy is nearly constant along the calibration trajectory");
  }
  Eigen::MatrixXd a(e.size(), 2);
  a.col(0) = e;
  a.col(1).setOnes();
  const Eigen::Vector2d x = a.colPivHouseholderQr().solve(reference);
  if (!(x(0) > 0)) throw CalibrationError("fitted energy scale is not positive (" + fmt(x(0)) + ")");
  EnergyCalibration c;
  c.scale = x(0);
  c.offset = x(1);
  c.residual = std::sqrt((a * x - reference).squaredNorm() / static_cast<double>(e.size()));
  return c;
}

Eigen::VectorXd energy_along_trajectory(const Model& model, const Eigen::MatrixXd& states, bool normalize,
                                        const EnergyCalibration& cal) {
  Eigen::VectorXd e = model_energy(model, states);
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = cal.apply(e(i));
  if (normalize && e.size() > 0) {
    const double e0 = e(0);
    e /= std::abs(e0) > 1e-9 ? e0 : std::max(e.cwiseAbs().maxCoeff(), 1e-300);
  }
  return e;
}

double increase_to_decrease_ratio(const Eigen::VectorXd& s) {
  double up = 0.0, down = 0.0;
  for (Eigen::Index i = 1; i < s.size(); ++i) {
    const double d = s(i) - s(i - 1);
    if (d > 0) up += d;
    else down -= d;
  }
  if (down == 0.0) return up > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  return up / down;
}

EnergyGrid energy_grid(const Model& model, const GridAxis& x, const GridAxis& y, const Eigen::VectorXd& fixed,
                       const EnergyCalibration& cal) {
  require_energy(model);
  if (x.points < 2 || y.points < 2) throw ContractViolation("energy grids need at least two points per axis");
  const Eigen::Index d = model.state_dim();
  if (x.state_index >= d || y.state_index >= d || x.state_index == y.state_index) {
    throw ContractViolation("invalid grid axes");
  }
  const auto nx = static_cast<Eigen::Index>(x.points), ny = static_cast<Eigen::Index>(y.points);
  Eigen::MatrixXd states(d, nx * ny);
  for (Eigen::Index i = 0; i < nx; ++i) {
    for (Eigen::Index j = 0; j < ny; ++j) {
      Eigen::VectorXd s = fixed.size() == d ? fixed : Eigen::VectorXd::Zero(d);
      s(x.state_index) = x.lo + (x.hi - x.lo) * static_cast<double>(i) / static_cast<double>(nx - 1);
      s(y.state_index) = y.lo + (y.hi - y.lo) * static_cast<double>(j) / static_cast<double>(ny - 1);
      states.col(i * ny + j) = s;
    }
  }
  const Eigen::VectorXd e = model_energy(model, states);
  EnergyGrid g;
  g.x = x;
  g.y = y;
  g.values.resize(nx, ny);
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < ny; ++j) g.values(i, j) = cal.apply(e(i * ny + j));
  if (!g.values.allFinite()) throw NumericError("non-finite energy on the grid");
  g.normalization = std::max(g.values.cwiseAbs().maxCoeff(), 1e-300);
  return g;
}

std::pair<GridAxis, GridAxis> default_grid_axes(SystemId system) {
  if (system == SystemId::nmsd) return {GridAxis{"p", 0, -2.0, 2.0, 41}, GridAxis{"pdot", 1, -5.0, 5.0, 41}};
  return {GridAxis{"beta", 1, -std::numbers::pi, std::numbers::pi, 41}, GridAxis{"betadot", 3, -10.0, 10.0, 41}};
}

ForceTerms euler_lagrange_terms(const Model& model, const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& accelerations) {
  require_energy(model);
  const int n = model.dof();
  if (states.rows() != 2 * n || accelerations.rows() != n || accelerations.cols() != states.cols()) {
    throw ContractViolation("states and accelerations do not match the model");
  }
  ad::Tape tape(false);
  BoundParams bp(tape, model.parameters(), false);
  ad::Var qd = tape.constant(states.bottomRows(n));
  LagrangianTerms terms = model.lagrangian_terms(tape, bp, tape.constant(states.topRows(n)));
  ForceTerms f;
  f.inertial = mech::inertial(terms, tape.constant(accelerations)).value();
  f.coriolis = mech::coriolis(terms, qd).value();
  f.potential_derived = mech::lagrangian_dq(terms, qd).value();
  return f;
}

namespace {

Eigen::MatrixXd true_accelerations(const Model& reference, const Trajectory& t) {
  ad::Tape tape(false);
  BoundParams bp(tape, reference.parameters(), false);
  std::vector<Eigen::Index> singular;
  ad::Var f = reference.state_derivative(tape, bp, tape.constant(t.states), tape.constant(t.inputs), &singular);
  if (!singular.empty()) throw SingularMassError("reference mass matrix singular on a test sample");
  return f.value().bottomRows(reference.dof());
}

void pooled_force_errors(const std::vector<ForceTerms>& learned, const std::vector<ForceTerms>& truth,
                         ForceErrors& out) {
  auto component = [&](auto member) {
    std::vector<Eigen::MatrixXd> a, b;
    for (std::size_t i = 0; i < learned.size(); ++i) {
      a.push_back(learned[i].*member);
      b.push_back(truth[i].*member);
    }
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < a.front().rows(); ++r) rows.push_back(r);
    return log_rmse(a, b, rows);
  };
  out.inertial = component(&ForceTerms::inertial);
  out.coriolis = component(&ForceTerms::coriolis);
  out.potential_derived = component(&ForceTerms::potential_derived);
}

}  // namespace

ForceErrors force_decomposition_errors(const Model& model, const Model& reference, const Dataset& test) {
  require_energy(model);
  std::vector<ForceTerms> learned, truth;
  for (const Trajectory& t : test.trajectories) {
    const Eigen::MatrixXd acc = true_accelerations(reference, t);
    learned.push_back(euler_lagrange_terms(model, t.states, acc));
    truth.push_back(euler_lagrange_terms(reference, t.states, acc));
  }
  if (learned.empty()) throw ContractViolation("empty test set");
  ForceErrors e;
  pooled_force_errors(learned, truth, e);
  return e;
}

bool EvalReport::any_diverged() const { return std::find(diverged.begin(), diverged.end(), true) != diverged.end(); }

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"model_id", r.model_id},
                     {"loss", r.loss},
                     {"test_set", r.test_set},
                     {"system", to_string(r.system)},
                     {"state_names", r.state_names},
                     {"state_log_rmse", r.state_log_rmse},
                     {"diverged", r.diverged},
                     {"energy_note", r.energy_note},
                     {"metadata", r.metadata}};
  if (r.forces) {
    j["force_log_rmse"] = {{"inertial", r.forces->inertial},
                           {"coriolis", r.forces->coriolis},
                           {"potential_derived", r.forces->potential_derived}};
  } else {
    j["force_log_rmse"] = nullptr;
  }
  j["energy_log_rmse"] = r.energy_log_rmse ? nlohmann::json(*r.energy_log_rmse) : nlohmann::json(nullptr);
  if (r.calibration) {
    j["energy_calibration"] = {
        {"scale", r.calibration->scale}, {"offset", r.calibration->offset}, {"residual", r.calibration->residual}};
  } else {
    j["energy_calibration"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  try {
    r.model_id = j.at("model_id").get<std::string>();
    r.loss = j.at("loss").get<std::string>();
    r.test_set = j.at("test_set").get<std::string>();
    r.system = parse_system_id(j.at("system").get<std::string>());
    r.state_names = j.at("state_names").get<std::vector<std::string>>();
    r.state_log_rmse = j.at("state_log_rmse").get<std::vector<double>>();
    r.diverged = j.at("diverged").get<std::vector<bool>>();
    r.energy_note = j.value("energy_note", "");
    r.metadata = j.value("metadata", nlohmann::json::object());
    const auto& f = j.at("force_log_rmse");
    if (f.is_null()) r.forces.reset();
    else r.forces = ForceErrors{f.at("inertial"), f.at("coriolis"), f.at("potential_derived")};
    const auto& e = j.at("energy_log_rmse");
    if (e.is_null()) r.energy_log_rmse.reset();
    else r.energy_log_rmse = e.get<double>();
    const auto& c = j.at("energy_calibration");
    if (c.is_null()) r.calibration.reset();
    else r.calibration = EnergyCalibration{c.at("scale"), c.at("offset"), c.at("residual")};
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed evaluation report: ") + ex.what());
  }
}

std::vector<std::string> state_names(SystemId system) {
  if (system == SystemId::nmsd) return {"p", "pdot"};
  return {"alpha", "beta", "alphadot", "betadot"};
}

EvalResult evaluate(const Model& model, const Dataset& test, const EvalConfig& cfg) {
  test.validate();
  if (model.spec().system != test.system) throw ConfigError("model and test set describe different systems");
  if (test.trajectories.empty()) throw ContractViolation("empty test set");
  const Model reference = reference_model(test);

  EvalResult res;
  EvalReport& rep = res.report;
  rep.model_id = cfg.model_id;
  rep.loss = cfg.loss;
  rep.test_set = test.split;
  rep.system = test.system;
  rep.state_names = state_names(test.system);
  rep.metadata = {{"model_kind", to_string(model.kind())}, {"velocity_source", test.velocity_source}};

  res.predictions = rollout_predictions(model, test, cfg.rollout);
  rep.diverged = res.predictions.diverged;
  std::vector<Eigen::MatrixXd> refs;
  for (const Trajectory& t : test.trajectories) refs.push_back(t.states);
  const auto wrapped = wrapped_rows(test.system);
  for (Eigen::Index r = 0; r < model.state_dim(); ++r) {
    rep.state_log_rmse.push_back(log_rmse(res.predictions.states, refs, {r}, wrapped));
  }

  if (!model.identifies_lagrangian()) {
    rep.energy_note = "not applicable: model has no identified energy";
    return res;
  }

  std::vector<Eigen::MatrixXd> acc;
  for (const Trajectory& t : test.trajectories) {
    acc.push_back(true_accelerations(reference, t));
    res.learned_terms.push_back(euler_lagrange_terms(model, t.states, acc.back()));
    res.true_terms.push_back(euler_lagrange_terms(reference, t.states, acc.back()));
  }
  ForceErrors fe;
  pooled_force_errors(res.learned_terms, res.true_terms, fe);
  rep.forces = fe;

  const Trajectory& cal_traj = cfg.calibration ? *cfg.calibration : test.trajectories.front();
  EnergyCalibration cal;
  try {
    cal = fit_energy_scale(model, cal_traj.states, model_energy(reference, cal_traj.states));
    rep.calibration = cal;
  } catch (const CalibrationError& e) {
    rep.energy_note = std::string("calibration failed: ") + e.what();
  }

  std::vector<Eigen::MatrixXd> e_model, e_true;
  for (const Trajectory& t : test.trajectories) {
    TrajectoryEnergy te;
    te.time.resize(t.samples());
    for (Eigen::Index j = 0; j < t.samples(); ++j) te.time(j) = t.time(j);
    const Eigen::VectorXd truth = model_energy(reference, t.states);
    Eigen::VectorXd learned = model_energy(model, t.states);
    for (Eigen::Index j = 0; j < learned.size(); ++j) learned(j) = cal.apply(learned(j));
    e_true.push_back(truth.transpose());
    e_model.push_back(learned.transpose());
    te.truth = energy_along_trajectory(reference, t.states, true);
    te.model = energy_along_trajectory(model, t.states, true, cal);
    res.energy.push_back(std::move(te));
  }
  if (rep.calibration) rep.energy_log_rmse = log_rmse(e_model, e_true, {0});

  auto [ax, ay] = default_grid_axes(test.system);
  ax.points = ay.points = cfg.grid_points;
  res.grids.push_back(energy_grid(model, ax, ay, {}, cal));
  res.grids.push_back(energy_grid(reference, ax, ay));
  return res;
}

std::vector<std::string> metrics_rows(const EvalReport& r) {
  std::vector<std::string> rows;
  const std::string prefix = r.model_id + "," + r.loss + "," + r.test_set + ",";
  for (std::size_t i = 0; i < r.state_names.size(); ++i) {
    rows.push_back(prefix + r.state_names[i] + "," + fmt(r.state_log_rmse[i]));
  }
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("N/A"); };
  rows.push_back(prefix + "inertial," + opt(r.forces ? std::optional(r.forces->inertial) : std::nullopt));
  rows.push_back(prefix + "coriolis," + opt(r.forces ? std::optional(r.forces->coriolis) : std::nullopt));
  rows.push_back(prefix + "potential_derived," +
                 opt(r.forces ? std::optional(r.forces->potential_derived) : std::nullopt));
  rows.push_back(prefix + "energy," + opt(r.energy_log_rmse));
  rows.push_back(prefix + "diverged," + std::to_string(std::count(r.diverged.begin(), r.diverged.end(), true)));
  return rows;
}

void write_metrics_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "model,loss,test_set,channel,log_rmse\n";
  for (const EvalReport& r : reports)
    for (const std::string& row : metrics_rows(r)) out << row << '\n';
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

void emit_report(const EvalResult& result, const Dataset& test, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "report.json", nlohmann::json(result.report));
  write_metrics_csv({result.report}, dir / "metrics.csv");

  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  if (result.grids.size() == 2) {
    const EnergyGrid& g = result.grids[0];
    auto out = open("energy_grid_" + g.x.name + "_" + g.y.name + ".csv");
    out << "source," << g.x.name << ',' << g.y.name << ",energy,normalized\n";
    const char* source[2] = {"model", "truth"};
    for (int s = 0; s < 2; ++s) {
      const EnergyGrid& e = result.grids[static_cast<std::size_t>(s)];
      const auto nx = e.values.rows(), ny = e.values.cols();
      for (Eigen::Index i = 0; i < nx; ++i) {
        for (Eigen::Index j = 0; j < ny; ++j) {
          const double x = e.x.lo + (e.x.hi - e.x.lo) * static_cast<double>(i) / static_cast<double>(nx - 1);
          const double y = e.y.lo + (e.y.hi - e.y.lo) * static_cast<double>(j) / static_cast<double>(ny - 1);
          out << source[s] << ',' << fmt(x) << ',' << fmt(y) << ',' << fmt(e.values(i, j)) << ','
              << fmt(e.values(i, j) / e.normalization) << '\n';
        }
      }
    }
  }
  for (std::size_t k = 0; k < result.energy.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof name, "energy_traj_%03zu.csv", k);
    auto out = open(name);
    out << "t,truth,model\n";
    const TrajectoryEnergy& e = result.energy[k];
    for (Eigen::Index j = 0; j < e.time.size(); ++j) {
      out << fmt(e.time(j)) << ',' << fmt(e.truth(j)) << ',' << fmt(e.model(j)) << '\n';
    }
  }
  for (std::size_t k = 0; k < result.learned_terms.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof name, "force_decomp_%03zu.csv", k);
    auto out = open(name);
    out << "t,component,dim,learned,truth\n";
    const Trajectory& t = test.trajectories[k];
    const ForceTerms& a = result.learned_terms[k];
    const ForceTerms& b = result.true_terms[k];
    const std::pair<const char*, const Eigen::MatrixXd ForceTerms::*> comps[3] = {
        {"inertial", &ForceTerms::inertial},
        {"coriolis", &ForceTerms::coriolis},
        {"potential_derived", &ForceTerms::potential_derived}};
    for (Eigen::Index j = 0; j < t.samples(); ++j) {
      for (const auto& [cname, member] : comps) {
        for (Eigen::Index d = 0; d < (a.*member).rows(); ++d) {
          out << fmt(t.time(j)) << ',' << cname << ',' << d << ',' << fmt((a.*member)(d, j)) << ','
              << fmt((b.*member)(d, j)) << '\n';
        }
      }
    }
  }
}

}  // namespace lagid
