// lagid command-line driver: generate, train, eval, control.
//
// Exit codes: 0 success (a failed control verdict included), 2 usage or
// configuration error, 3 runtime failure.

#include "lagid/benchmarks.hpp"
#include "lagid/config.hpp"
#include "lagid/control.hpp"
#include "lagid/errors.hpp"
#include "lagid/evaluation.hpp"
#include "lagid/models.hpp"
#include "lagid/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifndef LAGID_VERSION
#define LAGID_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lagid;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> profile;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out", o.out, "output directory")->required();
  cmd->add_option("--profile", o.profile, "training profile: smoke or paper-scale");
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
}

json load_config(const CommonOptions& o) {
  if (o.config.empty()) return json::object();
  json j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object: " + o.config);
  return j;
}

std::string sha256_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

std::vector<fs::path> files_under(const fs::path& p) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(p)) return {p};
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

class Manifest {
 public:
  Manifest(std::string command, const CommonOptions& o) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["config_path"] = o.config;
    j_["tool_version"] = std::string("lagid ") + LAGID_VERSION;
    j_["inputs"] = json::array();
    j_["outputs"] = json::array();
  }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void input(const fs::path& p) {
    for (const auto& f : files_under(p)) j_["inputs"].push_back({{"path", f.string()}, {"sha256", sha256_file(f)}});
  }
  void write(const fs::path& dir) {
    for (const auto& f : files_under(dir))
      j_["outputs"].push_back({{"path", fs::relative(f, dir).string()}, {"sha256", sha256_file(f)}});
    j_["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json_file(dir / "manifest.json", j_);
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

template <typename T>
T config_value(const json& cfg, const char* key, const T& fallback) {
  T v = fallback;
  read_optional(cfg, key, v);
  return v;
}

std::uint64_t seed_of(const CommonOptions& o, const json& cfg) {
  return o.seed ? *o.seed : config_value<std::uint64_t>(cfg, "seed", 0);
}

json merged(const json& base, const json& cfg, const char* key) {
  json j = base;
  if (cfg.contains(key)) {
    if (!cfg.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
    j.merge_patch(cfg.at(key));
  }
  return j;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct GenerateCliOptions {
  std::string system;
};

int cmd_generate(const CommonOptions& o, const GenerateCliOptions& g) {
  const json cfg = load_config(o);
  require_known_keys(cfg, {"system", "seed", "params", "generation"}, "generate config");
  const std::string system_name = g.system.empty() ? config_value<std::string>(cfg, "system", "") : g.system;
  if (system_name.empty()) throw ConfigError("--system is required (nmsd or furuta)");
  const SystemId system = parse_system_id(system_name);
  const std::uint64_t seed = seed_of(o, cfg);
  GenerationConfig gen;
  if (cfg.contains("generation")) gen = merged(json(gen), cfg, "generation").get<GenerationConfig>();

  std::vector<Dataset> sets;
  json params;
  if (system == SystemId::nmsd) {
    NmsdParams p = merged(json(NmsdParams{}), cfg, "params").get<NmsdParams>();
    p.validate();
    params = p;
    NmsdDatasets d = generate_nmsd_dataset(p, seed, gen);
    sets = {d.train, d.test_chirp, d.test_square};
  } else {
    FurutaParams p = merged(json(FurutaParams{}), cfg, "params").get<FurutaParams>();
    p.validate();
    params = p;
    for (FurutaMode m : {FurutaMode::train_free, FurutaMode::test_free, FurutaMode::test_forced})
      sets.push_back(generate_furuta_dataset(p, seed, m, gen));
  }
  const fs::path out(o.out);
  ensure_dir(out);
  Manifest man("generate", o);
  for (const Dataset& d : sets) write_dataset(d, out / d.split);
  man.set("seed", seed);
  man.set("effective_config", {{"system", to_string(system)}, {"seed", seed}, {"params", params}, {"generation", gen}});
  man.write(out);
  std::printf("generated %zu splits for %s in %s\n", sets.size(), to_string(system).c_str(), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainCliOptions {
  std::string model;
  std::string loss;
  std::string dataset;
};

int cmd_train(const CommonOptions& o, const TrainCliOptions& t) {
  const json cfg = load_config(o);
  require_known_keys(cfg, {"model", "loss", "dataset", "seed", "profile", "spec", "train"}, "train config");
  const std::string dataset_dir = t.dataset.empty() ? config_value<std::string>(cfg, "dataset", "") : t.dataset;
  if (dataset_dir.empty()) throw ConfigError("--dataset is required");
  const std::string model_name = t.model.empty() ? config_value<std::string>(cfg, "model", "dln") : t.model;
  const std::string loss_name = t.loss.empty() ? config_value<std::string>(cfg, "loss", "prop") : t.loss;
  const std::string profile = o.profile ? *o.profile : config_value<std::string>(cfg, "profile", "smoke");
  const std::uint64_t seed = seed_of(o, cfg);
  const ModelKind kind = parse_model_kind(model_name);
  const LossKind loss = parse_loss_kind(loss_name);
  if (kind == ModelKind::ground_truth) throw ConfigError("the ground truth has nothing to train");

  Dataset data = read_dataset(dataset_dir);
  json spec_json = ModelSpec::defaults(data.system, kind);
  spec_json["system"] = to_string(data.system);
  spec_json["kind"] = to_string(kind);
  spec_json[data.system == SystemId::nmsd ? "nmsd" : "furuta"] = data.params;
  ModelSpec spec = merged(spec_json, cfg, "spec").get<ModelSpec>();
  spec.validate();

  TrainConfig tc = TrainConfig::defaults(data.system, loss, profile);
  if (cfg.contains("train")) from_json(cfg.at("train"), tc);
  tc.loss.kind = loss;
  tc.seed = seed;
  tc.threads = o.threads;
  tc.validate();

  const fs::path out(o.out);
  ensure_dir(out);
  Manifest man("train", o);
  man.input(dataset_dir);

  Model initial = Model::create(spec, seed);
  TrainResult r = train(initial, data, tc);
  json meta = {{"model", to_string(kind)}, {"loss", to_string(loss)}, {"profile", profile}, {"seed", seed},
               {"epochs", r.history.size()}, {"skipped_updates", r.skipped_updates}};
  save_checkpoint(out / "model.ckpt", r.model, meta);
  write_history_csv(r.history, out / "loss_history.csv");
  man.set("seed", seed);
  man.set("effective_config", {{"dataset", dataset_dir}, {"spec", spec}, {"train", tc}});
  man.write(out);
  const HistoryRow& last = r.history.back();
  std::printf("trained %s(%s) for %zu epochs: loss %.6g, traj %.6g\n", to_string(kind).c_str(),
              to_string(loss).c_str(), r.history.size(), last.loss_total, last.loss_traj);
  return 0;
}

// ---------------------------------------------------------------------------

struct LoadedModel {
  Model model;
  std::string id;
  std::string loss;
};

LoadedModel load_model(const std::string& which, SystemId system, const json& params) {
  if (which == "ground-truth" || which == "ground_truth" || which == "SIMU" || which == "simu") {
    NmsdParams np;
    FurutaParams fp;
    if (system == SystemId::nmsd && !params.is_null()) np = params.get<NmsdParams>();
    if (system == SystemId::furuta && !params.is_null()) fp = params.get<FurutaParams>();
    return {ground_truth_model(system, np, fp), "ground_truth", ""};
  }
  Checkpoint ck = load_checkpoint(which);
  const std::string loss = ck.metadata.value("loss", std::string());
  return {std::move(ck.model), to_string(ck.model.kind()), loss};
}

std::vector<fs::path> test_sets(const std::vector<std::string>& dirs) {
  std::vector<fs::path> sets;
  for (const auto& d : dirs) {
    if (fs::exists(fs::path(d) / "dataset.json")) {
      sets.emplace_back(d);
      continue;
    }
    if (!fs::is_directory(d)) throw ConfigError("not a dataset directory: " + d);
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_directory() && e.path().filename().string().rfind("test", 0) == 0 && fs::exists(e.path() / "dataset.json"))
        found.push_back(e.path());
    std::sort(found.begin(), found.end());
    if (found.empty()) throw ConfigError("no test splits under " + d);
    sets.insert(sets.end(), found.begin(), found.end());
  }
  return sets;
}

struct EvalCliOptions {
  std::string model;
  std::vector<std::string> datasets;
  std::string calibration;
};

int cmd_eval(const CommonOptions& o, const EvalCliOptions& e) {
  const json cfg = load_config(o);
  require_known_keys(cfg, {"model", "datasets", "calibration_dataset", "rtol", "atol", "grid_points", "seed"},
                     "eval config");
  const std::string which = e.model.empty() ? config_value<std::string>(cfg, "model", "") : e.model;
  if (which.empty()) throw ConfigError("--model (checkpoint path or ground-truth) is required");
  std::vector<std::string> dirs = e.datasets;
  if (dirs.empty()) dirs = config_value<std::vector<std::string>>(cfg, "datasets", {});
  if (dirs.empty()) throw ConfigError("--dataset is required");
  const std::string cal_dir =
      e.calibration.empty() ? config_value<std::string>(cfg, "calibration_dataset", "") : e.calibration;

  EvalConfig ec;
  ec.rollout.solver.rtol = config_value(cfg, "rtol", ec.rollout.solver.rtol);
  ec.rollout.solver.atol = config_value(cfg, "atol", ec.rollout.solver.atol);
  ec.grid_points = config_value(cfg, "grid_points", ec.grid_points);
  ec.rollout.threads = o.threads;

  const fs::path out(o.out);
  ensure_dir(out);
  Manifest man("eval", o);
  if (which.find('/') != std::string::npos || fs::exists(which)) man.input(which);
  if (!cal_dir.empty()) {
    ec.calibration = read_dataset(cal_dir).trajectories.at(0);
    man.input(cal_dir);
  }

  std::vector<EvalReport> reports;
  std::size_t diverged = 0, total = 0;
  for (const fs::path& dir : test_sets(dirs)) {
    Dataset test = read_dataset(dir);
    man.input(dir);
    LoadedModel lm = load_model(which, test.system, test.params);
    if (lm.model.spec().system != test.system) throw ConfigError("model and dataset describe different systems");
    ec.model_id = lm.id;
    ec.loss = lm.loss;
    EvalResult r = evaluate(lm.model, test, ec);
    emit_report(r, test, out / test.split);
    for (bool d : r.report.diverged) diverged += d;
    total += r.report.diverged.size();
    reports.push_back(r.report);
  }
  write_metrics_csv(reports, out / "metrics.csv");
  man.set("effective_config", {{"model", which},
                               {"datasets", dirs},
                               {"calibration_dataset", cal_dir},
                               {"rtol", ec.rollout.solver.rtol},
                               {"atol", ec.rollout.solver.atol},
                               {"grid_points", ec.grid_points}});
  man.write(out);
  if (total > 0 && diverged == total) {
    std::fprintf(stderr, "every test rollout diverged\n");
    return kExitRuntime;
  }
  std::printf("evaluated %zu test sets (%zu of %zu rollouts diverged)\n", reports.size(), diverged, total);
  return 0;
}

// ---------------------------------------------------------------------------

struct ControlCliOptions {
  std::string controller = "ground-truth";
  std::optional<double> k_e;
  std::optional<double> duration;
  std::string calibration;
};

int cmd_control(const CommonOptions& o, const ControlCliOptions& c) {
  const json cfg = load_config(o);
  require_known_keys(cfg, {"controller", "plant", "gains", "loop", "calibration_dataset", "seed"}, "control config");
  const std::string which = c.controller != "ground-truth" ? c.controller
                                                           : config_value<std::string>(cfg, "controller", c.controller);
  FurutaParams plant = merged(json(FurutaParams{}), cfg, "plant").get<FurutaParams>();
  plant.validate();
  const std::uint64_t seed = seed_of(o, cfg);

  const fs::path out(o.out);
  ensure_dir(out);
  Manifest man("control", o);
  LoadedModel lm = load_model(which, SystemId::furuta, json(plant));
  if (lm.model.spec().system != SystemId::furuta) throw ConfigError("the controller model must describe the Furuta pendulum");
  if (lm.id != "ground_truth") man.input(which);

  ControllerConfig cc;
  cc.swing.k_e = default_energy_gain(lm.model.kind());
  if (cfg.contains("gains")) from_json(merged(json(cc), cfg, "gains"), cc);
  if (c.k_e) cc.swing.k_e = *c.k_e;
  cc.swing.validate();
  LoopConfig loop;
  if (cfg.contains("loop")) from_json(merged(json(loop), cfg, "loop"), loop);
  if (c.duration) loop.duration = *c.duration;
  loop.validate();

  // Learned energies carry an arbitrary scale; fit it on one free trajectory.
  EnergyCalibration cal;
  const std::string cal_dir =
      c.calibration.empty() ? config_value<std::string>(cfg, "calibration_dataset", "") : c.calibration;
  if (lm.id != "ground_truth") {
    Trajectory traj;
    if (!cal_dir.empty()) {
      traj = read_dataset(cal_dir).trajectories.at(0);
      man.input(cal_dir);
    } else {
      traj = generate_furuta_dataset(plant, seed, FurutaMode::test_free).trajectories.at(0);
    }
    Model truth = ground_truth_model(SystemId::furuta, {}, plant);
    cal = fit_energy_scale(lm.model, traj.states, model_energy(truth, traj.states));
  }

  Controller controller(lm.model, cc, cal);
  ControlRun run = closed_loop_sim(plant, controller, loop);
  write_control_csv(run, out / "control_run.csv");
  json events = json::array();
  for (const auto& ev : run.events) events.push_back({{"t", ev.t}, {"to", to_string(ev.to)}});
  const bool success = run.success(2.0, 0.1, loop.u_max);
  json verdict = {{"verdict", success ? "success" : "failure"},
                  {"final_angle_error", run.final_angle_error(2.0)},
                  {"final_rate", run.final_rate(2.0)},
                  {"max_abs_u", run.max_abs_u()},
                  {"saturation_fraction", run.saturation_fraction},
                  {"diverged", run.diverged},
                  {"failure", run.failure},
                  {"events", events},
                  {"energy_scale", cal.scale},
                  {"lqr_gain", std::vector<double>(controller.design().K.data(), controller.design().K.data() + 4)}};
  write_json_file(out / "verdict.json", verdict);
  man.set("seed", seed);
  man.set("effective_config",
          {{"controller", which}, {"plant", plant}, {"gains", cc}, {"loop", loop}, {"calibration_dataset", cal_dir}});
  man.write(out);
  std::printf("control %s: %s (final |β − π| = %.4g rad, max |u| = %.3g V)\n", lm.id.c_str(),
              success ? "success" : "failure", run.final_angle_error(2.0), run.max_abs_u());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lagrangian system identification with integral inverse-model losses"};
  app.set_version_flag("--version", std::string("lagid ") + LAGID_VERSION);
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, ctl_o;
  GenerateCliOptions gen;
  TrainCliOptions tr;
  EvalCliOptions ev;
  ControlCliOptions ctl;

  CLI::App* g = app.add_subcommand("generate", "simulate benchmark datasets");
  add_common(g, gen_o);
  g->add_option("--system", gen.system, "nmsd or furuta");

  CLI::App* t = app.add_subcommand("train", "train a model on a dataset split");
  add_common(t, train_o);
  t->add_option("--model", tr.model, "dln, adln or aph");
  t->add_option("--loss", tr.loss, "traj, aph, torque or prop");
  t->add_option("--dataset", tr.dataset, "training split directory");

  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on test sets");
  add_common(e, eval_o);
  e->add_option("--model", ev.model, "checkpoint path or ground-truth");
  e->add_option("--dataset", ev.datasets, "test split directory, or a generate output directory");
  e->add_option("--calibration", ev.calibration, "dataset whose first trajectory fits the energy scale");

  CLI::App* c = app.add_subcommand("control", "closed-loop swing-up and stabilization");
  add_common(c, ctl_o);
  c->add_option("--controller", ctl.controller, "checkpoint path or ground-truth");
  c->add_option("--k-e", ctl.k_e, "swing-up gain");
  c->add_option("--duration", ctl.duration, "simulated seconds");
  c->add_option("--calibration", ctl.calibration, "dataset whose first trajectory fits the energy scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen_o, gen);
    if (*t) return cmd_train(train_o, tr);
    if (*e) return cmd_eval(eval_o, ev);
    if (*c) return cmd_control(ctl_o, ctl);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kExitConfig;
  } catch (const CapabilityError& err) {
    std::fprintf(stderr, "unsupported combination: %s\n", err.what());
    return kExitConfig;
  } catch (const TrainingAbort& err) {
    std::string ids;
    for (std::size_t s : err.failing_segments()) ids += (ids.empty() ? "" : ",") + std::to_string(s);
    std::fprintf(stderr, "training aborted: %s (segments %s)\n", err.what(), ids.c_str());
    return kExitRuntime;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
