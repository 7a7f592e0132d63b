#include "lagid/models.hpp"

#include "lagid/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lagid {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ground_truth:
      return "ground_truth";
    case ModelKind::dln:
      return "dln";
    case ModelKind::aph:
      return "aph";
    case ModelKind::adln:
      return "adln";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& raw) {
  std::string name = raw;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "ground_truth" || name == "ground-truth" || name == "simu") return ModelKind::ground_truth;
  if (name == "dln") return ModelKind::dln;
  if (name == "aph") return ModelKind::aph;
  if (name == "adln") return ModelKind::adln;
  throw ConfigError("unknown model kind '" + name + "' (valid: ground_truth, dln, aph, adln)");
}

ModelSpec ModelSpec::defaults(SystemId system, ModelKind kind) {
  ModelSpec s;
  s.system = system;
  s.kind = kind;
  if (system == SystemId::furuta) {
    // Furuta inertias are O(1e-4) kg·m², the potential O(1e-2) J, friction
    // torques O(1e-3) N·m; the scales keep network outputs O(1).
    s.mass_scale = 2e-4;
    s.potential_scale = 0.03;
    s.force_scale = 1e-3;
    s.accel_scale = 10.0;
    s.angle_embedding = true;
  }
  return s;
}

std::vector<int> ModelSpec::effective_hidden() const {
  if (!hidden.empty()) return hidden;
  return system == SystemId::nmsd ? std::vector<int>{64, 64} : std::vector<int>{16, 16};
}

void ModelSpec::validate() const {
  for (int w : hidden) {
    if (w <= 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (!(diag_floor > 0)) throw ConfigError("diag_floor must be positive");
  if (!(mass_scale > 0 && potential_scale > 0 && force_scale > 0 && accel_scale > 0)) {
    throw ConfigError("network output scales must be positive");
  }
  if (system == SystemId::nmsd) nmsd.validate();
  else furuta.validate();
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"system", to_string(s.system)},
                     {"kind", to_string(s.kind)},
                     {"hidden", s.effective_hidden()},
                     {"diag_floor", s.diag_floor},
                     {"mass_scale", s.mass_scale},
                     {"potential_scale", s.potential_scale},
                     {"force_scale", s.force_scale},
                     {"accel_scale", s.accel_scale},
                     {"angle_embedding", s.angle_embedding},
                     {"nmsd", s.nmsd},
                     {"furuta", s.furuta}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  const SystemId system = parse_system_id(j.at("system").get<std::string>());
  const ModelKind kind = parse_model_kind(j.value("kind", std::string("dln")));
  s = ModelSpec::defaults(system, kind);
  if (j.contains("hidden")) s.hidden = j.at("hidden").get<std::vector<int>>();
  s.diag_floor = j.value("diag_floor", s.diag_floor);
  s.mass_scale = j.value("mass_scale", s.mass_scale);
  s.potential_scale = j.value("potential_scale", s.potential_scale);
  s.force_scale = j.value("force_scale", s.force_scale);
  s.accel_scale = j.value("accel_scale", s.accel_scale);
  s.angle_embedding = j.value("angle_embedding", s.angle_embedding);
  if (j.contains("nmsd")) s.nmsd = j.at("nmsd").get<NmsdParams>();
  if (j.contains("furuta")) s.furuta = j.at("furuta").get<FurutaParams>();
}

namespace {

ad::Var zeros(ad::Tape& tape, Eigen::Index rows, Eigen::Index cols) {
  return tape.constant(Eigen::MatrixXd::Zero(rows, cols));
}

ad::Var scalar_const(ad::Tape& tape, double v) { return tape.constant(Eigen::MatrixXd::Constant(1, 1, v)); }

// Physical constants as 1x1 nodes: exp of a learnable log block, or constants.
std::vector<ad::Var> physical_scalars(ad::Tape& tape, const BoundParams& params, bool learnable, std::size_t block,
                                      const std::vector<double>& nominal) {
  std::vector<ad::Var> out;
  if (learnable) {
    ad::Var theta = ad::exp(params[block]);
    for (std::size_t i = 0; i < nominal.size(); ++i) out.push_back(ad::row(theta, static_cast<Eigen::Index>(i)));
  } else {
    for (double v : nominal) out.push_back(scalar_const(tape, v));
  }
  return out;
}

void set_log_block(ParameterVector& params, std::size_t block, const std::vector<double>& nominal) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(nominal.size()), 1);
  for (std::size_t i = 0; i < nominal.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = std::log(nominal[i]);
  params.set_block_matrix(block, m);
}

}  // namespace

// ---------------------------------------------------------------------------

void NmsdLagrangian::register_parameters(ParameterVector& params) {
  if (learnable_) block_ = params.add_block("physical", 3, 1);
}

void NmsdLagrangian::initialize(ParameterVector& params) const {
  if (learnable_) set_log_block(params, block_, {p_.m, p_.k1, p_.k2});
}

LagrangianTerms NmsdLagrangian::terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const {
  const Eigen::Index b = q.cols();
  auto c = physical_scalars(tape, params, learnable_, block_, {p_.m, p_.k1, p_.k2});
  LagrangianTerms t;
  t.dof = 1;
  t.mass = ad::broadcast_cols(c[0], b);
  t.dmass = {zeros(tape, 1, b)};
  ad::Var q2 = ad::square(q);
  t.potential = ad::add(ad::scale_by(c[1], ad::scale(q2, 0.5)), ad::scale_by(c[2], ad::scale(ad::square(q2), 0.25)));
  t.dpotential = ad::add(ad::scale_by(c[1], q), ad::scale_by(c[2], ad::cube(q)));
  return t;
}

void FurutaLagrangian::register_parameters(ParameterVector& params) {
  if (learnable_) block_ = params.add_block("physical", 5, 1);
}

void FurutaLagrangian::initialize(ParameterVector& params) const {
  if (learnable_) set_log_block(params, block_, {p_.J1, p_.J2, p_.m_p, p_.L_p, p_.L_r});
}

LagrangianTerms FurutaLagrangian::terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const {
  const Eigen::Index b = q.cols();
  auto c = physical_scalars(tape, params, learnable_, block_, {p_.J1, p_.J2, p_.m_p, p_.L_p, p_.L_r});
  ad::Var j1 = c[0], j2 = c[1], mp = c[2], lp = c[3], lr = c[4];
  ad::Var a = ad::scale(ad::cmul(mp, ad::square(lp)), 0.25);       // ¼ m_p L_p²
  ad::Var k = ad::scale(ad::cmul(mp, ad::cmul(lr, lp)), 0.5);       // ½ m_p L_r L_p
  ad::Var gv = ad::scale(ad::cmul(mp, lp), 0.5 * p_.g);             // ½ m_p g L_p

  ad::Var beta = ad::row(q, 1);
  ad::Var s = ad::sin(beta);
  ad::Var co = ad::cos(beta);
  ad::Var m11 = ad::add(ad::broadcast_cols(j1, b), ad::scale_by(a, ad::square(s)));
  ad::Var m12 = ad::scale_by(k, co);
  ad::Var m22 = ad::broadcast_cols(j2, b);
  ad::Var zero = zeros(tape, 1, b);

  LagrangianTerms t;
  t.dof = 2;
  t.mass = ad::vstack({m11, m12, m12, m22});
  ad::Var dm11 = ad::scale_by(a, ad::scale(ad::cmul(s, co), 2.0));
  ad::Var dm12 = ad::neg(ad::scale_by(k, s));
  t.dmass = {zeros(tape, 4, b), ad::vstack({dm11, dm12, dm12, zero})};
  t.potential = ad::scale_by(gv, ad::add_scalar(ad::neg(co), 1.0));
  t.dpotential = ad::vstack({zero, ad::scale_by(gv, s)});
  return t;
}

// ---------------------------------------------------------------------------

namespace {

int feature_count(const std::vector<bool>& embed) {
  int n = 0;
  for (bool e : embed) n += e ? 2 : 1;
  return n;
}

}  // namespace

DelanLagrangian::DelanLagrangian(int dof, const std::vector<int>& hidden, double diag_floor, double mass_scale,
                                 double potential_scale, std::vector<bool> embed)
    : dof_(dof),
      floor_(diag_floor),
      mass_scale_(mass_scale),
      potential_scale_(potential_scale),
      embed_(embed.empty() ? std::vector<bool>(static_cast<std::size_t>(dof), false) : std::move(embed)),
      feature_dim_(feature_count(embed_)),
      mass_net_("mass_net", feature_dim_, hidden, dof * (dof + 1) / 2),
      potential_net_("potential_net", feature_dim_, hidden, 1) {
  if (static_cast<int>(embed_.size()) != dof_) throw ConfigError("embedding mask length must equal the DOF count");
}

void DelanLagrangian::register_parameters(ParameterVector& params) {
  mass_net_.register_parameters(params);
  potential_net_.register_parameters(params);
}

void DelanLagrangian::initialize(ParameterVector& params, Rng& rng) const {
  mass_net_.initialize(params, rng);
  potential_net_.initialize(params, rng);
}

DelanLagrangian::Features DelanLagrangian::features(ad::Tape& tape, ad::Var q) const {
  const Eigen::Index b = q.cols();
  Features f;
  bool any_embed = false;
  for (bool e : embed_) any_embed = any_embed || e;
  if (!any_embed) {
    f.value = q;
    for (int k = 0; k < dof_; ++k) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(dof_, b);
      e.row(k).setOnes();
      f.tangents.push_back(tape.constant(std::move(e)));
    }
    return f;
  }
  std::vector<ad::Var> rows;
  std::vector<std::vector<ad::Var>> trows(static_cast<std::size_t>(dof_));
  ad::Var zero = zeros(tape, 1, b);
  for (int j = 0; j < dof_; ++j) {
    ad::Var qj = ad::row(q, j);
    if (embed_[static_cast<std::size_t>(j)]) {
      ad::Var s = ad::sin(qj), c = ad::cos(qj);
      rows.push_back(s);
      rows.push_back(c);
      for (int k = 0; k < dof_; ++k) {
        auto& tr = trows[static_cast<std::size_t>(k)];
        if (k == j) {
          tr.push_back(c);
          tr.push_back(ad::neg(s));
        } else {
          tr.push_back(zero);
          tr.push_back(zero);
        }
      }
    } else {
      rows.push_back(qj);
      for (int k = 0; k < dof_; ++k) {
        Eigen::MatrixXd e = Eigen::MatrixXd::Constant(1, b, k == j ? 1.0 : 0.0);
        trows[static_cast<std::size_t>(k)].push_back(tape.constant(std::move(e)));
      }
    }
  }
  f.value = ad::vstack(rows);
  for (auto& tr : trows) f.tangents.push_back(ad::vstack(tr));
  return f;
}

ad::Var DelanLagrangian::raw_mass(const BoundParams& params, ad::Var q) const {
  Features f = features(*q.tape, q);
  return mass_net_.forward(params, f.value);
}

LagrangianTerms DelanLagrangian::terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const {
  if (q.rows() != dof_) throw ContractViolation("DeLaN received q of wrong dimension");
  const Eigen::Index b = q.cols();
  const int n = dof_;
  Features f = features(tape, q);
  Mlp::Jet mj = mass_net_.forward_jet(params, f.value, f.tangents);
  Mlp::Jet vj = potential_net_.forward_jet(params, f.value, f.tangents);

  ad::Var zero = zeros(tape, 1, b);
  std::vector<ad::Var> raw_diag, slope;
  for (int i = 0; i < n; ++i) {
    ad::Var r = ad::row(mj.value, i);
    raw_diag.push_back(ad::add_scalar(ad::softplus(r), floor_));
    slope.push_back(ad::sigmoid(r));
  }
  auto pack = [&](const std::function<ad::Var(int, int, int)>& entry) {
    std::vector<ad::Var> parts;
    int lower = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) parts.push_back(entry(i, j, -1));
        else if (i > j) parts.push_back(entry(i, j, n + lower++));
        else parts.push_back(zero);
      }
    return parts.size() == 1 ? parts.front() : ad::vstack(parts);
  };

  ad::Var l = pack([&](int i, int, int r) { return r < 0 ? raw_diag[static_cast<std::size_t>(i)] : ad::row(mj.value, r); });
  LagrangianTerms t;
  t.dof = n;
  t.mass = ad::scale(ad::packed_llt(l, n), mass_scale_);
  for (int k = 0; k < n; ++k) {
    ad::Var dr = mj.tangents[static_cast<std::size_t>(k)];
    ad::Var dl = pack([&](int i, int, int r) {
      return r < 0 ? ad::cmul(slope[static_cast<std::size_t>(i)], ad::row(dr, i)) : ad::row(dr, r);
    });
    t.dmass.push_back(ad::scale(ad::packed_sym_outer(dl, l, n), mass_scale_));
  }
  t.potential = ad::scale(vj.value, potential_scale_);
  t.dpotential = ad::scale(vj.tangents.size() == 1 ? vj.tangents.front() : ad::vstack(vj.tangents), potential_scale_);
  return t;
}

// ---------------------------------------------------------------------------

ad::Var DirectInput::tau_u(ad::Tape&, const BoundParams&, ad::Var, ad::Var, ad::Var u) const {
  if (u.rows() != dof_) throw ContractViolation("input has wrong dimension");
  return u;
}

ad::Var FurutaMotor::tau_u(ad::Tape& tape, const BoundParams&, ad::Var, ad::Var qdot, ad::Var u) const {
  if (u.rows() != 1) throw ContractViolation("Furuta input must be a scalar voltage");
  ad::Var alpha_dot = ad::row(qdot, 0);
  ad::Var torque = ad::scale(ad::add(u, ad::scale(alpha_dot, k_m_)), -gain_);
  return ad::vstack({torque, zeros(tape, 1, u.cols())});
}

ParametricNcForce::ParametricNcForce(Form form, std::vector<double> coefficients)
    : form_(form), c_(std::move(coefficients)) {
  if (form_ == Form::nmsd_cubic && c_.size() != 2) throw ConfigError("cubic damping needs (b1, b2)");
  if (form_ == Form::linear_friction && c_.empty()) throw ConfigError("linear friction needs coefficients");
}

ad::Var ParametricNcForce::tau_nc(ad::Tape&, const BoundParams&, ad::Var, ad::Var qdot) const {
  if (form_ == Form::nmsd_cubic) {
    return ad::neg(ad::add(ad::scale(qdot, c_[0]), ad::scale(ad::cube(qdot), c_[1])));
  }
  if (static_cast<std::size_t>(qdot.rows()) != c_.size()) throw ContractViolation("friction coefficient count mismatch");
  Eigen::MatrixXd c(qdot.rows(), qdot.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i) c.row(i).setConstant(-c_[static_cast<std::size_t>(i)]);
  return ad::mul_const(qdot, c);
}

ad::Var ZeroNcForce::tau_nc(ad::Tape& tape, const BoundParams&, ad::Var, ad::Var qdot) const {
  return zeros(tape, qdot.rows(), qdot.cols());
}

NetworkField::NetworkField(const std::string& name, int dof, const std::vector<int>& hidden, double scale)
    : scale_(scale), net_(name, 2 * dof, hidden, dof) {}

void NetworkField::register_parameters(ParameterVector& params) { net_.register_parameters(params); }

void NetworkField::initialize(ParameterVector& params, Rng& rng) const { net_.initialize(params, rng, true); }

ad::Var NetworkField::eval(const BoundParams& params, ad::Var x) const {
  return ad::scale(net_.forward(params, x), scale_);
}

ad::Var NetworkField::tau_nc(ad::Tape&, const BoundParams& params, ad::Var q, ad::Var qdot) const {
  return eval(params, ad::vstack({q, qdot}));
}

// ---------------------------------------------------------------------------

Model Model::create(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  m.seed_ = seed;
  const int n = spec.dof();
  const auto hidden = spec.effective_hidden();
  const bool furuta = spec.system == SystemId::furuta;

  if (furuta) m.input_ = std::make_shared<FurutaMotor>(spec.furuta);
  else m.input_ = std::make_shared<DirectInput>(1);

  std::shared_ptr<NonConservativeForce> known_nc;
  if (furuta) {
    known_nc = std::make_shared<ParametricNcForce>(ParametricNcForce::Form::linear_friction,
                                                   std::vector<double>{spec.furuta.c_r, spec.furuta.c_p});
  } else {
    known_nc = std::make_shared<ParametricNcForce>(ParametricNcForce::Form::nmsd_cubic,
                                                   std::vector<double>{spec.nmsd.b1, spec.nmsd.b2});
  }

  Rng rng(seed);
  switch (spec.kind) {
    case ModelKind::ground_truth:
    case ModelKind::aph: {
      const bool learnable = spec.kind == ModelKind::aph;
      if (furuta) {
        auto l = std::make_shared<FurutaLagrangian>(spec.furuta, learnable);
        l->register_parameters(m.params_);
        l->initialize(m.params_);
        m.lagrangian_ = l;
      } else {
        auto l = std::make_shared<NmsdLagrangian>(spec.nmsd, learnable);
        l->register_parameters(m.params_);
        l->initialize(m.params_);
        m.lagrangian_ = l;
      }
      if (learnable) {
        m.nc_ = std::make_shared<ZeroNcForce>();
        auto aug = std::make_shared<NetworkField>("aug_net", n, hidden, spec.accel_scale);
        aug->register_parameters(m.params_);
        aug->initialize(m.params_, rng);
        m.augment_ = aug;
      } else {
        m.nc_ = known_nc;
      }
      break;
    }
    case ModelKind::dln:
    case ModelKind::adln: {
      std::vector<bool> embed(static_cast<std::size_t>(n), false);
      if (spec.angle_embedding) embed.assign(static_cast<std::size_t>(n), furuta);
      auto d = std::make_shared<DelanLagrangian>(n, hidden, spec.diag_floor, spec.mass_scale, spec.potential_scale,
                                                 embed);
      d->register_parameters(m.params_);
      d->initialize(m.params_, rng);
      m.lagrangian_ = d;
      m.delan_ = d;
      if (spec.kind == ModelKind::adln) {
        auto nc = std::make_shared<NetworkField>("nc_net", n, hidden, spec.force_scale);
        nc->register_parameters(m.params_);
        nc->initialize(m.params_, rng);
        m.nc_ = nc;
        m.augment_ = nc;
      } else {
        m.nc_ = known_nc;
      }
      break;
    }
  }
  return m;
}

Model ground_truth_model(SystemId system, const NmsdParams& nmsd, const FurutaParams& furuta) {
  ModelSpec s = ModelSpec::defaults(system, ModelKind::ground_truth);
  s.nmsd = nmsd;
  s.furuta = furuta;
  return Model::create(s, 0);
}

MechanicalSystem Model::mechanics() const {
  if (!identifies_lagrangian()) {
    throw CapabilityError("APH models do not identify a Lagrangian (energy and force terms are N/A)");
  }
  return internal_mechanics();
}

MechanicalSystem Model::internal_mechanics() const {
  MechanicalSystem s;
  s.lagrangian = lagrangian_;
  s.forces.input = input_;
  s.forces.nc = nc_;
  s.params = &params_;
  return s;
}

LagrangianTerms Model::lagrangian_terms(ad::Tape& tape, const BoundParams& params, ad::Var q) const {
  return lagrangian_->terms(tape, params, q);
}

ad::Var Model::tau_u(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot, ad::Var u) const {
  return input_->tau_u(tape, params, q, qdot, u);
}

ad::Var Model::tau_nc(ad::Tape& tape, const BoundParams& params, ad::Var q, ad::Var qdot,
                      const LagrangianTerms* terms) const {
  if (spec_.kind != ModelKind::aph) return nc_->tau_nc(tape, params, q, qdot);
  LagrangianTerms own;
  if (terms == nullptr) {
    own = lagrangian_terms(tape, params, q);
    terms = &own;
  }
  return ad::packed_matvec(terms->mass, augment_->tau_nc(tape, params, q, qdot), dof());
}

ad::Var Model::augmentation(const BoundParams& params, ad::Var x) const {
  if (!augment_) throw CapabilityError("model kind '" + to_string(spec_.kind) + "' has no augmentation network");
  return augment_->eval(params, x);
}

ad::Var Model::state_derivative(ad::Tape& tape, const BoundParams& params, ad::Var x, ad::Var u,
                                std::vector<Eigen::Index>* singular) const {
  const int n = dof();
  if (x.rows() != 2 * n) throw ContractViolation("state has wrong dimension");
  ad::Var q = ad::rows(x, 0, n);
  ad::Var qd = ad::rows(x, n, n);
  LagrangianTerms t = lagrangian_terms(tape, params, q);
  ad::Var tau = tau_u(tape, params, q, qd, u);
  if (spec_.kind != ModelKind::aph) tau = ad::add(tau, nc_->tau_nc(tape, params, q, qd));
  ad::Var qdd = mech::accelerations(t, qd, tau, singular);
  if (spec_.kind == ModelKind::aph) qdd = ad::add(qdd, augment_->eval(params, x));
  return ad::vstack({qd, qdd});
}

Eigen::VectorXd Model::derivative(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  if (x.size() != state_dim() || u.size() != input_dim()) throw ContractViolation("state or input has wrong dimension");
  ad::Tape tape(false);
  BoundParams bp(tape, params_, false);
  std::vector<Eigen::Index> singular;
  ad::Var f = state_derivative(tape, bp, tape.constant(x), tape.constant(u), &singular);
  if (!singular.empty()) throw SingularMassError("mass matrix is singular or ill-conditioned");
  return f.value().col(0);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'A', 'G', 'I', 'D', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ConfigError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

nlohmann::json layout_json(const ParameterVector& p) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& b : p.blocks()) {
    layout.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  return layout;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& metadata) {
  nlohmann::json header{{"spec", model.spec()},
                        {"seed", model.seed()},
                        {"layout", layout_json(model.parameters())},
                        {"metadata", metadata}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 8);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Eigen::VectorXd& v = model.parameters().values();
  write_u64(os, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_u64(os, std::bit_cast<std::uint64_t>(v(i)));
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("not a checkpoint file: " + path.string());
  const std::uint64_t len = read_u64(is);
  if (len > (1ull << 30)) throw ConfigError("checkpoint header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ConfigError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  Model model = Model::create(header.at("spec").get<ModelSpec>(), header.at("seed").get<std::uint64_t>());
  if (header.at("layout") != layout_json(model.parameters())) {
    throw ConfigError("checkpoint parameter layout does not match its model spec");
  }
  const std::uint64_t count = read_u64(is);
  if (count != static_cast<std::uint64_t>(model.parameters().size())) throw ConfigError("checkpoint parameter count mismatch");
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::bit_cast<double>(read_u64(is));
  model.set_parameters(v);
  return Checkpoint{std::move(model), header.value("metadata", nlohmann::json::object())};
}

}  // namespace lagid
