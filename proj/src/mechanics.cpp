#include "lagid/mechanics.hpp"

#include "lagid/errors.hpp"

#include <cmath>
#include <sstream>

namespace lagid {

Eigen::VectorXd State::stacked() const {
  Eigen::VectorXd x(q.size() + qdot.size());
  x << q, qdot;
  return x;
}

State State::from_stacked(const Eigen::VectorXd& x) {
  if (x.size() % 2 != 0 || x.size() == 0) throw ContractViolation("stacked state must have even, non-zero length");
  const Eigen::Index n = x.size() / 2;
  return State(x.head(n), x.tail(n));
}

void State::validate() const {
  if (q.size() < 1 || q.size() != qdot.size()) {
    std::ostringstream os;
    os << "state has q of size " << q.size() << " and qdot of size " << qdot.size();
    throw ContractViolation(os.str());
  }
  if (!q.allFinite() || !qdot.allFinite()) throw ContractViolation("state has non-finite entries");
}

namespace mech {

ad::Var momentum(const LagrangianTerms& terms, ad::Var qdot) {
  return ad::packed_matvec(terms.mass, qdot, terms.dof);
}

ad::Var lagrangian_dq(const LagrangianTerms& terms, ad::Var qdot) {
  std::vector<ad::Var> parts;
  parts.reserve(static_cast<std::size_t>(terms.dof));
  for (int k = 0; k < terms.dof; ++k) {
    ad::Var kin = ad::scale(ad::packed_quad(terms.dmass[static_cast<std::size_t>(k)], qdot, terms.dof), 0.5);
    parts.push_back(ad::sub(kin, ad::row(terms.dpotential, k)));
  }
  return parts.size() == 1 ? parts.front() : ad::vstack(parts);
}

ad::Var coriolis(const LagrangianTerms& terms, ad::Var qdot) {
  ad::Var acc;
  for (int k = 0; k < terms.dof; ++k) {
    ad::Var mv = ad::packed_matvec(terms.dmass[static_cast<std::size_t>(k)], qdot, terms.dof);
    ad::Var term = ad::mul_rows(mv, ad::row(qdot, k));
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return acc;
}

ad::Var inertial(const LagrangianTerms& terms, ad::Var qddot) {
  return ad::packed_matvec(terms.mass, qddot, terms.dof);
}

ad::Var kinetic_energy(const LagrangianTerms& terms, ad::Var qdot) {
  return ad::scale(ad::packed_quad(terms.mass, qdot, terms.dof), 0.5);
}

ad::Var lagrangian(const LagrangianTerms& terms, ad::Var qdot) {
  return ad::sub(kinetic_energy(terms, qdot), terms.potential);
}

ad::Var energy(const LagrangianTerms& terms, ad::Var qdot) {
  return ad::add(kinetic_energy(terms, qdot), terms.potential);
}

ad::Var accelerations(const LagrangianTerms& terms, ad::Var qdot, ad::Var tau,
                      std::vector<Eigen::Index>* singular) {
  ad::Var rhs = ad::add(ad::sub(tau, coriolis(terms, qdot)), lagrangian_dq(terms, qdot));
  return ad::packed_spd_solve(terms.mass, rhs, terms.dof, 1e12, singular);
}

ad::Var input_force_residual(const LagrangianTerms& terms, ad::Var qdot, ad::Var qddot, ad::Var tau_nc) {
  ad::Var lhs = ad::add(inertial(terms, qddot), coriolis(terms, qdot));
  return ad::sub(ad::sub(lhs, lagrangian_dq(terms, qdot)), tau_nc);
}

}  // namespace mech

namespace {

struct SingleEval {
  ad::Tape tape{false};
  BoundParams params;
  ad::Var q, qdot;
  LagrangianTerms terms;

  SingleEval(const MechanicalSystem& sys, const State& s) {
    s.validate();
    if (s.dof() != sys.dof()) {
      std::ostringstream os;
      os << "state has " << s.dof() << " degrees of freedom, model expects " << sys.dof();
      throw ContractViolation(os.str());
    }
    params = BoundParams(tape, *sys.params, false);
    q = tape.constant(s.q);
    qdot = tape.constant(s.qdot);
    terms = sys.lagrangian->terms(tape, params, q);
  }
};

void check_vector(const Eigen::VectorXd& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    std::ostringstream os;
    os << what << " has size " << v.size() << ", expected " << n;
    throw ContractViolation(os.str());
  }
}

}  // namespace

double lagrangian_value(const MechanicalSystem& sys, const State& s) {
  SingleEval e(sys, s);
  return mech::lagrangian(e.terms, e.qdot).value()(0, 0);
}

double total_energy(const MechanicalSystem& sys, const State& s) {
  SingleEval e(sys, s);
  return mech::energy(e.terms, e.qdot).value()(0, 0);
}

Eigen::MatrixXd mass_matrix(const MechanicalSystem& sys, const Eigen::VectorXd& q) {
  SingleEval e(sys, State(q, Eigen::VectorXd::Zero(q.size())));
  const int n = sys.dof();
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = e.terms.mass.value()(i * n + j, 0);
  return m;
}

double potential_energy(const MechanicalSystem& sys, const Eigen::VectorXd& q) {
  SingleEval e(sys, State(q, Eigen::VectorXd::Zero(q.size())));
  return e.terms.potential.value()(0, 0);
}

EulerLagrangeTerms euler_lagrange_terms(const MechanicalSystem& sys, const State& s,
                                        const Eigen::VectorXd& qddot) {
  check_vector(qddot, s.dof(), "qddot");
  SingleEval e(sys, s);
  ad::Var acc = e.tape.constant(qddot);
  EulerLagrangeTerms out;
  out.inertial = mech::inertial(e.terms, acc).value().col(0);
  out.coriolis = mech::coriolis(e.terms, e.qdot).value().col(0);
  out.potential_derived = mech::lagrangian_dq(e.terms, e.qdot).value().col(0);
  if (!out.inertial.allFinite() || !out.coriolis.allFinite() || !out.potential_derived.allFinite()) {
    throw NumericError("non-finite Euler-Lagrange terms");
  }
  return out;
}

Eigen::VectorXd forward_dynamics(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& u) {
  check_vector(u, sys.input_dim(), "input");
  SingleEval e(sys, s);
  ad::Var uv = e.tape.constant(u);
  ad::Var tau = ad::add(sys.forces.input->tau_u(e.tape, e.params, e.q, e.qdot, uv),
                        sys.forces.nc->tau_nc(e.tape, e.params, e.q, e.qdot));
  std::vector<Eigen::Index> singular;
  ad::Var qdd = mech::accelerations(e.terms, e.qdot, tau, &singular);
  if (!singular.empty()) throw SingularMassError("mass matrix is singular or ill-conditioned");
  return qdd.value().col(0);
}

Eigen::VectorXd inverse_dynamics(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& qddot) {
  check_vector(qddot, s.dof(), "qddot");
  SingleEval e(sys, s);
  ad::Var acc = e.tape.constant(qddot);
  ad::Var nc = sys.forces.nc->tau_nc(e.tape, e.params, e.q, e.qdot);
  return mech::input_force_residual(e.terms, e.qdot, acc, nc).value().col(0);
}

Eigen::VectorXd generalized_momentum(const MechanicalSystem& sys, const State& s) {
  SingleEval e(sys, s);
  return mech::momentum(e.terms, e.qdot).value().col(0);
}

Eigen::VectorXd input_force(const MechanicalSystem& sys, const State& s, const Eigen::VectorXd& u) {
  check_vector(u, sys.input_dim(), "input");
  SingleEval e(sys, s);
  return sys.forces.input->tau_u(e.tape, e.params, e.q, e.qdot, e.tape.constant(u)).value().col(0);
}

Eigen::VectorXd nonconservative_force(const MechanicalSystem& sys, const State& s) {
  SingleEval e(sys, s);
  return sys.forces.nc->tau_nc(e.tape, e.params, e.q, e.qdot).value().col(0);
}

}  // namespace lagid
