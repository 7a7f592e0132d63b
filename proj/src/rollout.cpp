#include "lagid/rollout.hpp"

#include "lagid/errors.hpp"

namespace lagid {

ModelRhs::ModelRhs(const Model& model, std::vector<const ode::InterpolatedSignal*> inputs)
    : model_(model), inputs_(std::move(inputs)) {
  for (const auto* s : inputs_) {
    if (s != nullptr && s->dim() != model_.input_dim()) throw ContractViolation("input signal has wrong dimension");
  }
}

ad::Var ModelRhs::eval(ad::Tape& tape, const BoundParams& params, double t, ad::Var y,
                       const std::vector<Eigen::Index>& cols) const {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(model_.input_dim(), y.cols());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto c = static_cast<std::size_t>(cols[k]);
    if (c >= inputs_.size()) throw ContractViolation("batch column without an input signal slot");
    if (inputs_[c] != nullptr) inputs_[c]->write(t, u.col(static_cast<Eigen::Index>(k)));
  }
  return model_.state_derivative(tape, params, y, tape.constant(std::move(u)));
}

}  // namespace lagid
