#pragma once

#include "lagid/models.hpp"
#include "lagid/ode.hpp"

#include <vector>

namespace lagid {

/// ẋ = F̂(x, u(t)) of a model, one input signal per batch column (nullptr
/// means zero input).
class ModelRhs : public ode::BatchRhs {
 public:
  ModelRhs(const Model& model, std::vector<const ode::InterpolatedSignal*> inputs);

  Eigen::Index dim() const override { return model_.state_dim(); }
  const ParameterVector& parameters() const override { return model_.parameters(); }
  ad::Var eval(ad::Tape& tape, const BoundParams& params, double t, ad::Var y,
               const std::vector<Eigen::Index>& cols) const override;

 private:
  const Model& model_;
  std::vector<const ode::InterpolatedSignal*> inputs_;
};

}  // namespace lagid
