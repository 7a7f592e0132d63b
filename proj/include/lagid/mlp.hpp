#pragma once

#include "lagid/ad.hpp"
#include "lagid/parameters.hpp"
#include "lagid/rng.hpp"

#include <string>
#include <vector>

namespace lagid {

/// Fully connected network with softplus hidden layers and a linear output.
class Mlp {
 public:
  Mlp() = default;
  /// Throws ConfigError for non-positive widths.
  Mlp(std::string name, int inputs, std::vector<int> hidden, int outputs);

  const std::string& name() const { return name_; }
  int inputs() const { return inputs_; }
  int outputs() const { return outputs_; }
  const std::vector<int>& hidden() const { return hidden_; }

  /// Adds blocks "<name>.W<l>" and "<name>.b<l>".
  void register_parameters(ParameterVector& params);
  /// W, b ~ U(−1/√fan_in, 1/√fan_in). With `zero_output` the last layer is
  /// zeroed so the network starts as the zero map.
  void initialize(ParameterVector& params, Rng& rng, bool zero_output = false) const;
  void zero_output_layer(ParameterVector& params) const;

  ad::Var forward(const BoundParams& params, ad::Var x) const;

  struct Jet {
    ad::Var value;
    std::vector<ad::Var> tangents;
  };
  /// Output together with its directional derivatives along each input
  /// tangent (same shape as x); the tangents are themselves tape nodes.
  Jet forward_jet(const BoundParams& params, ad::Var x, const std::vector<ad::Var>& dx) const;

 private:
  std::string name_;
  int inputs_ = 0;
  int outputs_ = 0;
  std::vector<int> hidden_;
  std::vector<std::size_t> weight_blocks_;
  std::vector<std::size_t> bias_blocks_;
};

}  // namespace lagid
