#ifndef STOCHENS_MASKS_HPP
#define STOCHENS_MASKS_HPP

#include <optional>
#include <utility>

#include "stochens/mask_set.hpp"
#include "stochens/rng.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

/**
 * Configuration of the stochastic mechanism of an ensemble member.
 *
 * Dropout and DropConnect act on hidden layers, and on the output layer only
 * when `applies_to_output_layer` is set. NPExchange acts on every layer with
 * fixed selection probability 1/2 and ignores the rates.
 */
struct StochasticSpec {
  StochasticKind kind = StochasticKind::None;
  double hidden_drop_rate = 0.0;
  double output_drop_rate = 0.0;
  bool applies_to_output_layer = false;

  /// Throws ConfigError for rates outside [0, 1].
  void validate() const;

  bool masks_layer(std::size_t layer, std::size_t num_layers) const;
  /// Probability that a unit of `layer` is kept (selector = 1 for NPExchange).
  double keep_probability(std::size_t layer, std::size_t num_layers) const;
};

/// Parameters of one ensemble member: set A, plus set B for NPExchange.
struct MemberParams {
  ParamVector primary;
  std::optional<ParamVector> secondary;

  bool operator==(const MemberParams&) const = default;
};

/// i.i.d. Bernoulli bits for every masked unit of the architecture.
MaskSet sample_masks(const StochasticSpec& spec, const MLPArch& arch, Rng& rng);

/// Per output node, take the incoming weight row and bias from A where the
/// selector bit is 1, otherwise from B.
ParamVector apply_np_selection(const ParamVector& a, const ParamVector& b,
                               const MaskSet& selector);

/// Route a gradient taken with respect to the selected network back to the
/// two parameter sets it was assembled from.
std::pair<ParamVector, ParamVector> split_np_gradient(const ParamVector& grad,
                                                      const MaskSet& selector);

/// Logits of one realization of the member under an already sampled mask set.
Matrix realized_logits(const MemberParams& member, const MaskSet& masks,
                       const Matrix& points);

/// One Monte Carlo inference: sample masks, run the network, return softmax
/// probabilities. Dropout is not rescaled by the keep probability.
Matrix masked_forward(const MemberParams& member, const StochasticSpec& spec,
                      const Matrix& points, Rng& rng);

}  // namespace stochens

#endif  // STOCHENS_MASKS_HPP
