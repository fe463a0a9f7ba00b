#ifndef STOCHENS_MASK_SET_HPP
#define STOCHENS_MASK_SET_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace stochens {

enum class StochasticKind { None, Dropout, DropConnect, NPExchange };

std::string to_string(StochasticKind kind);
StochasticKind stochastic_kind_from_string(const std::string& name);

/**
 * One realization of the stochastic mechanism of a network.
 *
 * `layers[l]` belongs to weight layer l (inputs widths[l], outputs
 * widths[l+1]); an empty entry means the layer is not masked.
 *  - Dropout: one bit per output node, multiplied into post-activation values.
 *  - DropConnect: one bit per parameter of the layer, weights (row-major)
 *    followed by biases.
 *  - NPExchange: one selector bit per output node; 1 picks set A, 0 set B.
 */
struct MaskSet {
  StochasticKind kind = StochasticKind::None;
  std::vector<std::vector<std::uint8_t>> layers;

  bool operator==(const MaskSet&) const = default;
};

}  // namespace stochens

#endif  // STOCHENS_MASK_SET_HPP
