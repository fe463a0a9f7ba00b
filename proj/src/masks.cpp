#include "stochens/masks.hpp"

#include <string>

#include "stochens/errors.hpp"

namespace stochens {

void StochasticSpec::validate() const {
  for (double r : {hidden_drop_rate, output_drop_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw ConfigError("drop rate " + std::to_string(r) + " outside [0, 1]");
    }
  }
}

bool StochasticSpec::masks_layer(std::size_t layer, std::size_t num_layers) const {
  switch (kind) {
    case StochasticKind::None: return false;
    case StochasticKind::NPExchange: return true;
    case StochasticKind::Dropout:
    case StochasticKind::DropConnect:
      return layer + 1 < num_layers || applies_to_output_layer;
  }
  return false;
}

double StochasticSpec::keep_probability(std::size_t layer, std::size_t num_layers) const {
  if (!masks_layer(layer, num_layers)) return 1.0;
  if (kind == StochasticKind::NPExchange) return 0.5;
  return 1.0 - (layer + 1 < num_layers ? hidden_drop_rate : output_drop_rate);
}

MaskSet sample_masks(const StochasticSpec& spec, const MLPArch& arch, Rng& rng) {
  spec.validate();
  MaskSet masks{spec.kind, {}};
  if (spec.kind == StochasticKind::None) return masks;
  const std::size_t L = arch.num_layers();
  masks.layers.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (!spec.masks_layer(l, L)) continue;
    const std::size_t count = spec.kind == StochasticKind::DropConnect
                                  ? arch.layer_param_count(l)
                                  : arch.widths[l + 1];
    std::bernoulli_distribution keep(spec.keep_probability(l, L));
    auto& bits = masks.layers[l];
    bits.resize(count);
    for (auto& b : bits) b = keep(rng) ? 1 : 0;
  }
  return masks;
}

namespace {

void check_selector(const MLPArch& arch, const MaskSet& selector) {
  if (selector.kind != StochasticKind::NPExchange) {
    throw DomainError("parameter exchange needs an NPExchange selector");
  }
  if (selector.layers.size() != arch.num_layers()) {
    throw ShapeError("selector layer count does not match architecture");
  }
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    if (!selector.layers[l].empty() && selector.layers[l].size() != arch.widths[l + 1]) {
      throw ShapeError("selector for layer " + std::to_string(l) + " has wrong width");
    }
  }
}

}  // namespace

ParamVector apply_np_selection(const ParamVector& a, const ParamVector& b,
                               const MaskSet& selector) {
  if (!(a.arch() == b.arch())) throw ShapeError("exchanged parameter sets differ in architecture");
  check_selector(a.arch(), selector);
  ParamVector out = a;
  for (std::size_t l = 0; l < a.arch().num_layers(); ++l) {
    const auto& bits = selector.layers[l];
    for (std::size_t n = 0; n < bits.size(); ++n) {
      if (bits[n]) continue;
      const auto row = static_cast<Eigen::Index>(n);
      out.weights(l).row(row) = b.weights(l).row(row);
      out.bias(l)[row] = b.bias(l)[row];
    }
  }
  return out;
}

std::pair<ParamVector, ParamVector> split_np_gradient(const ParamVector& grad,
                                                      const MaskSet& selector) {
  check_selector(grad.arch(), selector);
  ParamVector ga = grad;
  ParamVector gb(grad.arch());
  for (std::size_t l = 0; l < grad.arch().num_layers(); ++l) {
    const auto& bits = selector.layers[l];
    for (std::size_t n = 0; n < bits.size(); ++n) {
      if (bits[n]) continue;
      const auto row = static_cast<Eigen::Index>(n);
      gb.weights(l).row(row) = grad.weights(l).row(row);
      gb.bias(l)[row] = grad.bias(l)[row];
      ga.weights(l).row(row).setZero();
      ga.bias(l)[row] = 0.0;
    }
  }
  return {std::move(ga), std::move(gb)};
}

Matrix realized_logits(const MemberParams& member, const MaskSet& masks, const Matrix& points) {
  if (masks.kind == StochasticKind::NPExchange) {
    if (!member.secondary) throw DomainError("NPExchange member lacks its second parameter set");
    return forward(apply_np_selection(member.primary, *member.secondary, masks), points);
  }
  return forward(member.primary, points, &masks);
}

Matrix masked_forward(const MemberParams& member, const StochasticSpec& spec,
                      const Matrix& points, Rng& rng) {
  if (spec.kind == StochasticKind::None) return softmax(forward(member.primary, points));
  const MaskSet masks = sample_masks(spec, member.primary.arch(), rng);
  return softmax(realized_logits(member, masks, points));
}

}  // namespace stochens
