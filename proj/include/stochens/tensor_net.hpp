#ifndef STOCHENS_TENSOR_NET_HPP
#define STOCHENS_TENSOR_NET_HPP

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochens/mask_set.hpp"

namespace stochens {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected ReLU network with a softmax output.
struct MLPArch {
  std::vector<std::size_t> widths;

  /// The 2 -> 10 -> 10 -> 2 network used for the toy problems.
  static MLPArch toy() { return MLPArch{{2, 10, 10, 2}}; }

  /// Throws ConfigError unless there are >= 2 widths, all >= 1.
  void validate() const;

  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t num_classes() const { return widths.back(); }
  std::size_t layer_param_count(std::size_t layer) const {
    return widths[layer] * widths[layer + 1] + widths[layer + 1];
  }
  std::size_t param_count() const;
  /// Flat offset of W_layer; its bias follows at weight_offset + out * in.
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + widths[layer] * widths[layer + 1];
  }

  /// "2,10,10,2"
  std::string to_string() const;
  static MLPArch parse(const std::string& text);

  bool operator==(const MLPArch&) const = default;
};

/**
 * All weights and biases of one network, layer-major: W_1 (row-major,
 * out x in), B_1, W_2, B_2, ...
 */
class ParamVector {
 public:
  ParamVector() = default;
  /// Zero parameters.
  explicit ParamVector(MLPArch arch);
  ParamVector(MLPArch arch, Vector values);

  const MLPArch& arch() const { return arch_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  Eigen::Map<const RowMajorMatrix> weights(std::size_t layer) const;
  Eigen::Map<RowMajorMatrix> weights(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);

  bool all_finite() const { return values_.allFinite(); }

  bool operator==(const ParamVector& other) const {
    return arch_ == other.arch_ && values_ == other.values_;
  }

 private:
  MLPArch arch_;
  Vector values_;
};

/// Isotropic Gaussian prior N(0, lambda^-1 I).
struct PriorSpec {
  double lambda = 1.0;
  void validate() const;
};

/// Axis-aligned box [lo, hi]^d.
struct Box {
  double lo = -1.0;
  double hi = 1.0;
};

struct Dataset {
  Matrix points;            // n x d
  std::vector<int> labels;  // n entries in [0, n_classes)
  int n_classes = 2;
  Box domain;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  /// Throws ShapeError/DomainError on inconsistent contents; allows n = 0.
  void validate() const;
};

enum class Reduction { Sum, Mean };

/// Pre-softmax logits (n x C). Masks of kind NPExchange are rejected; use
/// apply_np_selection first.
Matrix forward(const ParamVector& params, const Matrix& points,
               const MaskSet* masks = nullptr);

/// Output of every layer (after activation and masking), last = logits.
std::vector<Matrix> layer_outputs(const ParamVector& params, const Matrix& points,
                                  const MaskSet* masks = nullptr);

/// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

/// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits);

/// Negative log likelihood of the labels; data must be nonempty.
double nll(const ParamVector& params, const Dataset& data,
           const MaskSet* masks = nullptr, Reduction reduction = Reduction::Sum);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/**
 * NLL and its gradient by backpropagation. For DropConnect masks the
 * gradient is taken with respect to the unmasked parameters, so masked
 * entries receive zero gradient.
 */
LossGrad nll_with_grad(const ParamVector& params, const Dataset& data,
                       const MaskSet* masks = nullptr,
                       Reduction reduction = Reduction::Sum);

/// U(theta) = sum NLL + (lambda/2) |theta|^2. An empty dataset leaves the
/// prior term only.
double potential(const ParamVector& params, const Dataset& data,
                 const PriorSpec& prior);
ParamVector grad_potential(const ParamVector& params, const Dataset& data,
                           const PriorSpec& prior);
LossGrad potential_with_grad(const ParamVector& params, const Dataset& data,
                             const PriorSpec& prior);

/// Central differences of the potential, one coordinate at a time.
ParamVector finite_diff_grad(const ParamVector& params, const Dataset& data,
                             const PriorSpec& prior, double h);

/// Header line "arch=2,10,10,2;count=162\n" followed by little-endian doubles.
void write_params(std::ostream& out, const ParamVector& params);
ParamVector read_params(std::istream& in);

}  // namespace stochens

#endif  // STOCHENS_TENSOR_NET_HPP
