#ifndef STOCHENS_METRICS_HPP
#define STOCHENS_METRICS_HPP

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

/// Predictive p(y | x, D) at a set of points, with the per-member (or
/// per-sample) probabilities it averages when available.
struct PredictiveDistribution {
  Matrix probs;                      // n x C, rows sum to 1
  std::vector<Matrix> member_stack;  // M matrices of n x C; may be empty
  Matrix points;                     // n x d
  /// Mean over members of the per-member entropy, kept when the stack itself
  /// is too large to hold; `n_members` counts what was averaged.
  Vector member_entropy_mean;
  std::size_t n_members = 0;

  std::size_t size() const { return static_cast<std::size_t>(probs.rows()); }
  bool has_stack() const { return !member_stack.empty(); }
  /// True when mutual information can be computed.
  bool has_members() const;
  void validate() const;
};

/// Entropy per row, natural log, 0 ln 0 = 0.
Vector predictive_entropy(const Matrix& probs);
Vector predictive_entropy(const PredictiveDistribution& pd);

/// H[mean] - mean H[member], clipped at 0. Needs at least two members, from
/// the stack if present, else from member_entropy_mean.
Vector mutual_information(const PredictiveDistribution& pd);

/// Row argmax with ties going to the lowest class index.
std::vector<int> argmax_rows(const Matrix& probs);

double agreement(const PredictiveDistribution& pd, const PredictiveDistribution& reference);

/// Mean total-variation distance between predictive rows.
double predictive_variance(const PredictiveDistribution& pd, const PredictiveDistribution& reference);

struct CalibrationBin {
  double confidence = 0.0;  // mean top-1 confidence; NaN for an empty bin
  double accuracy = 0.0;    // NaN for an empty bin
  std::size_t count = 0;
};

struct EceResult {
  double value = 0.0;
  std::vector<CalibrationBin> curve;
};

/// Equal-width bins on top-1 confidence.
EceResult ece(const PredictiveDistribution& pd, const std::vector<int>& labels, int n_bins = 15);

/// AUROC of `score_out` (positives) against `score_in` (negatives), midranks for ties.
double odd_auroc(const Vector& score_in, const Vector& score_out);

double mean_abs_diff(const Vector& a, const Vector& b);

double accuracy(const PredictiveDistribution& pd, const std::vector<int>& labels);

/// Mean negative log-likelihood in nats; a zero probability on the true class gives +inf.
double mean_nll(const PredictiveDistribution& pd, const std::vector<int>& labels);

/// Discrepancies of a predictive against a reference on a shared point set.
struct ReferenceComparison {
  double agreement = 0.0;
  double variance = 0.0;
  double mean_abs_entropy_diff = 0.0;
  std::optional<double> mean_abs_mi_diff;  // needs member stacks on both sides
};

ReferenceComparison compare_to_reference(const PredictiveDistribution& pd,
                                         const PredictiveDistribution& reference);

struct EvaluationInputs {
  PredictiveDistribution test;
  std::vector<int> test_labels;
  std::optional<PredictiveDistribution> grid_in;
  std::optional<PredictiveDistribution> grid_out;
  std::optional<PredictiveDistribution> reference_test;
  std::optional<PredictiveDistribution> reference_in;
  std::optional<PredictiveDistribution> reference_out;
  int ece_bins = 15;
};

struct MetricsReport {
  double accuracy = 0.0;
  double loss = 0.0;
  double ece = 0.0;
  std::vector<CalibrationBin> calibration_curve;
  std::optional<double> odd_auroc;
  std::optional<ReferenceComparison> in_domain;      // on the D_in grid
  std::optional<ReferenceComparison> out_of_domain;  // on the D_out grid
  std::optional<ReferenceComparison> test_set;       // on the test points
  int ece_bins = 15;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// ODD contrasts test-point entropies with grid_out points outside [-1, 1]^2.
MetricsReport evaluate(const EvaluationInputs& inputs);

void write_calibration_csv(const std::filesystem::path& path,
                           const std::vector<CalibrationBin>& curve);

}  // namespace stochens

#endif  // STOCHENS_METRICS_HPP
