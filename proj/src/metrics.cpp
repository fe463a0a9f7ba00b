#include "stochens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stochens/errors.hpp"
#include "stochens/store.hpp"

namespace stochens {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_same_points(const PredictiveDistribution& a, const PredictiveDistribution& b) {
  if (a.probs.rows() != b.probs.rows() || a.probs.cols() != b.probs.cols()) {
    throw ShapeError("predictive shapes differ: " + std::to_string(a.probs.rows()) + "x" +
                     std::to_string(a.probs.cols()) + " vs " + std::to_string(b.probs.rows()) + "x" +
                     std::to_string(b.probs.cols()));
  }
  if (a.points.size() > 0 && b.points.size() > 0 &&
      (a.points.rows() != b.points.rows() || a.points.cols() != b.points.cols() ||
       (a.points - b.points).cwiseAbs().maxCoeff() > 1e-12)) {
    throw ShapeError("predictive distributions are evaluated at different points");
  }
}

void check_labels(const PredictiveDistribution& pd, const std::vector<int>& labels) {
  if (labels.size() != pd.size()) {
    throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(pd.size()) +
                     " predictions");
  }
  for (int y : labels) {
    if (y < 0 || y >= pd.probs.cols()) throw DomainError("label " + std::to_string(y) + " out of range");
  }
}

double row_entropy(const Matrix& probs, Eigen::Index i) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    const double p = probs(i, c);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json comparison_json(const ReferenceComparison& c) {
  nlohmann::json j = {{"agreement", c.agreement},
                      {"variance", c.variance},
                      {"mean_abs_entropy_diff", c.mean_abs_entropy_diff}};
  j["mean_abs_mi_diff"] = c.mean_abs_mi_diff ? nlohmann::json(*c.mean_abs_mi_diff) : nlohmann::json(nullptr);
  return j;
}

ReferenceComparison comparison_from_json(const nlohmann::json& j) {
  ReferenceComparison c;
  c.agreement = j.at("agreement");
  c.variance = j.at("variance");
  c.mean_abs_entropy_diff = j.at("mean_abs_entropy_diff");
  if (!j.at("mean_abs_mi_diff").is_null()) c.mean_abs_mi_diff = j.at("mean_abs_mi_diff").get<double>();
  return c;
}

}  // namespace

void PredictiveDistribution::validate() const {
  if (probs.rows() == 0 || probs.cols() < 1) throw ShapeError("empty predictive distribution");
  if (!probs.allFinite() || probs.minCoeff() < 0.0) throw DomainError("predictive has invalid probabilities");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-9) {
      throw DomainError("predictive row " + std::to_string(i) + " does not sum to 1");
    }
  }
  if (points.size() > 0 && points.rows() != probs.rows()) throw ShapeError("points and probabilities disagree");
  if (has_stack()) {
    Matrix mean = Matrix::Zero(probs.rows(), probs.cols());
    for (const auto& m : member_stack) {
      if (m.rows() != probs.rows() || m.cols() != probs.cols()) throw ShapeError("member stack shape mismatch");
      mean += m;
    }
    mean /= static_cast<double>(member_stack.size());
    if ((mean - probs).cwiseAbs().maxCoeff() > 1e-9) throw DomainError("member stack mean differs from probs");
  }
  if (member_entropy_mean.size() > 0 && member_entropy_mean.size() != probs.rows()) {
    throw ShapeError("member entropy length differs from point count");
  }
}

Vector predictive_entropy(const Matrix& probs) {
  Vector h(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) h[i] = row_entropy(probs, i);
  return h;
}

Vector predictive_entropy(const PredictiveDistribution& pd) { return predictive_entropy(pd.probs); }

bool PredictiveDistribution::has_members() const {
  return member_stack.size() >= 2 ||
         (n_members >= 2 && member_entropy_mean.size() == probs.rows());
}

Vector mutual_information(const PredictiveDistribution& pd) {
  if (!pd.has_members()) throw ConfigError("mutual information needs at least 2 members");
  if (pd.member_stack.size() < 2) {
    return (predictive_entropy(pd.probs) - pd.member_entropy_mean).cwiseMax(0.0);
  }
  Vector mean_member_entropy = Vector::Zero(pd.probs.rows());
  for (const auto& m : pd.member_stack) mean_member_entropy += predictive_entropy(m);
  mean_member_entropy /= static_cast<double>(pd.member_stack.size());
  return (predictive_entropy(pd.probs) - mean_member_entropy).cwiseMax(0.0);
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double agreement(const PredictiveDistribution& pd, const PredictiveDistribution& reference) {
  check_same_points(pd, reference);
  const auto a = argmax_rows(pd.probs), b = argmax_rows(reference.probs);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double predictive_variance(const PredictiveDistribution& pd, const PredictiveDistribution& reference) {
  check_same_points(pd, reference);
  return 0.5 * (pd.probs - reference.probs).cwiseAbs().rowwise().sum().mean();
}

EceResult ece(const PredictiveDistribution& pd, const std::vector<int>& labels, int n_bins) {
  if (n_bins < 1) throw ConfigError("ece needs at least one bin");
  check_labels(pd, labels);
  const auto pred = argmax_rows(pd.probs);
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0), correct(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double conf = pd.probs(static_cast<Eigen::Index>(i), pred[i]);
    const auto b = static_cast<std::size_t>(std::min(n_bins - 1, static_cast<int>(conf * n_bins)));
    conf_sum[b] += conf;
    correct[b] += pred[i] == labels[i];
    ++count[b];
  }
  EceResult r;
  const double n = static_cast<double>(pred.size());
  for (std::size_t b = 0; b < count.size(); ++b) {
    CalibrationBin bin;
    bin.count = count[b];
    if (count[b] == 0) {
      bin.confidence = bin.accuracy = kNaN;
    } else {
      bin.confidence = conf_sum[b] / static_cast<double>(count[b]);
      bin.accuracy = correct[b] / static_cast<double>(count[b]);
      r.value += static_cast<double>(count[b]) / n * std::abs(bin.accuracy - bin.confidence);
    }
    r.curve.push_back(bin);
  }
  return r;
}

double odd_auroc(const Vector& score_in, const Vector& score_out) {
  if (score_in.size() == 0 || score_out.size() == 0) throw ShapeError("odd_auroc needs nonempty score sets");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  for (double s : score_in) items.push_back({s, false});
  for (double s : score_out) items.push_back({s, true});
  for (const auto& it : items) {
    if (std::isnan(it.score)) throw DomainError("odd_auroc scores must not be NaN");
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].positive) rank_sum += midrank;
    }
    i = j;
  }
  const double n_pos = static_cast<double>(score_out.size());
  const double n_neg = static_cast<double>(score_in.size());
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double mean_abs_diff(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("mean_abs_diff length mismatch: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.size() == 0) throw ShapeError("mean_abs_diff of empty maps");
  return (a - b).cwiseAbs().mean();
}

double accuracy(const PredictiveDistribution& pd, const std::vector<int>& labels) {
  check_labels(pd, labels);
  const auto pred = argmax_rows(pd.probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double mean_nll(const PredictiveDistribution& pd, const std::vector<int>& labels) {
  check_labels(pd, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s -= std::log(pd.probs(static_cast<Eigen::Index>(i), labels[i]));
  return s / static_cast<double>(labels.size());
}

ReferenceComparison compare_to_reference(const PredictiveDistribution& pd,
                                         const PredictiveDistribution& reference) {
  ReferenceComparison c;
  c.agreement = agreement(pd, reference);
  c.variance = predictive_variance(pd, reference);
  c.mean_abs_entropy_diff = mean_abs_diff(predictive_entropy(pd), predictive_entropy(reference));
  if (pd.has_members() && reference.has_members()) {
    c.mean_abs_mi_diff = mean_abs_diff(mutual_information(pd), mutual_information(reference));
  }
  return c;
}

MetricsReport evaluate(const EvaluationInputs& in) {
  in.test.validate();
  MetricsReport r;
  r.ece_bins = in.ece_bins;
  r.accuracy = accuracy(in.test, in.test_labels);
  r.loss = mean_nll(in.test, in.test_labels);
  const EceResult e = ece(in.test, in.test_labels, in.ece_bins);
  r.ece = e.value;
  r.calibration_curve = e.curve;

  if (in.grid_out) {
    const PredictiveDistribution& out = *in.grid_out;
    if (out.points.rows() != out.probs.rows()) throw ShapeError("grid_out predictive lacks its points");
    const Vector h = predictive_entropy(out);
    std::vector<double> outside;
    for (Eigen::Index i = 0; i < out.points.rows(); ++i) {
      if (out.points.row(i).cwiseAbs().maxCoeff() > 1.0) outside.push_back(h[i]);
    }
    if (!outside.empty()) {
      r.odd_auroc = odd_auroc(predictive_entropy(in.test),
                              Eigen::Map<const Vector>(outside.data(), static_cast<Eigen::Index>(outside.size())));
    }
  }
  if (in.grid_in && in.reference_in) r.in_domain = compare_to_reference(*in.grid_in, *in.reference_in);
  if (in.grid_out && in.reference_out) r.out_of_domain = compare_to_reference(*in.grid_out, *in.reference_out);
  if (in.reference_test) r.test_set = compare_to_reference(in.test, *in.reference_test);
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& b : calibration_curve) {
    curve.push_back({{"bin_confidence", number_or_null(b.confidence)},
                     {"bin_accuracy", number_or_null(b.accuracy)},
                     {"bin_count", b.count}});
  }
  nlohmann::json j = {{"accuracy", accuracy}, {"loss", number_or_null(loss)}, {"ece", ece}};
  j["odd_auroc"] = odd_auroc ? nlohmann::json(*odd_auroc) : nlohmann::json(nullptr);
  const ReferenceComparison* flat = in_domain ? &*in_domain : nullptr;
  for (const char* key : {"agreement", "variance", "mean_abs_entropy_diff", "mean_abs_mi_diff"}) {
    j[key] = flat ? comparison_json(*flat).at(key) : nlohmann::json(nullptr);
  }
  j["out_of_domain"] = out_of_domain ? comparison_json(*out_of_domain) : nlohmann::json(nullptr);
  j["test_set"] = test_set ? comparison_json(*test_set) : nlohmann::json(nullptr);
  j["calibration_curve"] = curve;
  j["metadata"] = {
      {"variance_definition", "mean over points of 0.5 * sum_c |p_c - p_ref_c| (total variation)"},
      {"entropy_units", "nats"},
      {"ece_bins", ece_bins},
      {"odd_score", "predictive entropy; positives are grid_out points with max|x| > 1, negatives are test points"},
      {"comparison_points", "agreement/variance/diffs at top level use the in-domain grid"}};
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.accuracy = j.at("accuracy");
    r.loss = number_or_nan(j.at("loss"));
    r.ece = j.at("ece");
    if (!j.at("odd_auroc").is_null()) r.odd_auroc = j.at("odd_auroc").get<double>();
    if (!j.at("agreement").is_null()) r.in_domain = comparison_from_json(j);
    if (!j.at("out_of_domain").is_null()) r.out_of_domain = comparison_from_json(j.at("out_of_domain"));
    if (!j.at("test_set").is_null()) r.test_set = comparison_from_json(j.at("test_set"));
    for (const auto& b : j.at("calibration_curve")) {
      r.calibration_curve.push_back(
          {number_or_nan(b.at("bin_confidence")), number_or_nan(b.at("bin_accuracy")), b.at("bin_count")});
    }
    r.ece_bins = j.at("metadata").at("ece_bins");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
  return r;
}

void write_calibration_csv(const std::filesystem::path& path, const std::vector<CalibrationBin>& curve) {
  std::string out = "bin_confidence,bin_accuracy,bin_count\n";
  for (const auto& b : curve) {
    out += format_double(b.confidence) + "," + format_double(b.accuracy) + "," + std::to_string(b.count) + "\n";
  }
  write_text(path, out);
}

}  // namespace stochens
