#ifndef STOCHENS_ENSEMBLE_HPP
#define STOCHENS_ENSEMBLE_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stochens/hmc.hpp"
#include "stochens/masks.hpp"
#include "stochens/metrics.hpp"
#include "stochens/rng.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

enum class EnsembleKind { Regular, MultiSWA, SE1, SE2, SE3 };
std::string to_string(EnsembleKind k);
EnsembleKind ensemble_kind_from_string(const std::string& s);
/// Stochastic family a kind trains with (SE1 dropout, SE2 DropConnect, SE3 exchange).
StochasticKind stochastic_kind_of(EnsembleKind k);

enum class OptimizerKind { SGD, Momentum, Adam };
std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

enum class ScheduleKind { Constant, Cosine, Piecewise };
std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct SwaConfig {
  int start_epoch = 250;
  /// Steps per cyclic learning-rate cycle in the averaging phase; 1 keeps it constant.
  int cycle_length = 1;
  /// Optimizer steps between snapshots.
  int snapshot_interval = 1;
  double swa_lr = 0.01;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-2;
  ScheduleKind schedule = ScheduleKind::Cosine;
  std::vector<double> milestones{0.5, 0.75};  // piecewise: fractions of training
  double decay = 0.1;                         // piecewise: factor per milestone
  int epochs = 500;
  int batch_size = 0;  // 0 = full batch
  double momentum = 0.9;
  std::optional<SwaConfig> swa;

  void validate() const;
  double learning_rate_at(int epoch) const;
};

/// Stateful first-order update rule (Adam: beta1 0.9, beta2 0.999, eps 1e-8).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double momentum, Eigen::Index dim);
  void step(Vector& theta, const Vector& grad, double lr);

 private:
  OptimizerKind kind_;
  double momentum_;
  Vector m_, v_;
  long long t_ = 0;
};

/// Returns the minibatch loss at theta and writes its gradient.
using BatchGradFn = std::function<double(int epoch, int batch, const Vector& theta, Vector& grad)>;

struct TrainTrace {
  Vector theta;                     // last iterate
  std::vector<double> epoch_loss;   // mean minibatch loss per epoch
  std::optional<Vector> swa_average;
  int n_snapshots = 0;
};

/// Generic loop shared by all trainers. With cfg.swa set, the averaging phase
/// starts at swa.start_epoch and snapshots are averaged as sum / count.
TrainTrace run_training(Vector theta0, int batches_per_epoch, const TrainConfig& cfg,
                        const BatchGradFn& batch_grad);

/// He-normal weights and zero biases.
ParamVector init_params(const MLPArch& arch, Rng& rng);

struct MemberResult {
  MemberParams params;
  std::vector<double> epoch_loss;
  int n_snapshots = 0;
};

/// Streams: init, minibatch order, and masks each come from their own seed
/// derived from `member_seed`.
MemberResult train_member(const Dataset& data, EnsembleKind kind, const StochasticSpec& spec,
                          const TrainConfig& cfg, const PriorSpec& prior, const MLPArch& arch,
                          std::uint64_t member_seed);

/// MultiSWA member: the SWA average of one training run.
ParamVector swa_member(const Dataset& data, const TrainConfig& cfg, const PriorSpec& prior,
                       const MLPArch& arch, std::uint64_t member_seed);

struct EnsembleModel {
  EnsembleKind kind = EnsembleKind::Regular;
  std::vector<MemberParams> members;
  StochasticSpec stochastic;
  PriorSpec prior;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> member_seeds;

  std::size_t size() const { return members.size(); }
  void validate() const;
};

/// `spec.kind` must match the family of `kind`. Members train on up to `jobs`
/// threads; the result does not depend on `jobs`.
EnsembleModel train_ensemble(const Dataset& data, EnsembleKind kind, const StochasticSpec& spec,
                             int K, const TrainConfig& cfg, const PriorSpec& prior,
                             const MLPArch& arch, std::uint64_t seed, int jobs = 1);

void save_model(const std::string& dir, const EnsembleModel& model);
EnsembleModel load_model(const std::string& dir);

struct PredictOptions {
  int inferences_per_member = 1;
  std::uint64_t seed = 0;
  /// Keep one probability matrix per inference; otherwise only their mean
  /// entropy is retained (enough for mutual information).
  bool keep_stack = false;
  int jobs = 1;
};

PredictiveDistribution predict(const EnsembleModel& model, const Matrix& points,
                               const PredictOptions& opts = {});
/// Equally weighted average over posterior draws.
PredictiveDistribution predict(const PosteriorSamples& posterior, const Matrix& points,
                               const PredictOptions& opts = {});

struct MultiSwaCandidate {
  double swa_lr = 0.0;
  double start_fraction = 0.0;
  double agreement = 0.0;
};

struct MultiSwaSearch {
  EnsembleModel best;
  std::vector<MultiSwaCandidate> candidates;
  std::size_t best_index = 0;
};

/// Trains one MultiSWA ensemble per grid point (swa_lr x start fraction) and
/// keeps the one agreeing most with `reference` on `points`.
MultiSwaSearch multiswa_search(const Dataset& data, int K, const TrainConfig& base,
                               const PriorSpec& prior, const MLPArch& arch, std::uint64_t seed,
                               const Matrix& points, const PredictiveDistribution& reference,
                               const std::vector<double>& swa_lrs = {0.01, 0.05},
                               const std::vector<double>& start_fractions = {0.5, 0.75},
                               int jobs = 1);

}  // namespace stochens

#endif  // STOCHENS_ENSEMBLE_HPP
