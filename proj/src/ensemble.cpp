#include "stochens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <thread>

#include "stochens/errors.hpp"
#include "stochens/store.hpp"
#include "stochens/vi_objective.hpp"

namespace stochens {

namespace {

// Per-member sub-streams.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kMaskStream = 3;

// Runs task(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure by index after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
  std::vector<std::string> errors(n);
  std::mutex mu;
  std::size_t next = 0;
  const auto worker = [&] {
    for (;;) {
      std::size_t i = 0;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        task(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw ComputeError("task " + std::to_string(i) + ": " + errors[i]);
  }
}

Dataset gather(const Dataset& data, const std::vector<Eigen::Index>& order, std::size_t begin,
               std::size_t end) {
  Dataset b;
  b.n_classes = data.n_classes;
  b.domain = data.domain;
  b.points.resize(static_cast<Eigen::Index>(end - begin), data.points.cols());
  for (std::size_t i = begin; i < end; ++i) {
    b.points.row(static_cast<Eigen::Index>(i - begin)) = data.points.row(order[i]);
    b.labels.push_back(data.labels[static_cast<std::size_t>(order[i])]);
  }
  return b;
}

nlohmann::json spec_json(const StochasticSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"hidden_drop_rate", s.hidden_drop_rate},
          {"output_drop_rate", s.output_drop_rate},
          {"applies_to_output_layer", s.applies_to_output_layer}};
}

StochasticSpec spec_from_json(const nlohmann::json& j) {
  StochasticSpec s;
  s.kind = stochastic_kind_from_string(j.at("kind"));
  s.hidden_drop_rate = j.at("hidden_drop_rate");
  s.output_drop_rate = j.at("output_drop_rate");
  s.applies_to_output_layer = j.at("applies_to_output_layer");
  return s;
}

nlohmann::json train_json(const TrainConfig& c) {
  nlohmann::json j = {{"optimizer", to_string(c.optimizer)},
                      {"learning_rate", c.learning_rate},
                      {"schedule", to_string(c.schedule)},
                      {"milestones", c.milestones},
                      {"decay", c.decay},
                      {"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"momentum", c.momentum}};
  if (c.swa) {
    j["swa"] = {{"start_epoch", c.swa->start_epoch},
                {"cycle_length", c.swa->cycle_length},
                {"snapshot_interval", c.swa->snapshot_interval},
                {"swa_lr", c.swa->swa_lr}};
  } else {
    j["swa"] = nullptr;
  }
  return j;
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.optimizer = optimizer_kind_from_string(j.at("optimizer"));
  c.learning_rate = j.at("learning_rate");
  c.schedule = schedule_kind_from_string(j.at("schedule"));
  c.milestones = j.at("milestones").get<std::vector<double>>();
  c.decay = j.at("decay");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.momentum = j.at("momentum");
  if (!j.at("swa").is_null()) {
    const auto& s = j.at("swa");
    c.swa = SwaConfig{s.at("start_epoch"), s.at("cycle_length"), s.at("snapshot_interval"), s.at("swa_lr")};
  }
  return c;
}

}  // namespace

// ------------------------------------------------------------- enum names

std::string to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::Regular: return "regular";
    case EnsembleKind::MultiSWA: return "multiswa";
    case EnsembleKind::SE1: return "se1";
    case EnsembleKind::SE2: return "se2";
    case EnsembleKind::SE3: return "se3";
  }
  return "?";
}

EnsembleKind ensemble_kind_from_string(const std::string& s) {
  for (auto k : {EnsembleKind::Regular, EnsembleKind::MultiSWA, EnsembleKind::SE1, EnsembleKind::SE2,
                 EnsembleKind::SE3}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown ensemble kind '" + s + "'");
}

StochasticKind stochastic_kind_of(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::SE1: return StochasticKind::Dropout;
    case EnsembleKind::SE2: return StochasticKind::DropConnect;
    case EnsembleKind::SE3: return StochasticKind::NPExchange;
    default: return StochasticKind::None;
  }
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::Momentum: return "sgd-momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  for (auto k : {OptimizerKind::SGD, OptimizerKind::Momentum, OptimizerKind::Adam}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, sgd-momentum or adam)");
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::Piecewise: return "piecewise";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  for (auto k : {ScheduleKind::Constant, ScheduleKind::Cosine, ScheduleKind::Piecewise}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown schedule '" + s + "' (expected constant, cosine or piecewise)");
}

// ----------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 0) throw ConfigError("batch_size must be >= 0 (0 = full batch)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(decay > 0.0)) throw ConfigError("decay must be > 0");
  for (double m : milestones) {
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("milestones must lie in (0, 1)");
  }
  if (swa) {
    if (swa->start_epoch < 0 || swa->start_epoch >= epochs) {
      throw ConfigError("swa.start_epoch must lie in [0, epochs)");
    }
    if (swa->cycle_length < 1) throw ConfigError("swa.cycle_length must be >= 1");
    if (swa->snapshot_interval < 1) throw ConfigError("swa.snapshot_interval must be >= 1");
    if (!(swa->swa_lr > 0.0)) throw ConfigError("swa.swa_lr must be > 0");
  }
}

double TrainConfig::learning_rate_at(int epoch) const {
  switch (schedule) {
    case ScheduleKind::Constant:
      return learning_rate;
    case ScheduleKind::Cosine:
      return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
    case ScheduleKind::Piecewise: {
      double lr = learning_rate;
      for (double m : milestones) {
        if (epoch >= m * epochs) lr *= decay;
      }
      return lr;
    }
  }
  return learning_rate;
}

// -------------------------------------------------------------- optimizer

Optimizer::Optimizer(OptimizerKind kind, double momentum, Eigen::Index dim)
    : kind_(kind), momentum_(momentum), m_(Vector::Zero(dim)), v_(Vector::Zero(dim)) {}

void Optimizer::step(Vector& theta, const Vector& grad, double lr) {
  switch (kind_) {
    case OptimizerKind::SGD:
      theta -= lr * grad;
      break;
    case OptimizerKind::Momentum:
      m_ = momentum_ * m_ + grad;
      theta -= lr * m_;
      break;
    case OptimizerKind::Adam: {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      ++t_;
      m_ = b1 * m_ + (1.0 - b1) * grad;
      v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
      break;
    }
  }
}

// ---------------------------------------------------------------- trainer

TrainTrace run_training(Vector theta0, int batches_per_epoch, const TrainConfig& cfg,
                        const BatchGradFn& batch_grad) {
  cfg.validate();
  if (batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be >= 1");
  TrainTrace trace;
  trace.theta = std::move(theta0);
  Optimizer opt(cfg.optimizer, cfg.momentum, trace.theta.size());
  Vector grad(trace.theta.size());
  Vector snapshot_sum;
  long long swa_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool averaging = cfg.swa && epoch >= cfg.swa->start_epoch;
    if (averaging && snapshot_sum.size() == 0) snapshot_sum = Vector::Zero(trace.theta.size());
    double loss_sum = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      double lr = cfg.learning_rate_at(epoch);
      if (averaging) {
        const int c = cfg.swa->cycle_length;
        if (c == 1) {
          lr = cfg.swa->swa_lr;
        } else {
          const double t = static_cast<double>(swa_step % c + 1) / c;
          lr = (1.0 - t) * cfg.learning_rate + t * cfg.swa->swa_lr;
        }
      }
      double loss = 0.0;
      try {
        loss = batch_grad(epoch, b, trace.theta, grad);
      } catch (const DomainError& e) {
        throw ComputeError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + " (learning rate " + std::to_string(lr) + "): " + e.what());
      }
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw ComputeError("non-finite training loss or gradient at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b) + " (loss " + std::to_string(loss) +
                           ", learning rate " + std::to_string(lr) + ")");
      }
      loss_sum += loss;
      opt.step(trace.theta, grad, lr);
      if (averaging && ++swa_step % cfg.swa->snapshot_interval == 0) {
        snapshot_sum += trace.theta;
        ++trace.n_snapshots;
      }
    }
    trace.epoch_loss.push_back(loss_sum / batches_per_epoch);
  }
  if (cfg.swa) {
    if (trace.n_snapshots == 0) {
      throw ConfigError("SWA phase collected no snapshots; lower swa.snapshot_interval or start_epoch");
    }
    trace.swa_average = snapshot_sum / static_cast<double>(trace.n_snapshots);
  }
  return trace;
}

ParamVector init_params(const MLPArch& arch, Rng& rng) {
  ParamVector p(arch);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / static_cast<double>(arch.widths[l])));
    auto W = p.weights(l);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = w(rng);
    }
    p.bias(l).setZero();
  }
  return p;
}

MemberResult train_member(const Dataset& data, EnsembleKind kind, const StochasticSpec& spec,
                          const TrainConfig& cfg, const PriorSpec& prior, const MLPArch& arch,
                          std::uint64_t member_seed) {
  data.validate();
  prior.validate();
  spec.validate();
  if (data.size() == 0) throw DomainError("cannot train on an empty dataset");
  if (spec.kind != stochastic_kind_of(kind)) {
    throw ConfigError("ensemble kind " + to_string(kind) + " cannot use stochastic kind " + to_string(spec.kind));
  }
  TrainConfig run_cfg = cfg;
  if (kind == EnsembleKind::MultiSWA) {
    if (!cfg.swa) throw ConfigError("multiswa needs a swa section in the training config");
  } else {
    run_cfg.swa.reset();
  }
  run_cfg.validate();

  Rng init_rng(derive_seed(member_seed, {kInitStream}));
  Rng order_rng(derive_seed(member_seed, {kOrderStream}));
  Rng mask_rng(derive_seed(member_seed, {kMaskStream}));

  MemberParams member{init_params(arch, init_rng), {}};
  const bool two_sets = kind == EnsembleKind::SE3;
  if (two_sets) member.secondary = init_params(arch, init_rng);
  const Eigen::Index d = static_cast<Eigen::Index>(arch.param_count());
  Vector theta(two_sets ? 2 * d : d);
  theta.head(d) = member.primary.values();
  if (two_sets) theta.tail(d) = member.secondary->values();

  const std::size_t n = data.size();
  const std::size_t batch =
      cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  const int batches = static_cast<int>((n + batch - 1) / batch);
  std::vector<Eigen::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);

  Dataset current;
  const BatchGradFn grad_fn = [&](int, int b, const Vector& th, Vector& grad) {
    if (batch < n && b == 0) std::shuffle(order.begin(), order.end(), order_rng);
    const Dataset* batch_data = &data;
    if (batch < n) {
      const std::size_t begin = static_cast<std::size_t>(b) * batch;
      current = gather(data, order, begin, std::min(n, begin + batch));
      batch_data = &current;
    }
    member.primary.values() = th.head(d);
    if (two_sets) member.secondary->values() = th.tail(d);
    const MaskSet masks = sample_masks(spec, arch, mask_rng);
    const TrainingLossGrad lg = training_loss_with_grad(member, *batch_data, spec, prior, n, masks);
    grad.head(d) = lg.grad_primary.values();
    if (two_sets) grad.tail(d) = lg.grad_secondary->values();
    return lg.loss;
  };
  TrainTrace trace = run_training(std::move(theta), batches, run_cfg, grad_fn);

  MemberResult out;
  out.epoch_loss = std::move(trace.epoch_loss);
  out.n_snapshots = trace.n_snapshots;
  const Vector& final_theta = trace.swa_average ? *trace.swa_average : trace.theta;
  out.params.primary = ParamVector(arch, final_theta.head(d));
  if (two_sets) out.params.secondary = ParamVector(arch, final_theta.tail(d));
  return out;
}

ParamVector swa_member(const Dataset& data, const TrainConfig& cfg, const PriorSpec& prior,
                       const MLPArch& arch, std::uint64_t member_seed) {
  return train_member(data, EnsembleKind::MultiSWA, StochasticSpec{}, cfg, prior, arch, member_seed)
      .params.primary;
}

// --------------------------------------------------------------- ensemble

void EnsembleModel::validate() const {
  if (members.empty()) throw ShapeError("ensemble has no members");
  if (member_seeds.size() != members.size()) throw ShapeError("one seed per member expected");
  if (stochastic.kind != stochastic_kind_of(kind)) throw ConfigError("stochastic spec does not match ensemble kind");
  const MLPArch& arch = members.front().primary.arch();
  for (const auto& m : members) {
    if (m.primary.arch() != arch) throw ShapeError("ensemble members differ in architecture");
    if (m.secondary.has_value() != (kind == EnsembleKind::SE3)) {
      throw ShapeError("se3 members need exactly two parameter sets, other kinds one");
    }
    if (m.secondary && m.secondary->arch() != arch) throw ShapeError("se3 parameter sets differ in architecture");
  }
}

EnsembleModel train_ensemble(const Dataset& data, EnsembleKind kind, const StochasticSpec& spec,
                             int K, const TrainConfig& cfg, const PriorSpec& prior,
                             const MLPArch& arch, std::uint64_t seed, int jobs) {
  if (K < 1) throw ConfigError("ensemble size K must be >= 1");
  EnsembleModel model;
  model.kind = kind;
  model.stochastic = spec;
  model.prior = prior;
  model.train = cfg;
  model.seed = seed;
  model.members.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    model.member_seeds.push_back(derive_seed(seed, {stream::kMember, static_cast<std::uint64_t>(k)}));
  }
  parallel_for(static_cast<std::size_t>(K), jobs, [&](std::size_t k) {
    model.members[k] = train_member(data, kind, spec, cfg, prior, arch, model.member_seeds[k]).params;
  });
  model.validate();
  return model;
}

void save_model(const std::string& dir, const EnsembleModel& model) {
  model.validate();
  const fs::path root(dir);
  fs::create_directories(root);
  std::vector<ParamVector> flat;
  for (const auto& m : model.members) {
    flat.push_back(m.primary);
    if (m.secondary) flat.push_back(*m.secondary);
  }
  write_param_list(root / "members.bin", flat);
  nlohmann::json meta = {{"kind", to_string(model.kind)},
                         {"K", model.members.size()},
                         {"arch", model.members.front().primary.arch().to_string()},
                         {"stochastic", spec_json(model.stochastic)},
                         {"prior", {{"lambda", model.prior.lambda}}},
                         {"train", train_json(model.train)},
                         {"seed", model.seed},
                         {"member_seeds", model.member_seeds},
                         {"members_layout", model.kind == EnsembleKind::SE3 ? "interleaved A,B" : "one vector per member"}};
  write_json(root / "meta.json", meta);
}

EnsembleModel load_model(const std::string& dir) {
  const fs::path root(dir);
  const nlohmann::json meta = read_json(root / "meta.json");
  EnsembleModel model;
  std::size_t K = 0;
  try {
    model.kind = ensemble_kind_from_string(meta.at("kind"));
    K = meta.at("K");
    model.stochastic = spec_from_json(meta.at("stochastic"));
    model.prior.lambda = meta.at("prior").at("lambda");
    model.train = train_from_json(meta.at("train"));
    model.seed = meta.at("seed");
    model.member_seeds = meta.at("member_seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((root / "meta.json").string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError((root / "meta.json").string() + ": " + e.what());
  }
  const std::vector<ParamVector> flat = read_param_list(root / "members.bin");
  const std::size_t per = model.kind == EnsembleKind::SE3 ? 2 : 1;
  if (flat.size() != K * per) {
    throw ParseError(dir + ": members.bin holds " + std::to_string(flat.size()) + " vectors, expected " +
                     std::to_string(K * per));
  }
  for (std::size_t k = 0; k < K; ++k) {
    MemberParams m{flat[k * per], {}};
    if (per == 2) m.secondary = flat[k * per + 1];
    model.members.push_back(std::move(m));
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------- predict

namespace {

// Averages `count` probability maps produced by `sample(i, block)` over the
// points, parallelized over point blocks so results do not depend on `jobs`.
PredictiveDistribution average_predictions(
    std::size_t count, const Matrix& points, const PredictOptions& opts,
    const std::function<Matrix(std::size_t, const Matrix&)>& sample) {
  if (count == 0) throw ShapeError("nothing to average");
  if (points.rows() == 0) throw ShapeError("no points to predict at");
  const Eigen::Index n = points.rows();
  constexpr Eigen::Index kBlock = 4096;
  const std::size_t n_blocks = static_cast<std::size_t>((n + kBlock - 1) / kBlock);

  PredictiveDistribution pd;
  pd.points = points;
  pd.n_members = count;
  pd.member_entropy_mean = Vector::Zero(n);
  Matrix sum;
  std::vector<Matrix> stack;
  if (opts.keep_stack) stack.resize(count);
  std::mutex init_mu;

  parallel_for(n_blocks, opts.jobs, [&](std::size_t blk) {
    const Eigen::Index begin = static_cast<Eigen::Index>(blk) * kBlock;
    const Eigen::Index rows = std::min(kBlock, n - begin);
    const Matrix block = points.middleRows(begin, rows);
    Matrix block_sum;
    Vector block_entropy = Vector::Zero(rows);
    for (std::size_t i = 0; i < count; ++i) {
      const Matrix p = sample(i, block);
      if (block_sum.size() == 0) block_sum = Matrix::Zero(rows, p.cols());
      block_sum += p;
      block_entropy += predictive_entropy(p);
      if (opts.keep_stack) {
        std::lock_guard lock(init_mu);
        if (stack[i].size() == 0) stack[i] = Matrix::Zero(n, p.cols());
        stack[i].middleRows(begin, rows) = p;
      }
    }
    std::lock_guard lock(init_mu);
    if (sum.size() == 0) sum = Matrix::Zero(n, block_sum.cols());
    sum.middleRows(begin, rows) = block_sum;
    pd.member_entropy_mean.segment(begin, rows) = block_entropy / static_cast<double>(count);
  });
  pd.probs = sum / static_cast<double>(count);
  pd.member_stack = std::move(stack);
  return pd;
}

}  // namespace

PredictiveDistribution predict(const EnsembleModel& model, const Matrix& points,
                               const PredictOptions& opts) {
  model.validate();
  if (opts.inferences_per_member < 1) throw ConfigError("inferences_per_member must be >= 1");
  const MLPArch& arch = model.members.front().primary.arch();
  if (static_cast<std::size_t>(points.cols()) != arch.input_width()) {
    throw ShapeError("points have " + std::to_string(points.cols()) + " columns, network expects " +
                     std::to_string(arch.input_width()));
  }
  const auto per = static_cast<std::size_t>(opts.inferences_per_member);
  return average_predictions(model.size() * per, points, opts, [&](std::size_t i, const Matrix& block) {
    const std::size_t k = i / per, rep = i % per;
    Rng rng = make_rng(opts.seed, {stream::kPredict, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(rep)});
    return masked_forward(model.members[k], model.stochastic, block, rng);
  });
}

PredictiveDistribution predict(const PosteriorSamples& posterior, const Matrix& points,
                               const PredictOptions& opts) {
  if (posterior.samples.empty()) throw ShapeError("posterior holds no samples");
  const MLPArch& arch = posterior.samples.front().arch();
  if (static_cast<std::size_t>(points.cols()) != arch.input_width()) {
    throw ShapeError("points have " + std::to_string(points.cols()) + " columns, network expects " +
                     std::to_string(arch.input_width()));
  }
  return average_predictions(posterior.samples.size(), points, opts, [&](std::size_t i, const Matrix& block) {
    return softmax(forward(posterior.samples[i], block));
  });
}

// -------------------------------------------------------------- MultiSWA

MultiSwaSearch multiswa_search(const Dataset& data, int K, const TrainConfig& base,
                               const PriorSpec& prior, const MLPArch& arch, std::uint64_t seed,
                               const Matrix& points, const PredictiveDistribution& reference,
                               const std::vector<double>& swa_lrs,
                               const std::vector<double>& start_fractions, int jobs) {
  if (swa_lrs.empty() || start_fractions.empty()) throw ConfigError("MultiSWA grid is empty");
  MultiSwaSearch out;
  double best = -1.0;
  for (double lr : swa_lrs) {
    for (double frac : start_fractions) {
      if (!(frac >= 0.0 && frac < 1.0)) throw ConfigError("SWA start fraction must lie in [0, 1)");
      TrainConfig cfg = base;
      SwaConfig swa = base.swa.value_or(SwaConfig{});
      swa.swa_lr = lr;
      swa.start_epoch = static_cast<int>(std::floor(frac * base.epochs));
      cfg.swa = swa;
      EnsembleModel model = train_ensemble(data, EnsembleKind::MultiSWA, StochasticSpec{}, K, cfg, prior,
                                           arch, seed, jobs);
      PredictOptions po;
      po.seed = seed;
      po.jobs = jobs;
      const double agr = agreement(predict(model, points, po), reference);
      out.candidates.push_back({lr, frac, agr});
      if (agr > best) {
        best = agr;
        out.best = std::move(model);
        out.best_index = out.candidates.size() - 1;
      }
    }
  }
  return out;
}

}  // namespace stochens
