#include "stochens/vi_objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "stochens/errors.hpp"

namespace stochens {

namespace {

/// Streaming mean and variance (Welford).
class RunningStats {
 public:
  void push(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const { return std::sqrt(variance() / static_cast<double>(n_)); }
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

/// Parameters that vary together between the two mixture components of one
/// unit: a node row (Dropout, NPExchange) or a single weight (DropConnect).
struct StochasticGroup {
  std::vector<std::size_t> indices;
  double p_primary = 1.0;
  double p_secondary = 0.0;
};

struct StochasticStructure {
  std::vector<StochasticGroup> groups;
  std::vector<std::size_t> fixed;
};

StochasticStructure stochastic_structure(const StochasticSpec& spec, const MLPArch& arch) {
  StochasticStructure s;
  const std::size_t L = arch.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = arch.widths[l], out = arch.widths[l + 1];
    const std::size_t off = arch.weight_offset(l);
    if (!spec.masks_layer(l, L)) {
      for (std::size_t j = 0; j < arch.layer_param_count(l); ++j) s.fixed.push_back(off + j);
      continue;
    }
    const double keep = spec.keep_probability(l, L);
    if (spec.kind == StochasticKind::DropConnect) {
      for (std::size_t j = 0; j < arch.layer_param_count(l); ++j) {
        s.groups.push_back({{off + j}, keep, 1.0 - keep});
      }
      continue;
    }
    for (std::size_t n = 0; n < out; ++n) {
      StochasticGroup g{{}, keep, 1.0 - keep};
      for (std::size_t j = 0; j < in; ++j) g.indices.push_back(off + n * in + j);
      g.indices.push_back(off + out * in + n);
      s.groups.push_back(std::move(g));
    }
  }
  return s;
}

double kl_constant(std::size_t dim, double sigma2, double lambda) {
  return 0.5 * static_cast<double>(dim) *
         (lambda * sigma2 - std::log(sigma2) - 1.0 - std::log(lambda));
}

double nll_of_logits(const Matrix& logits, const std::vector<int>& labels) {
  const Matrix logp = log_softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total -= logp(static_cast<Eigen::Index>(i), labels[i]);
  }
  return total;
}

}  // namespace

void EnsembleFamilySpec::validate() const {
  if (members.empty()) throw ConfigError("ensemble has no members");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ConfigError("sigma2 must be positive");
  prior.validate();
  stochastic.validate();
  const MLPArch& arch = members.front().primary.arch();
  for (const auto& m : members) {
    if (!(m.primary.arch() == arch)) throw ShapeError("ensemble members differ in architecture");
    if (stochastic.kind == StochasticKind::NPExchange) {
      if (!m.secondary) throw ConfigError("NPExchange member lacks its second parameter set");
      if (!(m.secondary->arch() == arch)) throw ShapeError("second parameter set differs in architecture");
    }
  }
}

void GaussianMixture::validate() const {
  if (weights.empty() || weights.size() != means.size()) {
    throw ShapeError("mixture needs one weight per mean");
  }
  if (!(sigma2 > 0.0) || !std::isnormal(sigma2)) {
    throw DomainError("mixture sigma2 must be a positive normal number");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("negative mixture weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("mixture weights do not sum to 1");
  for (const auto& m : means) {
    if (m.size() != means.front().size()) throw ShapeError("mixture means differ in dimension");
  }
}

double enll(const EnsembleFamilySpec& ensemble, const Dataset& data, int passes_per_member,
            Rng& rng) {
  ensemble.validate();
  if (passes_per_member < 1) throw ConfigError("passes_per_member must be >= 1");
  double total = 0.0;
  for (const auto& member : ensemble.members) {
    if (ensemble.stochastic.kind == StochasticKind::None) {
      total += nll(member.primary, data);
      continue;
    }
    double member_total = 0.0;
    for (int pass = 0; pass < passes_per_member; ++pass) {
      const MaskSet masks = sample_masks(ensemble.stochastic, member.primary.arch(), rng);
      member_total += nll_of_logits(realized_logits(member, masks, data.points), data.labels);
    }
    total += member_total / passes_per_member;
  }
  return total / static_cast<double>(ensemble.members.size());
}

double rf_upper_bound(const std::vector<ParamVector>& members, double sigma2) {
  const std::size_t K = members.size();
  if (K <= 1) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t k2 = 0; k2 < K; ++k2) {
      if (k2 == k) continue;
      const double d2 = (members[k].values() - members[k2].values()).squaredNorm();
      sum += std::exp(-d2 / (8.0 * sigma2));
    }
  }
  return sum / static_cast<double>(K);
}

KLBreakdown kl_deep_ensemble(const EnsembleFamilySpec& ensemble) {
  ensemble.validate();
  if (ensemble.stochastic.kind != StochasticKind::None) {
    throw DomainError("kl_deep_ensemble needs a non-stochastic ensemble");
  }
  const double K = static_cast<double>(ensemble.members.size());
  const double lambda = ensemble.prior.lambda;
  KLBreakdown kl;
  kl.constant_term = kl_constant(ensemble.dim(), ensemble.sigma2, lambda);
  std::vector<ParamVector> means;
  for (const auto& m : ensemble.members) {
    kl.l2_term += lambda * m.primary.values().squaredNorm();
    means.push_back(m.primary);
  }
  kl.l2_term /= 2.0 * K;
  kl.log_k_term = -std::log(K);
  kl.rf_bound = rf_upper_bound(means, ensemble.sigma2);
  kl.total_upper_bound = kl.total_without_rf() + kl.rf_bound;
  return kl;
}

L2Weights l2_weights(const StochasticSpec& spec, const MLPArch& arch) {
  L2Weights w{Vector::Ones(static_cast<Eigen::Index>(arch.param_count())),
              Vector::Zero(static_cast<Eigen::Index>(arch.param_count()))};
  const StochasticStructure s = stochastic_structure(spec, arch);
  for (const auto& g : s.groups) {
    for (std::size_t j : g.indices) {
      w.primary[static_cast<Eigen::Index>(j)] = g.p_primary;
      if (spec.kind == StochasticKind::NPExchange) {
        w.secondary[static_cast<Eigen::Index>(j)] = g.p_secondary;
      }
    }
  }
  return w;
}

double effective_l2(const MemberParams& member, const StochasticSpec& spec) {
  const L2Weights w = l2_weights(spec, member.primary.arch());
  double l2 = (w.primary.array() * member.primary.values().array().square()).sum();
  if (spec.kind == StochasticKind::NPExchange) {
    if (!member.secondary) throw DomainError("NPExchange member lacks its second parameter set");
    l2 += (w.secondary.array() * member.secondary->values().array().square()).sum();
  }
  return l2;
}

KLBreakdown kl_stochastic_ensemble(const EnsembleFamilySpec& ensemble, Rng& rng,
                                   std::size_t rf_samples) {
  ensemble.validate();
  if (ensemble.stochastic.kind == StochasticKind::None) {
    throw DomainError("kl_stochastic_ensemble needs a stochastic ensemble");
  }
  const MLPArch& arch = ensemble.members.front().primary.arch();
  const double K = static_cast<double>(ensemble.members.size());
  const double lambda = ensemble.prior.lambda;
  KLBreakdown kl;
  kl.constant_term = kl_constant(ensemble.dim(), ensemble.sigma2, lambda);
  for (const auto& m : ensemble.members) kl.l2_term += lambda * effective_l2(m, ensemble.stochastic);
  kl.l2_term /= 2.0 * K;
  kl.log_k_term = -std::log(K);
  for (const auto& g : stochastic_structure(ensemble.stochastic, arch).groups) {
    kl.stochastic_entropy_term += xlogx(g.p_primary) + xlogx(g.p_secondary);
  }
  kl.rf_bound = rf2_mc_bound(ensemble, rng, rf_samples).estimate;
  kl.total_upper_bound = kl.total_without_rf() + kl.rf_bound;
  return kl;
}

McEstimate rf2_mc_bound(const EnsembleFamilySpec& ensemble, Rng& rng, std::size_t n_samples) {
  ensemble.validate();
  if (n_samples < 2) throw ConfigError("rf2_mc_bound needs at least 2 samples");
  const MLPArch& arch = ensemble.members.front().primary.arch();
  const StochasticStructure s = stochastic_structure(ensemble.stochastic, arch);
  const std::size_t K = ensemble.members.size();
  const bool exchange = ensemble.stochastic.kind == StochasticKind::NPExchange;

  // Z = sum_c sqrt(w_c) = sqrt(K) * prod_g (sqrt p1 + sqrt p2).
  double log_z2 = std::log(static_cast<double>(K));
  std::vector<double> pick_primary;
  for (const auto& g : s.groups) {
    const double a = std::sqrt(g.p_primary), b = std::sqrt(g.p_secondary);
    log_z2 += 2.0 * std::log(a + b);
    pick_primary.push_back(a / (a + b));
  }
  const double z2 = std::exp(log_z2);

  std::uniform_int_distribution<std::size_t> pick_member(0, K - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint8_t> r1(s.groups.size()), r2(s.groups.size());
  const auto value = [&](std::size_t k, std::uint8_t primary, std::size_t j) {
    const auto idx = static_cast<Eigen::Index>(j);
    if (primary) return ensemble.members[k].primary.values()[idx];
    return exchange ? ensemble.members[k].secondary->values()[idx] : 0.0;
  };

  RunningStats stats;
  for (std::size_t t = 0; t < n_samples; ++t) {
    const std::size_t k1 = pick_member(rng), k2 = pick_member(rng);
    bool same = k1 == k2;
    for (std::size_t g = 0; g < s.groups.size(); ++g) {
      r1[g] = unit(rng) < pick_primary[g];
      r2[g] = unit(rng) < pick_primary[g];
      same = same && r1[g] == r2[g];
    }
    if (same) {
      stats.push(0.0);
      continue;
    }
    double d2 = 0.0;
    for (std::size_t j : s.fixed) {
      const double diff = value(k1, 1, j) - value(k2, 1, j);
      d2 += diff * diff;
    }
    for (std::size_t g = 0; g < s.groups.size(); ++g) {
      for (std::size_t j : s.groups[g].indices) {
        const double diff = value(k1, r1[g], j) - value(k2, r2[g], j);
        d2 += diff * diff;
      }
    }
    stats.push(std::exp(-d2 / (8.0 * ensemble.sigma2)));
  }
  return {z2 * stats.mean(), z2 * stats.std_error()};
}

double rf_mixture_bound(const GaussianMixture& mixture) {
  mixture.validate();
  double sum = 0.0;
  for (std::size_t c = 0; c < mixture.means.size(); ++c) {
    for (std::size_t c2 = 0; c2 < mixture.means.size(); ++c2) {
      if (c == c2) continue;
      const double d2 = (mixture.means[c] - mixture.means[c2]).squaredNorm();
      sum += std::sqrt(mixture.weights[c] * mixture.weights[c2]) *
             std::exp(-d2 / (8.0 * mixture.sigma2));
    }
  }
  return sum;
}

double mixture_kl_without_rf(const GaussianMixture& mixture, const PriorSpec& prior) {
  mixture.validate();
  const std::size_t dim = static_cast<std::size_t>(mixture.means.front().size());
  double value = kl_constant(dim, mixture.sigma2, prior.lambda);
  for (std::size_t c = 0; c < mixture.means.size(); ++c) {
    value += 0.5 * prior.lambda * mixture.weights[c] * mixture.means[c].squaredNorm();
    value += xlogx(mixture.weights[c]);
  }
  return value;
}

namespace {

/// log sum_c w_c exp(-|x - mu_c|^2 / (2 sigma2)), without the Gaussian normalizer.
double log_mixture_kernel(const GaussianMixture& mixture, const std::vector<double>& log_w,
                          const Vector& x) {
  double best = -INFINITY;
  std::vector<double> terms(mixture.means.size());
  for (std::size_t c = 0; c < mixture.means.size(); ++c) {
    terms[c] = log_w[c] - (x - mixture.means[c]).squaredNorm() / (2.0 * mixture.sigma2);
    best = std::max(best, terms[c]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

std::vector<double> log_weights(const GaussianMixture& mixture) {
  std::vector<double> lw;
  for (double w : mixture.weights) lw.push_back(w > 0.0 ? std::log(w) : -INFINITY);
  return lw;
}

}  // namespace

McEstimate mc_kl_oracle(const GaussianMixture& mixture, const PriorSpec& prior,
                        std::size_t n_samples, Rng& rng) {
  mixture.validate();
  prior.validate();
  if (n_samples < 2) throw ConfigError("mc_kl_oracle needs at least 2 samples");
  const auto dim = mixture.means.front().size();
  const double d = static_cast<double>(dim);
  const double sigma = std::sqrt(mixture.sigma2);
  const double log_norm_q = -0.5 * d * std::log(2.0 * std::numbers::pi * mixture.sigma2);
  const double log_norm_p = 0.5 * d * std::log(prior.lambda / (2.0 * std::numbers::pi));
  const std::vector<double> lw = log_weights(mixture);
  std::discrete_distribution<std::size_t> pick(mixture.weights.begin(), mixture.weights.end());
  std::normal_distribution<double> n01;

  RunningStats stats;
  Vector x(dim);
  for (std::size_t t = 0; t < n_samples; ++t) {
    const std::size_t c = pick(rng);
    for (Eigen::Index j = 0; j < dim; ++j) x[j] = mixture.means[c][j] + sigma * n01(rng);
    const double log_q = log_norm_q + log_mixture_kernel(mixture, lw, x);
    const double log_p = log_norm_p - 0.5 * prior.lambda * x.squaredNorm();
    const double v = log_q - log_p;
    if (!std::isfinite(v)) throw DomainError("mixture log-density overflow; sigma2 too small");
    stats.push(v);
  }
  return {stats.mean(), stats.std_error()};
}

McEstimate rf_exact_mc(const GaussianMixture& mixture, std::size_t n_samples, Rng& rng) {
  mixture.validate();
  const std::size_t C = mixture.means.size();
  const std::size_t per_component = std::max<std::size_t>(2, n_samples / C);
  const auto dim = mixture.means.front().size();
  const double sigma = std::sqrt(mixture.sigma2);
  const std::vector<double> lw = log_weights(mixture);
  std::normal_distribution<double> n01;

  double estimate = 0.0, variance = 0.0;
  Vector x(dim);
  for (std::size_t c = 0; c < C; ++c) {
    if (mixture.weights[c] == 0.0) continue;
    RunningStats stats;
    for (std::size_t t = 0; t < per_component; ++t) {
      for (Eigen::Index j = 0; j < dim; ++j) x[j] = mixture.means[c][j] + sigma * n01(rng);
      const double own = lw[c] - (x - mixture.means[c]).squaredNorm() / (2.0 * mixture.sigma2);
      stats.push(log_mixture_kernel(mixture, lw, x) - own);
    }
    estimate += mixture.weights[c] * stats.mean();
    variance += mixture.weights[c] * mixture.weights[c] * stats.std_error() * stats.std_error();
  }
  return {estimate, std::sqrt(variance)};
}

TrainingLossGrad training_loss_with_grad(const MemberParams& member, const Dataset& batch,
                                         const StochasticSpec& spec, const PriorSpec& prior,
                                         std::size_t n_train, const MaskSet& masks) {
  if (batch.size() == 0) throw DomainError("empty training batch");
  if (n_train == 0) throw ConfigError("n_train must be positive");
  if (masks.kind != spec.kind) throw DomainError("mask kind does not match stochastic spec");
  const MLPArch& arch = member.primary.arch();
  TrainingLossGrad out;
  if (spec.kind == StochasticKind::NPExchange) {
    if (!member.secondary) throw DomainError("NPExchange member lacks its second parameter set");
    const ParamVector selected = apply_np_selection(member.primary, *member.secondary, masks);
    LossGrad lg = nll_with_grad(selected, batch, nullptr, Reduction::Mean);
    auto [ga, gb] = split_np_gradient(lg.grad, masks);
    out.loss = lg.loss;
    out.grad_primary = std::move(ga);
    out.grad_secondary = std::move(gb);
  } else {
    const MaskSet* m = spec.kind == StochasticKind::None ? nullptr : &masks;
    LossGrad lg = nll_with_grad(member.primary, batch, m, Reduction::Mean);
    out.loss = lg.loss;
    out.grad_primary = std::move(lg.grad);
  }

  const L2Weights w = l2_weights(spec, arch);
  const double scale = prior.lambda / static_cast<double>(n_train);
  out.loss += 0.5 * scale * effective_l2(member, spec);
  out.grad_primary.values().array() += scale * w.primary.array() * member.primary.values().array();
  if (out.grad_secondary) {
    out.grad_secondary->values().array() +=
        scale * w.secondary.array() * member.secondary->values().array();
  }
  return out;
}

double training_loss(const MemberParams& member, const Dataset& batch, const StochasticSpec& spec,
                     const PriorSpec& prior, std::size_t n_train, Rng& rng) {
  const MaskSet masks = sample_masks(spec, member.primary.arch(), rng);
  return training_loss_with_grad(member, batch, spec, prior, n_train, masks).loss;
}

}  // namespace stochens
