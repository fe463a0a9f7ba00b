#ifndef STOCHENS_VI_OBJECTIVE_HPP
#define STOCHENS_VI_OBJECTIVE_HPP

#include <cstddef>
#include <optional>
#include <vector>

#include "stochens/masks.hpp"
#include "stochens/rng.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

/// Mixture-of-Gaussians variational family built around K ensemble members.
struct EnsembleFamilySpec {
  std::vector<MemberParams> members;
  double sigma2 = 1e-8;
  StochasticSpec stochastic;
  PriorSpec prior;

  void validate() const;
  std::size_t dim() const { return members.front().primary.size(); }
};

/// Terms of the KL divergence to the prior. `total_upper_bound` is their sum
/// with the repulsive force replaced by its upper bound.
struct KLBreakdown {
  double constant_term = 0.0;
  double l2_term = 0.0;
  double log_k_term = 0.0;
  double stochastic_entropy_term = 0.0;
  double rf_bound = 0.0;
  double total_upper_bound = 0.0;

  /// Everything except the repulsive force.
  double total_without_rf() const {
    return constant_term + l2_term + log_k_term + stochastic_entropy_term;
  }
};

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Explicit Gaussian mixture sum_c w_c N(mean_c, sigma2 I).
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vector> means;
  double sigma2 = 1.0;

  void validate() const;
};

/// Expected NLL (sum over data) averaged over members and MC passes.
double enll(const EnsembleFamilySpec& ensemble, const Dataset& data, int passes_per_member,
            Rng& rng);

/// (1/K) sum_k sum_{k' != k} exp(-|w_k - w_k'|^2 / (8 sigma2)).
double rf_upper_bound(const std::vector<ParamVector>& members, double sigma2);

/// Closed-form KL of a non-stochastic ensemble.
KLBreakdown kl_deep_ensemble(const EnsembleFamilySpec& ensemble);

/// Closed-form KL of a stochastic ensemble; the repulsive-force bound is
/// estimated by rf2_mc_bound with `rf_samples` pair draws.
KLBreakdown kl_stochastic_ensemble(const EnsembleFamilySpec& ensemble, Rng& rng,
                                   std::size_t rf_samples = 4096);

/**
 * Monte Carlo estimate of sum_{c != c'} sqrt(w_c w_c') exp(-|mu_c - mu_c'|^2 / (8 sigma2))
 * over all stochastic realizations c of all members. For equal weights and no
 * stochasticity this is rf_upper_bound. Pairs are drawn from the
 * sqrt(w)-proportional distribution, so every sample term lies in [0, 1].
 */
McEstimate rf2_mc_bound(const EnsembleFamilySpec& ensemble, Rng& rng, std::size_t n_samples);

/// Same weighted pairwise bound, summed exactly over an explicit mixture.
double rf_mixture_bound(const GaussianMixture& mixture);

/// KL(q || prior) by sampling from the mixture q.
McEstimate mc_kl_oracle(const GaussianMixture& mixture, const PriorSpec& prior,
                        std::size_t n_samples, Rng& rng);

/**
 * Exact repulsive force of a mixture, i.e. KL minus its separated-component
 * part, estimated by sampling each component in turn:
 * sum_c w_c E_{N_c} log(1 + sum_{c' != c} w_c' N_c' / (w_c N_c)).
 */
McEstimate rf_exact_mc(const GaussianMixture& mixture, std::size_t n_samples, Rng& rng);

/// KL(q || prior) terms of an explicit mixture, excluding the repulsive force.
double mixture_kl_without_rf(const GaussianMixture& mixture, const PriorSpec& prior);

/**
 * Per-parameter weights of the probability-weighted L2 penalty: the kept
 * probability for set A and the complementary probability for set B
 * (NPExchange only; zero otherwise).
 */
struct L2Weights {
  Vector primary;
  Vector secondary;
};
L2Weights l2_weights(const StochasticSpec& spec, const MLPArch& arch);

double effective_l2(const MemberParams& member, const StochasticSpec& spec);

struct TrainingLossGrad {
  double loss = 0.0;
  ParamVector grad_primary;
  std::optional<ParamVector> grad_secondary;
};

/**
 * Per-member minibatch objective in the sigma -> 0 limit: mean masked NLL of
 * one realization plus (lambda/2) * effective L2 / n_train.
 */
TrainingLossGrad training_loss_with_grad(const MemberParams& member, const Dataset& batch,
                                         const StochasticSpec& spec, const PriorSpec& prior,
                                         std::size_t n_train, const MaskSet& masks);

double training_loss(const MemberParams& member, const Dataset& batch,
                     const StochasticSpec& spec, const PriorSpec& prior, std::size_t n_train,
                     Rng& rng);

}  // namespace stochens

#endif  // STOCHENS_VI_OBJECTIVE_HPP
