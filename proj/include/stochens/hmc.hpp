#ifndef STOCHENS_HMC_HPP
#define STOCHENS_HMC_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stochens/rng.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

// REFERENCE: Hoffman, M.D. and Gelman, A., 2014. The No-U-Turn sampler:
// adaptively setting path lengths in Hamiltonian Monte Carlo. JMLR 15.
// Betancourt, M., 2017. A conceptual introduction to Hamiltonian Monte Carlo.

struct HMCConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_samples = 2000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  double divergence_threshold = 1000.0;

  void validate() const;
};

/// Potential energy U(theta); writes dU/dtheta into `grad`.
using PotentialFn = std::function<double(const Vector& theta, Vector& grad)>;

struct PhasePoint {
  Vector theta;
  Vector momentum;
  Vector grad;
  double potential = 0.0;

  double hamiltonian() const { return potential + 0.5 * momentum.squaredNorm(); }
};

/// One half-kick, drift, half-kick step with identity mass matrix. Returns
/// false when the potential or gradient becomes non-finite.
bool leapfrog(PhasePoint& z, double epsilon, const PotentialFn& potential);

struct LeapfrogResult {
  Vector theta;
  Vector momentum;
  bool divergent = false;
};
LeapfrogResult leapfrog(const Vector& theta, const Vector& momentum, double epsilon,
                        const PotentialFn& potential);

/**
 * Dual averaging of log step size toward a target acceptance statistic.
 * gamma = 0.05, t0 = 10, kappa = 0.75, mu = log(10 * epsilon0).
 */
class StepSizeAdapter {
 public:
  StepSizeAdapter(double epsilon0, double target_accept);
  /// Returns the step size to use next.
  double update(double accept_stat);
  double final_step_size() const;

 private:
  double mu_;
  double target_;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  double counter_ = 0.0;
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
};

struct ChainStats {
  int chain_id = 0;
  std::uint64_t seed = 0;
  double step_size = 0.0;
  double mean_accept_stat = 0.0;
  int divergences = 0;
  int warmup_divergences = 0;
  double mean_tree_depth = 0.0;
  long long n_leapfrog = 0;
};

struct ChainResult {
  std::vector<Vector> draws;
  std::vector<double> potentials;
  ChainStats stats;
};

/// Multinomial NUTS with dual-averaging warmup; draws are post-warmup.
ChainResult nuts_chain(const PotentialFn& potential, std::size_t dim, const HMCConfig& config,
                       int chain_id);

struct PosteriorSamples {
  std::vector<ParamVector> samples;  // chains stacked in chain-id order
  std::vector<double> potentials;
  std::vector<ChainStats> chains;
  HMCConfig config;
  std::string method = "nuts-multinomial";

  /// Draws of chain c as rows of a matrix.
  Matrix chain_matrix(std::size_t chain) const;
  std::size_t draws_per_chain() const {
    return chains.empty() ? 0 : samples.size() / chains.size();
  }
};

/// Independent chains from N(0, init_scale^2 I) starts, run on up to `jobs`
/// threads; the result does not depend on `jobs`.
PosteriorSamples run_hmc(const Dataset& data, const PriorSpec& prior, const MLPArch& arch,
                         const HMCConfig& config, int jobs = 1);

/// Split-Rhat per column; chains are (draws x coordinates). A coordinate with
/// zero within-chain variance yields NaN.
std::vector<double> rhat(const std::vector<Matrix>& chains);

void save_posterior(const std::string& dir, const PosteriorSamples& posterior);
PosteriorSamples load_posterior(const std::string& dir);

}  // namespace stochens

#endif  // STOCHENS_HMC_HPP
