#include "stochens/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>
#include <thread>

#include "stochens/errors.hpp"
#include "stochens/store.hpp"

namespace stochens {

void HMCConfig::validate() const {
  if (n_chains < 1 || n_warmup < 1 || n_samples < 1 || max_tree_depth < 1) {
    throw ConfigError("HMC counts (chains, warmup, samples, tree depth) must be >= 1");
  }
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ConfigError("HMC target_accept must lie in (0, 1)");
  }
  if (!(init_scale > 0.0)) throw ConfigError("HMC init_scale must be positive");
  if (!(divergence_threshold > 0.0)) throw ConfigError("HMC divergence threshold must be positive");
}

// --------------------------------------------------------------- leapfrog

bool leapfrog(PhasePoint& z, double epsilon, const PotentialFn& potential) {
  z.momentum -= 0.5 * epsilon * z.grad;
  z.theta += epsilon * z.momentum;
  z.potential = potential(z.theta, z.grad);
  z.momentum -= 0.5 * epsilon * z.grad;
  return std::isfinite(z.potential) && z.grad.allFinite() && z.momentum.allFinite();
}

LeapfrogResult leapfrog(const Vector& theta, const Vector& momentum, double epsilon,
                        const PotentialFn& potential) {
  if (!(epsilon > 0.0)) throw DomainError("leapfrog step size must be positive");
  PhasePoint z{theta, momentum, Vector::Zero(theta.size()), 0.0};
  z.potential = potential(z.theta, z.grad);
  const bool ok = leapfrog(z, epsilon, potential);
  return {std::move(z.theta), std::move(z.momentum), !ok};
}

// ------------------------------------------------------- step-size tuning

StepSizeAdapter::StepSizeAdapter(double epsilon0, double target_accept)
    : mu_(std::log(10.0 * epsilon0)), target_(target_accept) {}

double StepSizeAdapter::update(double accept_stat) {
  accept_stat = std::min(1.0, accept_stat);
  counter_ += 1.0;
  const double eta = 1.0 / (counter_ + kT0);
  s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
  const double x = mu_ - s_bar_ * std::sqrt(counter_) / kGamma;
  const double x_eta = std::pow(counter_, -kKappa);
  x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
  return std::exp(x);
}

double StepSizeAdapter::final_step_size() const { return std::exp(x_bar_); }

// ------------------------------------------------------------------- NUTS

namespace {

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

bool no_u_turn(const Vector& p_minus, const Vector& p_plus, const Vector& rho) {
  return p_plus.dot(rho) > 0.0 && p_minus.dot(rho) > 0.0;
}

class NutsSampler {
 public:
  NutsSampler(const PotentialFn& potential, const HMCConfig& config, Rng& rng)
      : potential_(potential), config_(config), rng_(rng) {}

  void set_step_size(double eps) { epsilon_ = eps; }
  double step_size() const { return epsilon_; }

  struct Transition {
    double accept_stat = 0.0;
    int depth = 0;
    long long n_leapfrog = 0;
    bool divergent = false;
  };

  Transition transition(PhasePoint& current) {
    std::normal_distribution<double> n01;
    for (Eigen::Index j = 0; j < current.momentum.size(); ++j) current.momentum[j] = n01(rng_);
    const double h0 = current.hamiltonian();

    PhasePoint z_fwd = current, z_bck = current, z_sample = current, z_propose = current;
    Vector p_fwd_fwd = current.momentum, p_fwd_bck = current.momentum;
    Vector p_bck_fwd = current.momentum, p_bck_bck = current.momentum;
    Vector rho = current.momentum;
    double log_sum_weight = 0.0;
    double sum_metro_prob = 0.0;
    long long n_leapfrog = 0;
    divergent_ = false;
    int depth = 0;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (depth < config_.max_tree_depth) {
      Vector rho_fwd = Vector::Zero(rho.size()), rho_bck = Vector::Zero(rho.size());
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      bool valid_subtree = false;
      if (unit(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        valid_subtree = build_tree(depth, z_fwd, z_propose, p_fwd_bck, p_fwd_fwd, rho_fwd, h0, 1.0,
                                   n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        valid_subtree = build_tree(depth, z_bck, z_propose, p_bck_fwd, p_bck_bck, rho_bck, h0, -1.0,
                                   n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unit(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = no_u_turn(p_bck_bck, p_fwd_fwd, rho);
      persist = persist && no_u_turn(p_bck_bck, p_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && no_u_turn(p_bck_fwd, p_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    current = z_sample;
    Transition t;
    t.n_leapfrog = n_leapfrog;
    t.accept_stat = n_leapfrog > 0 ? sum_metro_prob / static_cast<double>(n_leapfrog) : 0.0;
    t.depth = depth;
    t.divergent = divergent_;
    return t;
  }

 private:
  // Extends the trajectory from `edge` by 2^depth leapfrog steps in direction
  // `sign`, leaving a multinomial draw from the new states in `propose`.
  bool build_tree(int depth, PhasePoint& edge, PhasePoint& propose, Vector& p_beg, Vector& p_end,
                  Vector& rho, double h0, double sign, long long& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      const bool finite = leapfrog(edge, sign * epsilon_, potential_);
      ++n_leapfrog;
      double h = finite ? edge.hamiltonian() : std::numeric_limits<double>::infinity();
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > config_.divergence_threshold) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      propose = edge;
      rho += edge.momentum;
      p_beg = edge.momentum;
      p_end = p_beg;
      return !divergent_;
    }

    // First half.
    Vector p_init_end(rho.size());
    Vector rho_init = Vector::Zero(rho.size());
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, edge, propose, p_beg, p_init_end, rho_init, h0, sign, n_leapfrog,
                    log_sum_weight_init, sum_metro_prob)) {
      return false;
    }

    // Second half.
    PhasePoint propose_final = edge;
    Vector p_final_beg(rho.size());
    Vector rho_final = Vector::Zero(rho.size());
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, edge, propose_final, p_final_beg, p_end, rho_final, h0, sign,
                    n_leapfrog, log_sum_weight_final, sum_metro_prob)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      propose = propose_final;
    } else if (unit(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      propose = propose_final;
    }

    const Vector rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = no_u_turn(p_beg, p_end, rho_subtree);
    persist = persist && no_u_turn(p_beg, p_final_beg, rho_init + p_final_beg);
    persist = persist && no_u_turn(p_init_end, p_end, rho_final + p_init_end);
    return persist;
  }

  const PotentialFn& potential_;
  const HMCConfig& config_;
  Rng& rng_;
  double epsilon_ = 1.0;
  bool divergent_ = false;
};

// Double or halve epsilon until a single leapfrog step crosses 80% acceptance.
double initial_step_size(const PhasePoint& start, const PotentialFn& potential, Rng& rng) {
  std::normal_distribution<double> n01;
  double eps = 1.0;
  const auto delta_h = [&](double e) {
    PhasePoint z = start;
    for (Eigen::Index j = 0; j < z.momentum.size(); ++j) z.momentum[j] = n01(rng);
    const double h0 = z.hamiltonian();
    if (!leapfrog(z, e, potential)) return -std::numeric_limits<double>::infinity();
    const double h = z.hamiltonian();
    return std::isnan(h) ? -std::numeric_limits<double>::infinity() : h0 - h;
  };
  const double log_target = std::log(0.8);
  const int direction = delta_h(eps) > log_target ? 1 : -1;
  for (int iter = 0; iter < 200; ++iter) {
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    const double dh = delta_h(eps);
    if (direction == 1 && !(dh > log_target)) break;
    if (direction == -1 && !(dh < log_target)) break;
    if (eps > 1e7) throw ComputeError("step size heuristic diverged; posterior may be improper");
    if (eps < 1e-300) throw ComputeError("step size heuristic collapsed to zero");
  }
  return eps;
}

}  // namespace

ChainResult nuts_chain(const PotentialFn& potential, std::size_t dim, const HMCConfig& config,
                       int chain_id) {
  config.validate();
  ChainResult result;
  result.stats.chain_id = chain_id;
  result.stats.seed = derive_seed(config.seed, {stream::kChain, static_cast<std::uint64_t>(chain_id)});
  Rng rng(result.stats.seed);

  const auto n = static_cast<Eigen::Index>(dim);
  PhasePoint z{Vector(n), Vector::Zero(n), Vector::Zero(n), 0.0};
  std::normal_distribution<double> init(0.0, config.init_scale);
  for (Eigen::Index j = 0; j < n; ++j) z.theta[j] = init(rng);
  z.potential = potential(z.theta, z.grad);
  if (!std::isfinite(z.potential) || !z.grad.allFinite()) {
    throw ComputeError("chain " + std::to_string(chain_id) + ": non-finite potential at start");
  }

  NutsSampler sampler(potential, config, rng);
  const double eps0 = initial_step_size(z, potential, rng);
  StepSizeAdapter adapter(eps0, config.target_accept);
  sampler.set_step_size(eps0);

  for (int it = 0; it < config.n_warmup; ++it) {
    const auto t = sampler.transition(z);
    result.stats.warmup_divergences += t.divergent;
    sampler.set_step_size(adapter.update(t.accept_stat));
  }
  if (result.stats.warmup_divergences == config.n_warmup) {
    throw ComputeError("chain " + std::to_string(chain_id) + ": every warmup transition diverged (" +
                       std::to_string(config.n_warmup) + " of " + std::to_string(config.n_warmup) +
                       "), final step size " + std::to_string(sampler.step_size()));
  }
  sampler.set_step_size(adapter.final_step_size());
  result.stats.step_size = sampler.step_size();

  double accept_sum = 0.0, depth_sum = 0.0;
  for (int it = 0; it < config.n_samples; ++it) {
    const auto t = sampler.transition(z);
    accept_sum += t.accept_stat;
    depth_sum += t.depth;
    result.stats.divergences += t.divergent;
    result.stats.n_leapfrog += t.n_leapfrog;
    result.draws.push_back(z.theta);
    result.potentials.push_back(z.potential);
  }
  result.stats.mean_accept_stat = accept_sum / config.n_samples;
  result.stats.mean_tree_depth = depth_sum / config.n_samples;
  return result;
}

Matrix PosteriorSamples::chain_matrix(std::size_t chain) const {
  const std::size_t per = draws_per_chain();
  const std::size_t dim = samples.empty() ? 0 : samples.front().size();
  Matrix m(static_cast<Eigen::Index>(per), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < per; ++i) {
    m.row(static_cast<Eigen::Index>(i)) = samples[chain * per + i].values().transpose();
  }
  return m;
}

PosteriorSamples run_hmc(const Dataset& data, const PriorSpec& prior, const MLPArch& arch,
                         const HMCConfig& config, int jobs) {
  config.validate();
  prior.validate();
  data.validate();
  arch.validate();
  const PotentialFn potential = [&](const Vector& theta, Vector& grad) {
    const LossGrad lg = potential_with_grad(ParamVector(arch, theta), data, prior);
    grad = lg.grad.values();
    return lg.loss;
  };

  std::vector<ChainResult> chains(static_cast<std::size_t>(config.n_chains));
  std::vector<std::string> errors(chains.size());
  const int workers = std::max(1, std::min(jobs, config.n_chains));
  std::vector<std::thread> pool;
  std::mutex next_mutex;
  int next = 0;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int c = 0;
        {
          std::lock_guard lock(next_mutex);
          if (next >= config.n_chains) return;
          c = next++;
        }
        try {
          chains[static_cast<std::size_t>(c)] = nuts_chain(potential, arch.param_count(), config, c);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(c)] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw ComputeError("HMC failed: " + e);
  }

  PosteriorSamples out;
  out.config = config;
  for (auto& chain : chains) {
    for (auto& draw : chain.draws) out.samples.emplace_back(arch, std::move(draw));
    out.potentials.insert(out.potentials.end(), chain.potentials.begin(), chain.potentials.end());
    out.chains.push_back(chain.stats);
  }
  return out;
}

std::vector<double> rhat(const std::vector<Matrix>& chains) {
  if (chains.size() < 2) throw ConfigError("rhat needs at least 2 chains");
  const Eigen::Index n_total = chains.front().rows();
  const Eigen::Index dim = chains.front().cols();
  if (n_total < 4) throw ConfigError("rhat needs at least 4 draws per chain");
  for (const auto& c : chains) {
    if (c.rows() != n_total || c.cols() != dim) throw ShapeError("rhat chains differ in shape");
  }
  // Split each chain into its first and last halves (middle draw dropped when odd).
  const Eigen::Index half = n_total / 2;
  std::vector<Matrix> parts;
  for (const auto& c : chains) {
    parts.push_back(c.topRows(half));
    parts.push_back(c.bottomRows(half));
  }
  const double n = static_cast<double>(half);
  const double m = static_cast<double>(parts.size());
  std::vector<double> out(static_cast<std::size_t>(dim));
  bool warned = false;
  for (Eigen::Index j = 0; j < dim; ++j) {
    double mean_of_means = 0.0, within = 0.0;
    std::vector<double> means;
    for (const auto& p : parts) {
      const double mu = p.col(j).mean();
      means.push_back(mu);
      mean_of_means += mu / m;
      within += (p.col(j).array() - mu).square().sum() / (n - 1.0) / m;
    }
    double between = 0.0;
    for (double mu : means) between += (mu - mean_of_means) * (mu - mean_of_means);
    between *= n / (m - 1.0);
    if (!(within > 0.0)) {
      out[static_cast<std::size_t>(j)] = std::numeric_limits<double>::quiet_NaN();
      if (!warned) {
        std::cerr << "warning: rhat undefined for zero-variance coordinate " << j << "\n";
        warned = true;
      }
      continue;
    }
    const double var_plus = (n - 1.0) / n * within + between / n;
    out[static_cast<std::size_t>(j)] = std::sqrt(var_plus / within);
  }
  return out;
}

// ------------------------------------------------------------------ store

namespace {

nlohmann::json config_json(const HMCConfig& c) {
  return {{"n_chains", c.n_chains},          {"n_warmup", c.n_warmup},
          {"n_samples", c.n_samples},        {"target_accept", c.target_accept},
          {"max_tree_depth", c.max_tree_depth}, {"init_scale", c.init_scale},
          {"seed", c.seed},                  {"divergence_threshold", c.divergence_threshold}};
}

HMCConfig config_from_json(const nlohmann::json& j) {
  HMCConfig c;
  c.n_chains = j.at("n_chains");
  c.n_warmup = j.at("n_warmup");
  c.n_samples = j.at("n_samples");
  c.target_accept = j.at("target_accept");
  c.max_tree_depth = j.at("max_tree_depth");
  c.init_scale = j.at("init_scale");
  c.seed = j.at("seed");
  c.divergence_threshold = j.at("divergence_threshold");
  return c;
}

}  // namespace

void save_posterior(const std::string& dir, const PosteriorSamples& posterior) {
  const fs::path root(dir);
  fs::create_directories(root);
  write_param_list(root / "samples.bin", posterior.samples);

  nlohmann::json chains = nlohmann::json::array();
  for (const auto& c : posterior.chains) {
    chains.push_back({{"chain_id", c.chain_id},
                      {"seed", c.seed},
                      {"step_size", c.step_size},
                      {"mean_accept_stat", c.mean_accept_stat},
                      {"divergences", c.divergences},
                      {"warmup_divergences", c.warmup_divergences},
                      {"mean_tree_depth", c.mean_tree_depth},
                      {"n_leapfrog", c.n_leapfrog}});
  }
  nlohmann::json meta = {{"method", posterior.method},
                         {"config", config_json(posterior.config)},
                         {"arch", posterior.samples.empty() ? "" : posterior.samples.front().arch().to_string()},
                         {"n_draws", posterior.samples.size()},
                         {"chains", chains},
                         {"potentials", posterior.potentials},
                         {"dual_averaging", {{"gamma", 0.05}, {"t0", 10}, {"kappa", 0.75}}},
                         {"mass_matrix", "identity"}};
  if (posterior.chains.size() >= 2 && posterior.draws_per_chain() >= 4) {
    std::vector<Matrix> per_chain, energy;
    const std::size_t per = posterior.draws_per_chain();
    for (std::size_t c = 0; c < posterior.chains.size(); ++c) {
      per_chain.push_back(posterior.chain_matrix(c));
      Matrix u(static_cast<Eigen::Index>(per), 1);
      for (std::size_t i = 0; i < per; ++i) u(static_cast<Eigen::Index>(i), 0) = posterior.potentials[c * per + i];
      energy.push_back(u);
    }
    const auto r = rhat(per_chain);
    double worst = 0.0;
    for (double v : r) {
      if (std::isfinite(v)) worst = std::max(worst, v);
    }
    meta["rhat"] = {{"max_parameter", worst}, {"potential", rhat(energy).front()}};
  }
  write_json(root / "meta.json", meta);
}

PosteriorSamples load_posterior(const std::string& dir) {
  const fs::path root(dir);
  const nlohmann::json meta = read_json(root / "meta.json");
  PosteriorSamples out;
  try {
    out.method = meta.at("method");
    out.config = config_from_json(meta.at("config"));
    for (const auto& c : meta.at("chains")) {
      ChainStats s;
      s.chain_id = c.at("chain_id");
      s.seed = c.at("seed");
      s.step_size = c.at("step_size");
      s.mean_accept_stat = c.at("mean_accept_stat");
      s.divergences = c.at("divergences");
      s.warmup_divergences = c.at("warmup_divergences");
      s.mean_tree_depth = c.at("mean_tree_depth");
      s.n_leapfrog = c.at("n_leapfrog");
      out.chains.push_back(s);
    }
    out.potentials = meta.at("potentials").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((root / "meta.json").string() + ": " + e.what());
  }
  out.samples = read_param_list(root / "samples.bin");
  if (out.samples.empty()) throw ParseError(dir + ": posterior store holds no samples");
  if (out.samples.size() != meta.at("n_draws").get<std::size_t>()) {
    throw ParseError(dir + ": samples.bin length disagrees with meta.json");
  }
  return out;
}

}  // namespace stochens
