// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "../mixture_oracle.hpp"
#include "../test_util.hpp"
#include "stochens/ensemble.hpp"
#include "stochens/hmc.hpp"
#include "stochens/metrics.hpp"
#include "stochens/store.hpp"
#include "stochens/toy_data.hpp"
#include "stochens/vi_objective.hpp"

using namespace stochens;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void info(const std::string& what) { notes.push_back("     " + what); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// ------------------------------------------------------------ criterion 1

// Potential computed with the plain-loop reference forward pass.
double reference_potential(const MLPArch& arch, const std::vector<double>& theta, const Dataset& data,
                           double lambda) {
  double u = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto logits = testing::reference_forward(arch, theta, {data.points(i, 0), data.points(i, 1)});
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    u += m + std::log(s) - logits[static_cast<std::size_t>(data.labels[i])];
  }
  double sq = 0.0;
  for (double t : theta) sq += t * t;
  return u + 0.5 * lambda * sq;
}

// Signs of every hidden pre-activation over the dataset.
std::vector<bool> hidden_pattern(const MLPArch& arch, const std::vector<double>& theta, const Dataset& data) {
  std::vector<bool> out;
  const std::size_t L = arch.widths.size() - 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> x{data.points(i, 0), data.points(i, 1)};
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < L; ++l) {
      const std::size_t in = arch.widths[l], w = arch.widths[l + 1];
      std::vector<double> y(w);
      for (std::size_t n = 0; n < w; ++n) {
        double s = theta[off + w * in + n];
        for (std::size_t j = 0; j < in; ++j) s += theta[off + n * in + j] * x[j];
        out.push_back(s > 0.0);
        y[n] = std::max(s, 0.0);
      }
      off += w * in + w;
      x = std::move(y);
    }
  }
  return out;
}

Outcome criterion_gradient() {
  Outcome o;
  const MLPArch arch = MLPArch::toy();
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t skipped = 0, checked = 0;
  for (int c = 0; c < 100; ++c) {
    Rng rng(1000 + c);
    const double scale = 0.3 + 1.2 * u01(gen);
    const double lambda = std::pow(10.0, -2.0 + 4.0 * u01(gen));
    const std::size_t n = 5 + static_cast<std::size_t>(45 * u01(gen));
    const ParamVector p = testing::random_params(arch, rng, scale);
    const Dataset data = testing::random_dataset(n, rng);
    const ParamVector g = grad_potential(p, data, PriorSpec{lambda});
    std::vector<double> theta = testing::to_std(p.values());
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double t0 = theta[j];
      theta[j] = t0 + h;
      const double up = reference_potential(arch, theta, data, lambda);
      const auto pat_up = hidden_pattern(arch, theta, data);
      theta[j] = t0 - h;
      const double dn = reference_potential(arch, theta, data, lambda);
      const auto pat_dn = hidden_pattern(arch, theta, data);
      theta[j] = t0;
      if (pat_up != pat_dn) {
        ++skipped;  // probe straddles a ReLU kink; differences are meaningless there
        continue;
      }
      const double fd = (up - dn) / (2 * h);
      const double gj = g.values()[static_cast<Eigen::Index>(j)];
      worst = std::max(worst, std::abs(gj - fd) / std::max(1.0, std::abs(gj)));
      ++checked;
    }
  }
  const double frac = static_cast<double>(skipped) / static_cast<double>(skipped + checked);
  o.require(worst < 1e-5, fmt("max relative error %.3e over %zu coordinates (< 1e-5)", worst, checked));
  o.require(frac < 0.01, fmt("coordinates skipped at kinks: %zu (%.3f%%, < 1%%)", skipped, 100 * frac));
  return o;
}

// ------------------------------------------------------------ criterion 2

EnsembleFamilySpec deep_family(std::vector<ParamVector> ps, double sigma2, double lambda) {
  EnsembleFamilySpec e;
  for (auto& p : ps) e.members.push_back({std::move(p), {}});
  e.sigma2 = sigma2;
  e.prior.lambda = lambda;
  return e;
}

Outcome criterion_kl_closed_form() {
  Outcome o;
  std::mt19937_64 gen(202);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int c = 0; c < 10; ++c) {
    const std::size_t dim = 2 + static_cast<std::size_t>(7 * u01(gen));  // 2..8
    const int K = 1 + c % 3;
    const double sigma2 = 0.04 + 0.96 * u01(gen);
    const double lambda = 0.5 + 1.5 * u01(gen);
    const double spread = 0.2 + 0.8 * u01(gen);
    Rng rng(2000 + c);
    const MLPArch arch{{dim - 1, 1}};
    std::vector<ParamVector> ps;
    for (int k = 0; k < K; ++k) ps.push_back(testing::random_params(arch, rng, spread));
    const EnsembleFamilySpec e = deep_family(ps, sigma2, lambda);
    const KLBreakdown kl = kl_deep_ensemble(e);
    const GaussianMixture mix = testing::enumerate_mixture(e);
    Rng r1(3000 + c), r2(4000 + c);
    const McEstimate truth = mc_kl_oracle(mix, e.prior, 10'000'000, r1);
    const McEstimate rf = rf_exact_mc(mix, 10'000'000, r2);
    const double se = std::hypot(truth.std_error, rf.std_error);
    const double gap = std::abs(kl.total_without_rf() + rf.estimate - truth.estimate);
    o.require(gap <= 3 * se, fmt("config %d (d=%zu K=%d s2=%.3f): |closed+RF - MC| = %.2e <= 3se = %.2e", c, dim,
                                 K, sigma2, gap, 3 * se));
    const double bound = rf_upper_bound(ps, sigma2);
    o.require(bound >= rf.estimate - 3 * rf.std_error,
              fmt("config %d: RF bound %.4f >= RF %.4f - 3se", c, bound, rf.estimate));
  }
  return o;
}

// ------------------------------------------------------------ criterion 3

Outcome criterion_kl_stochastic() {
  Outcome o;
  struct Case {
    const char* name;
    MLPArch arch;
    int K;
    double sigma2;
    StochasticSpec spec;
  };
  auto spec = [](StochasticKind kind, double hidden, double out = 0.0) {
    StochasticSpec s;
    s.kind = kind;
    s.hidden_drop_rate = hidden;
    s.output_drop_rate = out;
    s.applies_to_output_layer = out > 0.0;
    return s;
  };
  const std::vector<Case> cases{
      {"dropout [1,2,1] K=2", MLPArch{{1, 2, 1}}, 2, 0.10, spec(StochasticKind::Dropout, 0.3)},
      {"dropconnect [1,1,1] K=2", MLPArch{{1, 1, 1}}, 2, 0.30, spec(StochasticKind::DropConnect, 0.2)},
      {"np-exchange [1,2] K=2", MLPArch{{1, 2}}, 2, 0.25, spec(StochasticKind::NPExchange, 0.0)},
      {"np-exchange [2,2] K=4", MLPArch{{2, 2}}, 4, 0.50, spec(StochasticKind::NPExchange, 0.0)},
      {"dropout+output [1,1,1] K=3", MLPArch{{1, 1, 1}}, 3, 0.15, spec(StochasticKind::Dropout, 0.5, 0.25)},
  };
  int idx = 0;
  for (const auto& c : cases) {
    Rng rng(5000 + idx);
    EnsembleFamilySpec e;
    for (int k = 0; k < c.K; ++k) {
      e.members.push_back({testing::random_params(c.arch, rng, 0.7), testing::random_params(c.arch, rng, 0.7)});
    }
    e.sigma2 = c.sigma2;
    e.stochastic = c.spec;
    const GaussianMixture mix = testing::enumerate_mixture(e);
    Rng r0(6000 + idx), r1(7000 + idx), r2(8000 + idx);
    const KLBreakdown kl = kl_stochastic_ensemble(e, r0);
    const McEstimate truth = mc_kl_oracle(mix, e.prior, 4'000'000, r1);
    const McEstimate rf = rf_exact_mc(mix, 4'000'000, r2);
    const double se = std::hypot(truth.std_error, rf.std_error);
    const double gap = std::abs(kl.total_without_rf() + rf.estimate - truth.estimate);
    o.require(mix.means.size() <= 16 && gap <= 3 * se,
              fmt("%s (%zu components): |closed+RF2 - MC| = %.2e <= 3se = %.2e", c.name, mix.means.size(), gap,
                  3 * se));
    ++idx;
  }
  for (const MLPArch& arch : {MLPArch::toy(), MLPArch{{1, 2}}, MLPArch{{3, 7, 5, 2}}}) {
    Rng rng(9000);
    EnsembleFamilySpec e;
    e.members.push_back({testing::random_params(arch, rng), testing::random_params(arch, rng)});
    e.stochastic.kind = StochasticKind::NPExchange;
    const KLBreakdown kl = kl_stochastic_ensemble(e, rng, 16);
    std::size_t nodes = 0;
    for (std::size_t l = 1; l < arch.widths.size(); ++l) nodes += arch.widths[l];
    const double expected = -static_cast<double>(nodes) * std::numbers::ln2;
    o.require(kl.stochastic_entropy_term == expected,
              fmt("np-exchange entropy term with N=%zu: %.17g == %.17g", nodes, kl.stochastic_entropy_term, expected));
  }
  return o;
}

// ------------------------------------------------------------ criterion 4

Outcome criterion_sampler() {
  Outcome o;
  for (double rho : {0.0, 0.9}) {
    Eigen::Matrix2d cov;
    cov << 1.0, rho, rho, 1.0;
    const Eigen::Matrix2d prec = cov.inverse();
    const PotentialFn U = [&](const Vector& x, Vector& g) {
      g = prec * x;
      return 0.5 * x.dot(g);
    };
    for (std::uint64_t seed : {1, 2, 3}) {
      HMCConfig cfg;
      cfg.n_warmup = 1000;
      cfg.n_samples = 10000;
      cfg.init_scale = 1.0;
      cfg.seed = seed;
      const ChainResult r = nuts_chain(U, 2, cfg, 0);
      Eigen::Vector2d mean = Eigen::Vector2d::Zero();
      for (const auto& d : r.draws) mean += d;
      mean /= static_cast<double>(r.draws.size());
      Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
      for (const auto& d : r.draws) c += (d - mean) * (d - mean).transpose();
      c /= static_cast<double>(r.draws.size() - 1);
      const double corr = c(0, 1) / std::sqrt(c(0, 0) * c(1, 1));
      const bool ok = std::abs(mean[0]) <= 0.05 && std::abs(mean[1]) <= 0.05 && std::abs(c(0, 0) - 1) <= 0.1 &&
                      std::abs(c(1, 1) - 1) <= 0.1 && std::abs(corr - rho) <= 0.05;
      o.require(ok, fmt("rho=%.1f seed %llu: mean (%+.3f, %+.3f) var (%.3f, %.3f) corr %.3f", rho,
                        static_cast<unsigned long long>(seed), mean[0], mean[1], c(0, 0), c(1, 1), corr));
    }
  }

  const Dataset data = generate_toy(ToySpec::preset('a', 100, 42));
  HMCConfig cfg;
  cfg.n_chains = 4;
  cfg.n_warmup = 1000;
  cfg.n_samples = 2000;
  cfg.target_accept = 0.9;
  cfg.seed = 42;
  const PosteriorSamples post = run_hmc(data, PriorSpec{}, MLPArch::toy(), cfg, jobs());
  int div = 0;
  for (const auto& c : post.chains) {
    div += c.divergences;
    o.info(fmt("chain %d: step %.4f accept %.3f divergences %d depth %.2f", c.chain_id, c.step_size,
               c.mean_accept_stat, c.divergences, c.mean_tree_depth));
  }
  const double div_frac = static_cast<double>(div) / static_cast<double>(post.samples.size());
  o.require(div_frac < 0.01, fmt("divergent transitions %d / %zu = %.3f%% (< 1%%)", div, post.samples.size(),
                                 100 * div_frac));

  // Besides the raw weights, check predictive probabilities and the
  // potential, which are unaffected by hidden-unit permutations.
  const Matrix grid = eval_grid(kDomainIn, 11).points;
  const std::size_t n = post.draws_per_chain();
  std::vector<Matrix> func(post.chains.size()), params(post.chains.size());
  for (std::size_t c = 0; c < post.chains.size(); ++c) {
    func[c].resize(static_cast<Eigen::Index>(n), grid.rows() + 1);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t k = c * n + s;
      const Matrix p = softmax(forward(post.samples[k], grid));
      func[c].row(static_cast<Eigen::Index>(s)).head(grid.rows()) = p.col(0).transpose();
      func[c](static_cast<Eigen::Index>(s), grid.rows()) = post.potentials[k];
    }
    params[c] = post.chain_matrix(c);
  }
  const auto rf = rhat(func);
  const double max_func = *std::max_element(rf.begin(), rf.end());
  o.require(max_func < 1.05, fmt("split-Rhat max over %lld predictive probabilities + potential: %.4f (< 1.05)",
                                 static_cast<long long>(grid.rows()), max_func));
  o.info(fmt("split-Rhat potential: %.4f", rf.back()));
  const auto rp = rhat(params);
  const double max_param = *std::max_element(rp.begin(), rp.end());
  o.require(max_param < 1.05, fmt("split-Rhat max over all %zu weights: %.4f (< 1.05)", rp.size(), max_param));
  return o;
}

// ------------------------------------------------------------ criterion 5

Outcome criterion_figure() {
  Outcome o;
  const Matrix grid = eval_grid(kDomainIn, 101).points;
  std::vector<Eigen::Index> band, in_class;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const Vector x = grid.row(i).transpose();
    const double d0 = distance_to_arc(x, 0), d1 = distance_to_arc(x, 1);
    if (std::abs(d0 - d1) < 0.1) band.push_back(i);
    if (std::min(d0, d1) < 0.05 && std::max(d0, d1) > 0.3) in_class.push_back(i);
  }
  const Matrix out = eval_grid(kDomainOut, 201).points;
  std::vector<Eigen::Index> corner_idx;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (std::abs(out(i, 0)) > 5 && std::abs(out(i, 1)) > 5) corner_idx.push_back(i);
  }
  Matrix corners(static_cast<Eigen::Index>(corner_idx.size()), 2);
  for (std::size_t k = 0; k < corner_idx.size(); ++k) corners.row(static_cast<Eigen::Index>(k)) = out.row(corner_idx[k]);
  o.info(fmt("boundary band %zu points, in-class %zu points, corners %zu points", band.size(), in_class.size(),
             corner_idx.size()));

  const auto mean_at = [](const Vector& v, const std::vector<Eigen::Index>& idx) {
    double s = 0.0;
    for (auto i : idx) s += v[i];
    return s / static_cast<double>(idx.size());
  };

  std::vector<double> band_entropy;
  for (char variant : {'a', 'b', 'c'}) {
    const Dataset data = generate_toy(ToySpec::preset(variant, 100, 42));
    HMCConfig cfg;
    cfg.n_chains = 4;
    cfg.n_warmup = 1000;
    cfg.n_samples = 1000;
    cfg.target_accept = 0.9;
    cfg.seed = 42;
    const PosteriorSamples post = run_hmc(data, PriorSpec{}, MLPArch::toy(), cfg, jobs());
    int div = 0;
    for (const auto& c : post.chains) div += c.divergences;
    PredictOptions po;
    po.jobs = jobs();
    const PredictiveDistribution pin = predict(post, grid, po);
    const Vector h = predictive_entropy(pin);
    const Vector mi = mutual_information(pin);
    const double hb = mean_at(h, band), hc = mean_at(h, in_class);
    band_entropy.push_back(hb);
    o.info(fmt("variant %c: %d divergences; boundary entropy %.4f (aleatoric share %.2f), in-class entropy %.4f",
               variant, div, hb, 1.0 - mean_at(mi, band) / hb, hc));
    if (variant != 'a') continue;

    o.require(hb >= 3 * hc, fmt("variant a: boundary / in-class entropy = %.2f (>= 3)", hb / hc));

    // Grid points within 0.1 of some training point.
    std::vector<Eigen::Index> near;
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      const double d2 = (data.points.rowwise() - grid.row(i)).rowwise().squaredNorm().minCoeff();
      if (d2 < 0.01) near.push_back(i);
    }
    const double mi_near = mean_at(mi, near);
    const Vector mi_corner = mutual_information(predict(post, corners, po));
    const double mi_far = mi_corner.mean();
    o.require(mi_far >= 3 * mi_near, fmt("variant a: corner MI %.4f / training-neighborhood MI %.4f = %.2f (>= 3)",
                                         mi_far, mi_near, mi_far / mi_near));
  }
  o.require(band_entropy[0] < band_entropy[1] && band_entropy[1] < band_entropy[2],
            fmt("boundary entropy rises a -> b -> c: %.4f, %.4f, %.4f", band_entropy[0], band_entropy[1],
                band_entropy[2]));
  return o;
}

// ------------------------------------------------------------ criterion 6

Outcome criterion_table_trend() {
  Outcome o;
  const Matrix grid_in = eval_grid(kDomainIn, 41).points;
  const Matrix grid_out = eval_grid(kDomainOut, 401).points;
  int agr_in = 0, var_in = 0, agr_out = 0, var_out = 0;
  bool absolute = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Dataset data = generate_toy(ToySpec::preset('a', 100, seed));
    HMCConfig hcfg;
    hcfg.n_chains = 4;
    hcfg.n_warmup = 500;
    hcfg.n_samples = 500;
    hcfg.target_accept = 0.9;
    hcfg.seed = seed;
    const PosteriorSamples post = run_hmc(data, PriorSpec{}, MLPArch::toy(), hcfg, jobs());
    PredictOptions po;
    po.jobs = jobs();
    po.seed = derive_seed(seed, {stream::kPredict});
    const PredictiveDistribution ref_in = predict(post, grid_in, po);
    const PredictiveDistribution ref_out = predict(post, grid_out, po);

    TrainConfig tcfg;
    tcfg.batch_size = 32;  // full-batch steps are too few for exchange members to fit
    const EnsembleModel regular = train_ensemble(data, EnsembleKind::Regular, StochasticSpec{}, 128, tcfg,
                                                 PriorSpec{}, MLPArch::toy(), seed, jobs());
    StochasticSpec np;
    np.kind = StochasticKind::NPExchange;
    const EnsembleModel se3 =
        train_ensemble(data, EnsembleKind::SE3, np, 128, tcfg, PriorSpec{}, MLPArch::toy(), seed, jobs());

    PredictOptions reg_po = po;
    PredictOptions se3_po = po;
    se3_po.inferences_per_member = 8;
    const ReferenceComparison r_in = compare_to_reference(predict(regular, grid_in, reg_po), ref_in);
    const ReferenceComparison r_out = compare_to_reference(predict(regular, grid_out, reg_po), ref_out);
    const ReferenceComparison s_in = compare_to_reference(predict(se3, grid_in, se3_po), ref_in);
    const ReferenceComparison s_out = compare_to_reference(predict(se3, grid_out, se3_po), ref_out);
    agr_in += s_in.agreement >= r_in.agreement;
    var_in += s_in.variance <= r_in.variance;
    agr_out += s_out.agreement >= r_out.agreement;
    var_out += s_out.variance <= r_out.variance;
    absolute = absolute && r_in.agreement >= 0.95 && s_in.agreement >= 0.95;
    o.info(fmt("seed %llu in-domain  agr/var: SE3 %.1f%% / %.2f  regular %.1f%% / %.2f",
               static_cast<unsigned long long>(seed), 100 * s_in.agreement, 100 * s_in.variance,
               100 * r_in.agreement, 100 * r_in.variance));
    o.info(fmt("seed %llu out-domain agr/var: SE3 %.1f%% / %.2f  regular %.1f%% / %.2f",
               static_cast<unsigned long long>(seed), 100 * s_out.agreement, 100 * s_out.variance,
               100 * r_out.agreement, 100 * r_out.variance));
  }
  o.require(agr_in >= 2, fmt("SE3 agreement >= regular in-domain in %d/3 seeds", agr_in));
  o.require(var_in >= 2, fmt("SE3 variance <= regular in-domain in %d/3 seeds", var_in));
  o.require(agr_out >= 2, fmt("SE3 agreement >= regular out-of-domain in %d/3 seeds", agr_out));
  o.require(var_out >= 2, fmt("SE3 variance <= regular out-of-domain in %d/3 seeds", var_out));
  o.require(absolute, "in-domain agreement >= 95% for both methods in every seed");
  return o;
}

// ------------------------------------------------------------ criterion 7

Outcome criterion_metrics() {
  Outcome o;
  const auto pd_of = [](std::vector<std::vector<double>> rows) {
    PredictiveDistribution pd;
    pd.probs.resize(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) pd.probs.row(static_cast<Eigen::Index>(i)) << rows[i][0], rows[i][1];
    return pd;
  };
  const auto stack_of = [](std::vector<Matrix> stack) {
    PredictiveDistribution pd;
    pd.probs = Matrix::Zero(stack[0].rows(), stack[0].cols());
    for (const auto& m : stack) pd.probs += m;
    pd.probs /= static_cast<double>(stack.size());
    pd.member_stack = std::move(stack);
    return pd;
  };
  const double ln2 = std::numbers::ln2;
  const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(b)); };

  const Vector h = predictive_entropy(pd_of({{0.5, 0.5}, {1.0, 0.0}, {0.25, 0.75}}));
  o.require(close(h[0], ln2), fmt("entropy [0.5,0.5] = %.17g (ln 2)", h[0]));
  o.require(h[1] == 0.0, "entropy of one-hot row = 0");
  const double h3 = -0.25 * std::log(0.25) - 0.75 * std::log(0.75);
  o.require(close(h[2], h3), fmt("entropy [0.25,0.75] = %.17g (analytic %.17g)", h[2], h3));

  Matrix a(1, 2), b(1, 2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;
  o.require(close(mutual_information(stack_of({a, b}))[0], ln2), "MI of members [1,0] and [0,1] = ln 2");
  Matrix m(2, 2);
  m << 0.3, 0.7, 0.9, 0.1;
  o.require(mutual_information(stack_of({m, m, m})).cwiseAbs().maxCoeff() < 1e-15, "MI of identical members = 0");
  {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<Matrix> st(3, Matrix(50, 2));
    for (auto& s : st) {
      for (int i = 0; i < 50; ++i) {
        const double p = u(gen);
        s(i, 0) = p;
        s(i, 1) = 1 - p;
      }
    }
    double worst = 0.0;
    const Vector mi = mutual_information(stack_of(st));
    for (int i = 0; i < 50; ++i) {
      double mean0 = 0.0;
      for (const auto& s : st) mean0 += s(i, 0) / 3.0;
      double ent_mean = 0.0;
      for (const auto& s : st) ent_mean -= (s(i, 0) * std::log(s(i, 0)) + s(i, 1) * std::log(s(i, 1))) / 3.0;
      const double direct = -(mean0 * std::log(mean0) + (1 - mean0) * std::log(1 - mean0)) - ent_mean;
      worst = std::max(worst, std::abs(mi[i] - direct));
    }
    o.require(worst <= 1e-12, fmt("MI of random 3-member stack vs two-pass recomputation: %.2e (<= 1e-12)", worst));
  }

  const PredictiveDistribution p = pd_of({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
  const PredictiveDistribution flipped = pd_of({{0.1, 0.9}, {0.8, 0.2}, {0.4, 0.6}});
  o.require(agreement(p, p) == 1.0, "agreement with itself = 1");
  o.require(agreement(p, flipped) == 0.0, "agreement with flipped argmax = 0");
  o.require(predictive_variance(p, p) == 0.0, "variance against itself = 0");
  o.require(predictive_variance(pd_of({{1, 0}, {0, 1}}), pd_of({{0, 1}, {1, 0}})) == 1.0,
            "variance of disjoint one-hot rows = 1");

  const PredictiveDistribution sure = pd_of({{1, 0}, {0, 1}, {1, 0}});
  o.require(ece(sure, {0, 1, 0}).value == 0.0, "ECE with confidence 1, all correct = 0");
  o.require(ece(sure, {1, 0, 1}).value == 1.0, "ECE with confidence 1, all wrong = 1");
  {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
      rows.push_back({0.8, 0.2});
      labels.push_back(i < 8 ? 0 : 1);
    }
    for (int i = 0; i < 10; ++i) {
      rows.push_back({0.4, 0.6});
      labels.push_back(i < 6 ? 1 : 0);
    }
    const double e = ece(pd_of(rows), labels).value;
    o.require(e < 1e-15, fmt("ECE of constructed calibrated set (0.8/80%%, 0.6/60%%) = %.2e", e));
  }

  Vector lo(3), hi(3), in(2), out(2);
  lo << 0.1, 0.2, 0.3;
  hi << 0.7, 0.8, 0.9;
  in << 0.1, 0.2;
  out << 0.15, 0.3;
  o.require(odd_auroc(lo, hi) == 1.0, "AUROC of separated scores = 1");
  o.require(odd_auroc(lo, lo) == 0.5, "AUROC of identical scores = 0.5");
  o.require(odd_auroc(in, out) == 0.75, fmt("AUROC in={0.1,0.2} out={0.15,0.3} = %.17g (0.75)", odd_auroc(in, out)));
  o.require(mean_abs_diff(hi, hi) == 0.0, "mean |a - b| with a = b is 0");
  o.require(std::abs(mean_abs_diff(lo + Vector::Constant(3, 0.125), lo) - 0.125) < 1e-15,
            "mean |a - b| with constant offset 0.125 is 0.125");

  {
    EvaluationInputs ev;
    ev.test = pd_of({{0.9, 0.1}, {0.3, 0.7}});
    ev.test_labels = {0, 1};
    ev.reference_test = ev.test;
    const MetricsReport r = evaluate(ev);
    o.require(r.accuracy == 1.0 && r.test_set && r.test_set->agreement == 1.0 && r.test_set->variance == 0.0 &&
                  r.test_set->mean_abs_entropy_diff == 0.0,
              "evaluate with pd = reference and perfect labels: accuracy 1, agreement 1, variance 0, diff 0");
    EvaluationInputs un;
    un.test = pd_of({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
    un.test_labels = {0, 0, 0, 1};
    const MetricsReport u = evaluate(un);
    o.require(close(u.loss, ln2) && close(u.ece, std::abs(0.5 - u.accuracy)),
              fmt("uniform predictions: loss %.17g (ln 2), ece %.3f = |0.5 - accuracy %.3f|", u.loss, u.ece,
                  u.accuracy));
  }
  return o;
}

// ------------------------------------------------------------ criterion 8

int sh(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "stochens_acceptance_determinism";
  fs::remove_all(root);
  const std::string cli = STOCHENS_CLI_PATH;
  const auto run = [&](const std::string& name, int jobs_flag) {
    const fs::path base = root / name;
    const nlohmann::json common = {{"schema_version", 1},
                                   {"seed", 2024},
                                   {"dataset", {{"variant", "a"}}},
                                   {"hmc", {{"n_chains", 1}, {"n_warmup", 100}, {"n_samples", 100}}}};
    nlohmann::json hmc = common, reg = common;
    hmc["method"] = "hmc";
    hmc["output_dir"] = (base / "hmc").string();
    reg["method"] = "regular";
    reg["K"] = 8;
    reg["output_dir"] = (base / "regular").string();
    reg["dataset"] = {{"path", (base / "hmc" / "data").string()}};
    reg["reference"] = (base / "hmc" / "predictions").string();
    write_json(base / "hmc.json", hmc);
    write_json(base / "regular.json", reg);
    const std::string j = " --jobs " + std::to_string(jobs_flag) + " --config ";
    const std::string h = j + (base / "hmc.json").string(), r = j + (base / "regular.json").string();
    int rc = 0;
    for (const std::string cmd : {"gen-data" + h, "hmc" + h, "predict" + h, "evaluate" + h, "train" + r,
                                  "predict" + r, "evaluate" + r}) {
      rc = std::max(rc, sh(cli + " " + cmd));
    }
    return rc;
  };
  const int rc1 = run("first", 1);
  const int rc2 = run("second", 2);
  o.require(rc1 == 0 && rc2 == 0, fmt("both pipeline runs exit 0 (got %d, %d)", rc1, rc2));
  for (const char* m : {"hmc", "regular"}) {
    const fs::path a = root / "first" / m / "metrics" / "metrics.json";
    const fs::path b = root / "second" / m / "metrics" / "metrics.json";
    const bool same = fs::exists(a) && fs::exists(b) && read_text(a) == read_text(b);
    o.require(same, fmt("%s metrics.json byte-identical across runs (sha256 %s)", m,
                        fs::exists(a) ? sha256_file(a).substr(0, 16).c_str() : "missing"));
  }
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "gradient vs finite differences", criterion_gradient},
      {2, "closed-form ensemble KL vs Monte Carlo", criterion_kl_closed_form},
      {3, "stochastic-ensemble KL vs Monte Carlo", criterion_kl_stochastic},
      {4, "NUTS moments and toy-posterior convergence", criterion_sampler},
      {5, "uncertainty maps on the toy tasks", criterion_figure},
      {6, "SE3 vs regular ensemble against HMC", criterion_table_trend},
      {7, "metric unit oracles", criterion_metrics},
      {8, "end-to-end determinism", criterion_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  std::vector<std::string> summary;
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("--- criterion %d: %s\n", c.id, c.name);
    for (const auto& n : o.notes) std::printf("  %s\n", n.c_str());
    const std::string line = fmt("criterion %d %s: %s (%.1f s)", c.id, o.pass ? "PASS" : "FAIL", c.name, secs);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary.push_back(line);
    all_pass = all_pass && o.pass;
  }
  std::printf("\n=== acceptance summary\n");
  for (const auto& s : summary) std::printf("%s\n", s.c_str());
  return all_pass ? 0 : 1;
}
