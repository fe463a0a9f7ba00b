#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mixture_oracle.hpp"
#include "stochens/errors.hpp"
#include "stochens/vi_objective.hpp"
#include "test_util.hpp"

using namespace stochens;
using stochens::testing::enumerate_mixture;
using stochens::testing::random_dataset;
using stochens::testing::random_params;

namespace {

// Architecture [d-1, 1] carries exactly d parameters.
MLPArch arch_with_dim(std::size_t d) { return MLPArch{{d - 1, 1}}; }

EnsembleFamilySpec deep(std::vector<ParamVector> ps, double sigma2, double lambda) {
  EnsembleFamilySpec e;
  for (auto& p : ps) e.members.push_back({std::move(p), {}});
  e.sigma2 = sigma2;
  e.prior.lambda = lambda;
  return e;
}

StochasticSpec spec_of(StochasticKind kind, double rate = 0.0) {
  StochasticSpec s;
  s.kind = kind;
  s.hidden_drop_rate = rate;
  return s;
}

}  // namespace

TEST_CASE("rf_upper_bound") {
  const MLPArch arch = arch_with_dim(3);
  Rng rng(1);
  const ParamVector a = random_params(arch, rng);
  CHECK(rf_upper_bound({a}, 0.3) == 0.0);
  CHECK(rf_upper_bound({a, a}, 0.3) == doctest::Approx(1.0));
  ParamVector b = a;
  const double sigma2 = 0.7;
  b.values()[0] += std::sqrt(8.0 * sigma2);
  CHECK(rf_upper_bound({a, b}, sigma2) == doctest::Approx(std::exp(-1.0)));
  CHECK(rf_upper_bound({a, b}, sigma2) == doctest::Approx(0.3679).epsilon(1e-4));
}

TEST_CASE("kl_deep_ensemble") {
  Rng rng(2);

  SUBCASE("q equals the prior") {
    const double lambda = 2.0;
    const KLBreakdown kl = kl_deep_ensemble(deep({ParamVector(arch_with_dim(5))}, 1.0 / lambda, lambda));
    CHECK(kl.total_upper_bound == doctest::Approx(0.0));
  }

  SUBCASE("only the L2 term survives at lambda sigma2 = 1") {
    ParamVector w(arch_with_dim(2));
    w.values() << 1.0, 1.0;
    const KLBreakdown kl = kl_deep_ensemble(deep({w}, 1.0, 1.0));
    CHECK(kl.constant_term == doctest::Approx(0.0));
    CHECK(kl.l2_term == doctest::Approx(1.0));
    CHECK(kl.total_upper_bound == doctest::Approx(1.0));
  }

  SUBCASE("matches the Monte Carlo KL with the exact repulsive force") {
    const MLPArch arch = arch_with_dim(3);
    const auto e = deep({random_params(arch, rng), random_params(arch, rng)}, 0.25, 1.0);
    const KLBreakdown kl = kl_deep_ensemble(e);
    const GaussianMixture mix = enumerate_mixture(e);
    CHECK(mixture_kl_without_rf(mix, e.prior) == doctest::Approx(kl.total_without_rf()));
    Rng r1(10), r2(11);
    const McEstimate truth = mc_kl_oracle(mix, e.prior, 1000000, r1);
    const McEstimate rf = rf_exact_mc(mix, 1000000, r2);
    const double se = std::hypot(truth.std_error, rf.std_error);
    CHECK(std::abs(kl.total_without_rf() + rf.estimate - truth.estimate) < 3 * se);
    CHECK(kl.rf_bound >= rf.estimate - 3 * rf.std_error);
  }

  SUBCASE("permutation invariant") {
    const MLPArch arch = arch_with_dim(4);
    const auto a = random_params(arch, rng), b = random_params(arch, rng),
               c = random_params(arch, rng);
    const KLBreakdown k1 = kl_deep_ensemble(deep({a, b, c}, 0.5, 1.0));
    const KLBreakdown k2 = kl_deep_ensemble(deep({c, a, b}, 0.5, 1.0));
    CHECK(k1.total_upper_bound == doctest::Approx(k2.total_upper_bound).epsilon(1e-14));
  }

  SUBCASE("log K term strictly decreasing") {
    const MLPArch arch = arch_with_dim(2);
    std::vector<ParamVector> ps;
    double last = 1.0;
    for (int k = 1; k <= 6; ++k) {
      ps.push_back(random_params(arch, rng));
      const double term = kl_deep_ensemble(deep(ps, 0.1, 1.0)).log_k_term;
      CHECK(term < last);
      CHECK(term <= 0.0);
      last = term;
    }
  }

  SUBCASE("errors") {
    auto e = deep({ParamVector(arch_with_dim(2))}, 0.0, 1.0);
    CHECK_THROWS_AS(kl_deep_ensemble(e), ConfigError);
    e.sigma2 = 1.0;
    e.stochastic.kind = StochasticKind::Dropout;
    CHECK_THROWS_AS(kl_deep_ensemble(e), DomainError);
  }
}

TEST_CASE("kl_stochastic_ensemble") {
  Rng rng(3);

  SUBCASE("NPExchange entropy is -N ln 2") {
    const MLPArch arch = MLPArch::toy();
    EnsembleFamilySpec e;
    e.members.push_back({random_params(arch, rng), random_params(arch, rng)});
    e.stochastic = spec_of(StochasticKind::NPExchange);
    const KLBreakdown kl = kl_stochastic_ensemble(e, rng);
    CHECK(kl.stochastic_entropy_term == -22.0 * std::numbers::ln2);
    CHECK(kl.rf_bound == 0.0);  // machine-precision sigma
  }

  SUBCASE("vanishing drop rate recovers the deep ensemble") {
    const MLPArch arch{{2, 3, 2}};
    std::vector<ParamVector> ps{random_params(arch, rng), random_params(arch, rng)};
    const KLBreakdown ref = kl_deep_ensemble(deep(ps, 0.05, 1.0));
    for (auto kind : {StochasticKind::Dropout, StochasticKind::DropConnect}) {
      double last_gap = INFINITY;
      for (double rate : {1e-2, 1e-4, 1e-6, 0.0}) {
        auto e = deep(ps, 0.05, 1.0);
        e.stochastic = spec_of(kind, rate);
        Rng r(5);
        const KLBreakdown kl = kl_stochastic_ensemble(e, r, 20000);
        CHECK(kl.stochastic_entropy_term <= 0.0);
        const double gap = std::abs(kl.total_without_rf() - ref.total_without_rf());
        CHECK(gap <= last_gap);
        last_gap = gap;
        if (rate == 0.0) {
          CHECK(kl.stochastic_entropy_term == 0.0);
          CHECK(gap < 1e-12);
          CHECK(kl.rf_bound == doctest::Approx(ref.rf_bound).epsilon(0.05));
        }
      }
    }
  }

  SUBCASE("entropy term per unit is minimized at p = 1/2") {
    const MLPArch arch{{1, 1}};
    double at_half = 0.0;
    {
      auto e = deep({ParamVector(arch)}, 0.1, 1.0);
      e.stochastic = spec_of(StochasticKind::Dropout, 0.5);
      e.stochastic.applies_to_output_layer = true;
      e.stochastic.output_drop_rate = 0.5;
      at_half = kl_stochastic_ensemble(e, rng, 16).stochastic_entropy_term;
      CHECK(at_half == doctest::Approx(-std::numbers::ln2));
    }
    for (double rate : {0.0, 0.01, 0.2, 0.45, 0.55, 0.9, 1.0}) {
      auto e = deep({ParamVector(arch)}, 0.1, 1.0);
      e.stochastic = spec_of(StochasticKind::Dropout, rate);
      e.stochastic.applies_to_output_layer = true;
      e.stochastic.output_drop_rate = rate;
      const double t = kl_stochastic_ensemble(e, rng, 16).stochastic_entropy_term;
      CHECK(t >= at_half);
      CHECK(t <= 0.0);
      if (rate == 0.0 || rate == 1.0) CHECK(t == 0.0);
    }
  }

  SUBCASE("two-node exchange matches the Monte Carlo KL of the enumerated mixture") {
    // Output layer of [1, 2]: N = 2 nodes with 2 parameters each.
    const MLPArch arch{{1, 2}};
    EnsembleFamilySpec e;
    e.members.push_back({random_params(arch, rng), random_params(arch, rng)});
    e.sigma2 = 0.25;
    e.stochastic = spec_of(StochasticKind::NPExchange);
    Rng r0(20), r1(21), r2(22);
    const KLBreakdown kl = kl_stochastic_ensemble(e, r0);
    const GaussianMixture mix = enumerate_mixture(e);
    REQUIRE(mix.means.size() == 4);
    const McEstimate truth = mc_kl_oracle(mix, e.prior, 1000000, r1);
    const McEstimate rf = rf_exact_mc(mix, 1000000, r2);
    CHECK(std::abs(kl.total_without_rf() + rf.estimate - truth.estimate) <
          3 * std::hypot(truth.std_error, rf.std_error));
  }
}

TEST_CASE("rf2_mc_bound") {
  Rng rng(4);

  SUBCASE("single realization") {
    auto e = deep({random_params(MLPArch{{2, 3, 2}}, rng)}, 0.5, 1.0);
    e.stochastic = spec_of(StochasticKind::Dropout, 0.0);
    CHECK(rf2_mc_bound(e, rng, 100).estimate == 0.0);
  }

  SUBCASE("collapses for tiny sigma") {
    const MLPArch arch{{2, 3, 2}};
    auto e = deep({random_params(arch, rng), random_params(arch, rng)}, 1e-30, 1.0);
    e.stochastic = spec_of(StochasticKind::Dropout, 0.3);
    CHECK(rf2_mc_bound(e, rng, 1000).estimate < 1e-300);
  }

  SUBCASE("matches exhaustive enumeration") {
    for (auto kind : {StochasticKind::Dropout, StochasticKind::NPExchange,
                      StochasticKind::DropConnect}) {
      const MLPArch arch = kind == StochasticKind::DropConnect ? MLPArch{{1, 1, 1}}
                                                               : MLPArch{{1, 2, 1}};
      EnsembleFamilySpec e;
      for (int k = 0; k < 2; ++k) {
        e.members.push_back({random_params(arch, rng, 0.5), random_params(arch, rng, 0.5)});
      }
      e.sigma2 = 0.3;
      e.stochastic = spec_of(kind, 0.3);
      const double exact = rf_mixture_bound(enumerate_mixture(e));
      const McEstimate mc = rf2_mc_bound(e, rng, 200000);
      CHECK(std::abs(mc.estimate - exact) < 3 * mc.std_error);
    }
  }

  SUBCASE("equal weights reduce to the deep-ensemble bound") {
    const MLPArch arch = arch_with_dim(3);
    std::vector<ParamVector> ps{random_params(arch, rng, 0.3), random_params(arch, rng, 0.3),
                                random_params(arch, rng, 0.3)};
    const auto e = deep(ps, 0.2, 1.0);
    CHECK(rf_mixture_bound(enumerate_mixture(e)) == doctest::Approx(rf_upper_bound(ps, 0.2)));
  }

  CHECK_THROWS_AS(rf2_mc_bound(deep({ParamVector(arch_with_dim(2))}, 1.0, 1.0), rng, 1),
                  ConfigError);
}

TEST_CASE("mc_kl_oracle") {
  Rng rng(6);
  const double lambda = 3.0;

  SUBCASE("q equals p") {
    const GaussianMixture mix{{1.0}, {Vector::Zero(4)}, 1.0 / lambda};
    const McEstimate kl = mc_kl_oracle(mix, {lambda}, 10000, rng);
    CHECK(std::abs(kl.estimate) < 1e-12);
  }

  SUBCASE("one-dimensional shifted Gaussian") {
    Vector mu(1);
    mu << 0.8;
    const GaussianMixture mix{{1.0}, {mu}, 1.0 / lambda};
    const McEstimate kl = mc_kl_oracle(mix, {lambda}, 100000, rng);
    CHECK(std::abs(kl.estimate - lambda * 0.64 / 2) < 3 * kl.std_error + 1e-12);
  }

  SUBCASE("far-separated symmetric pair") {
    const double a = 4.0, sigma2 = 0.05;
    Vector plus(2), minus(2);
    plus << a, 0.0;
    minus << -a, 0.0;
    const GaussianMixture mix{{0.5, 0.5}, {plus, minus}, sigma2};
    const double constant = 0.5 * 2 * (lambda * sigma2 - std::log(sigma2) - 1 - std::log(lambda));
    const double expected = constant + lambda * a * a / 2 - std::log(2.0);
    const McEstimate kl = mc_kl_oracle(mix, {lambda}, 200000, rng);
    CHECK(std::abs(kl.estimate - expected) < 3 * kl.std_error);
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(mc_kl_oracle({{0.4, 0.4}, {Vector::Zero(1), Vector::Zero(1)}, 1.0}, {1.0}, 10, rng),
                    DomainError);
    CHECK_THROWS_AS(mc_kl_oracle({{1.0}, {Vector::Ones(1)}, 1e-320}, {1.0}, 10, rng), DomainError);
  }
}

TEST_CASE("enll") {
  Rng rng(7);
  const MLPArch arch = MLPArch::toy();
  const Dataset d = random_dataset(20, rng);
  const ParamVector p = random_params(arch, rng);

  CHECK(enll(deep({p}, 1e-8, 1.0), d, 1, rng) == doctest::Approx(nll(p, d)));
  CHECK(enll(deep({p, p}, 1e-8, 1.0), d, 3, rng) == doctest::Approx(nll(p, d)));
  CHECK_THROWS_AS(enll(EnsembleFamilySpec{}, d, 1, rng), ConfigError);

  SUBCASE("dropout expectation matches mask enumeration") {
    const MLPArch small{{2, 4, 4, 2}};
    const ParamVector q = random_params(small, rng, 1.5);
    const Dataset few = random_dataset(3, rng);
    const auto theta = stochens::testing::to_std(q.values());
    double exact = 0.0;
    for (int code = 0; code < 256; ++code) {
      std::vector<std::vector<double>> node(3);
      for (int n = 0; n < 4; ++n) {
        node[0].push_back((code >> n) & 1);
        node[1].push_back((code >> (4 + n)) & 1);
      }
      for (std::size_t i = 0; i < few.size(); ++i) {
        const auto z = stochens::testing::reference_forward(
            small, theta, {few.points(i, 0), few.points(i, 1)}, &node);
        exact -= stochens::testing::softmax_log_prob(z, few.labels[i]) / 256.0;
      }
    }
    auto e = deep({q}, 1e-8, 1.0);
    e.stochastic = spec_of(StochasticKind::Dropout, 0.5);
    // 40 independent estimates of 250 passes each give an empirical standard error.
    std::vector<double> batches;
    for (int b = 0; b < 40; ++b) batches.push_back(enll(e, few, 250, rng));
    double mean = 0.0, var = 0.0;
    for (double v : batches) mean += v / 40;
    for (double v : batches) var += (v - mean) * (v - mean) / 39;
    CHECK(std::abs(mean - exact) < 3 * std::sqrt(var / 40));
  }
}

TEST_CASE("training_loss") {
  Rng rng(8);
  const MLPArch arch = MLPArch::toy();
  const Dataset d = random_dataset(16, rng);
  const ParamVector a = random_params(arch, rng);

  SUBCASE("no prior leaves the masked mean NLL") {
    const StochasticSpec s = spec_of(StochasticKind::Dropout, 0.3);
    Rng r1(9), r2(9);
    const MaskSet m = sample_masks(s, arch, r2);
    CHECK(training_loss({a, {}}, d, s, {0.0}, 100, r1) ==
          doctest::Approx(nll(a, d, &m, Reduction::Mean)));
  }

  SUBCASE("zero network") {
    CHECK(training_loss({ParamVector(arch), {}}, d, {}, {1.0}, 16, rng) ==
          doctest::Approx(std::numbers::ln2));
  }

  SUBCASE("exchange between identical sets is the plain loss") {
    const StochasticSpec np = spec_of(StochasticKind::NPExchange);
    for (int t = 0; t < 5; ++t) {
      CHECK(training_loss({a, a}, d, np, {2.0}, 50, rng) ==
            doctest::Approx(training_loss({a, {}}, d, {}, {2.0}, 50, rng)));
    }
  }

  SUBCASE("gradients agree with central differences") {
    for (auto kind : {StochasticKind::None, StochasticKind::Dropout,
                      StochasticKind::DropConnect, StochasticKind::NPExchange}) {
      const StochasticSpec s = spec_of(kind, 0.4);
      MemberParams m{a, kind == StochasticKind::NPExchange
                            ? std::optional<ParamVector>(random_params(arch, rng))
                            : std::nullopt};
      const MaskSet masks = sample_masks(s, arch, rng);
      const TrainingLossGrad g = training_loss_with_grad(m, d, s, {1.5}, 40, masks);
      const auto at = [&](const MemberParams& x) {
        return training_loss_with_grad(x, d, s, {1.5}, 40, masks).loss;
      };
      const double h = 1e-6;
      for (Eigen::Index j = 0; j < 162; j += 5) {
        MemberParams up = m, down = m;
        up.primary.values()[j] += h;
        down.primary.values()[j] -= h;
        CHECK(g.grad_primary.values()[j] == doctest::Approx((at(up) - at(down)) / (2 * h)).epsilon(1e-5));
        if (m.secondary) {
          up = m;
          down = m;
          up.secondary->values()[j] += h;
          down.secondary->values()[j] -= h;
          CHECK(g.grad_secondary->values()[j] ==
                doctest::Approx((at(up) - at(down)) / (2 * h)).epsilon(1e-5));
        }
      }
    }
  }
}
