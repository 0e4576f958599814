#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "cssm/sampler.hpp"
#include "simulation_support.hpp"

namespace {

using cssm::PhasePoint;
using cssm::SamplerConfig;

struct StandardNormal {
  int d;
  int dim() const { return d; }
  double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    g = -q;
    return -0.5 * q.squaredNorm();
  }
};

struct CorrelatedNormal2 {
  double rho;
  int dim() const { return 2; }
  double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    const double s = 1.0 / (1.0 - rho * rho);
    g.resize(2);
    g[0] = -s * (q[0] - rho * q[1]);
    g[1] = -s * (q[1] - rho * q[0]);
    return -0.5 * s * (q[0] * q[0] - 2.0 * rho * q[0] * q[1] + q[1] * q[1]);
  }
};

// Independent scales per coordinate.
struct ScaledNormal {
  Eigen::VectorXd sd;
  int dim() const { return static_cast<int>(sd.size()); }
  double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    const Eigen::VectorXd z = q.cwiseQuotient(sd);
    g = -z.cwiseQuotient(sd);
    return -0.5 * z.squaredNorm();
  }
};

Eigen::MatrixXd all_draws(const std::vector<cssm::ChainResult>& chains) {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.draws.rows();
  Eigen::MatrixXd out(rows, chains.front().draws.cols());
  Eigen::Index r = 0;
  for (const auto& c : chains) {
    out.middleRows(r, c.draws.rows()) = c.draws;
    r += c.draws.rows();
  }
  return out;
}

PhasePoint start_point(const StandardNormal& target, std::initializer_list<double> q, std::initializer_list<double> p) {
  Eigen::VectorXd qv(target.d), pv(target.d);
  int i = 0;
  for (double x : q) qv[i++] = x;
  i = 0;
  for (double x : p) pv[i++] = x;
  auto z = cssm::make_phase_point(target, qv);
  z.p = pv;
  return z;
}

TEST(Leapfrog, ZeroStepsLeavesStateUnchanged) {
  const StandardNormal target{2};
  const auto z = start_point(target, {0.3, -1.2}, {0.5, 0.1});
  const auto out = cssm::leapfrog(z, 0.1, 0, Eigen::VectorXd::Ones(2), target);
  EXPECT_EQ(out.q, z.q);
  EXPECT_EQ(out.p, z.p);
}

TEST(Leapfrog, Reversible) {
  const StandardNormal target{2};
  Eigen::VectorXd mass(2);
  mass << 1.0, 2.5;
  const auto z = start_point(target, {0.3, -1.2}, {0.5, 0.1});
  auto fwd = cssm::leapfrog(z, 0.05, 37, mass, target);
  fwd.p = -fwd.p;
  const auto back = cssm::leapfrog(fwd, 0.05, 37, mass, target);
  EXPECT_LT((back.q - z.q).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((back.p + z.p).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Leapfrog, SecondOrderEnergyError) {
  const StandardNormal target{2};
  const Eigen::VectorXd mass = Eigen::VectorXd::Ones(2);
  const auto z = start_point(target, {0.8, -0.4}, {0.3, 1.1});
  const double h0 = cssm::hamiltonian(z, mass);
  const double e1 = std::abs(cssm::hamiltonian(cssm::leapfrog(z, 0.01, 100, mass, target), mass) - h0);
  const double e2 = std::abs(cssm::hamiltonian(cssm::leapfrog(z, 0.005, 200, mass, target), mass) - h0);
  EXPECT_GT(e1 / e2, 3.5);
  EXPECT_LT(e1 / e2, 4.5);
}

TEST(Leapfrog, NonFiniteDensityStopsIntegration) {
  struct Cliff {
    int dim() const { return 1; }
    double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
      g = -q;
      return q[0] > 1.0 ? -std::numeric_limits<double>::infinity() : -0.5 * q[0] * q[0];
    }
  } target;
  auto z = cssm::make_phase_point(target, Eigen::VectorXd::Zero(1));
  z.p = Eigen::VectorXd::Constant(1, 3.0);
  const auto out = cssm::leapfrog(z, 0.1, 50, Eigen::VectorXd::Ones(1), target);
  EXPECT_FALSE(out.finite());
  EXPECT_EQ(cssm::hamiltonian(out, Eigen::VectorXd::Ones(1)), std::numeric_limits<double>::infinity());
}

TEST(Hmc, EqualEnergyAcceptsWithProbabilityOne) {
  EXPECT_EQ(cssm::metropolis_accept_prob(3.25, 3.25), 1.0);
  EXPECT_EQ(cssm::metropolis_accept_prob(3.0, 2.0), 1.0);
  EXPECT_NEAR(cssm::metropolis_accept_prob(2.0, 3.0), std::exp(-1.0), 1e-15);
}

TEST(Hmc, TinyStepAcceptsAlmostSurely) {
  const StandardNormal target{3};
  cssm::Rng rng(3);
  auto z = cssm::make_phase_point(target, Eigen::VectorXd::Constant(3, 0.7));
  for (int i = 0; i < 50; ++i) {
    const auto r = cssm::hmc_transition(z, 1e-4, 5, Eigen::VectorXd::Ones(3), target, rng);
    EXPECT_GT(r.accept_prob, 1.0 - 1e-7);
    z = r.state;
  }
}

TEST(Hmc, StandardNormalMoments) {
  const StandardNormal target{1};
  cssm::Rng rng(17);
  auto z = cssm::make_phase_point(target, Eigen::VectorXd::Zero(1));
  const Eigen::VectorXd mass = Eigen::VectorXd::Ones(1);
  for (int i = 0; i < 200; ++i) z = cssm::hmc_transition(z, 0.13, 11, mass, target, rng).state;
  const int n = 5000;
  double sum = 0.0, sum2 = 0.0;
  int accepted = 0;
  for (int i = 0; i < n; ++i) {
    const auto r = cssm::hmc_transition(z, 0.13, 11, mass, target, rng);
    accepted += r.accepted;
    z = r.state;
    sum += z.q[0];
    sum2 += z.q[0] * z.q[0];
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_GE(var, 0.9);
  EXPECT_LE(var, 1.1);
  EXPECT_GT(accepted, n * 0.9);
}

TEST(Nuts, TenDimensionalStandardNormal) {
  const StandardNormal target{10};
  SamplerConfig cfg;
  cfg.n_iter = 5500;
  cfg.n_burnin = 500;
  cfg.seed = 2024;
  const auto chains = cssm::sample(target, cfg);
  ASSERT_EQ(chains.size(), 2u);
  const auto draws = all_draws(chains);
  ASSERT_EQ(draws.rows(), 10000);
  for (int j = 0; j < 10; ++j) {
    const double mean = draws.col(j).mean();
    const double var = (draws.col(j).array() - mean).square().sum() / (draws.rows() - 1);
    EXPECT_NEAR(mean, 0.0, 0.05) << j;
    EXPECT_NEAR(var, 1.0, 0.1) << j;
  }
  for (const auto& c : chains) {
    EXPECT_EQ(c.divergences(), 0);
    EXPECT_GE(c.mean_accept_stat(), 0.7);
    EXPECT_LE(c.mean_accept_stat(), 0.9);
    EXPECT_LE(c.mass_diag.maxCoeff() / c.mass_diag.minCoeff(), 2.0);
  }
}

TEST(Nuts, CorrelatedNormal) {
  const CorrelatedNormal2 target{0.9};
  SamplerConfig cfg;
  cfg.n_iter = 5500;
  cfg.seed = 99;
  const auto draws = all_draws(cssm::sample(target, cfg));
  const Eigen::VectorXd a = draws.col(0).array() - draws.col(0).mean();
  const Eigen::VectorXd b = draws.col(1).array() - draws.col(1).mean();
  const double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
  EXPECT_NEAR(corr, 0.9, 0.03);
}

TEST(Nuts, DepthCapZeroStaysAtInitialPoint) {
  const StandardNormal target{3};
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iter = 300;
  cfg.n_burnin = 100;
  cfg.max_tree_depth = 0;
  cfg.adapt_step_size = false;
  const auto chains = cssm::sample(target, cfg);
  const auto& d = chains.front().draws;
  for (Eigen::Index i = 1; i < d.rows(); ++i) EXPECT_EQ(d.row(i), d.row(0));
  EXPECT_EQ(chains.front().max_depth_hits(0), d.rows());
}

TEST(Warmup, DisabledAdaptationKeepsStepSize) {
  const StandardNormal target{4};
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iter = 400;
  cfg.n_burnin = 200;
  cfg.adapt_step_size = false;
  cfg.adapt_metric = false;
  cfg.step_size = 0.7;
  const auto chains = cssm::sample(target, cfg);
  EXPECT_EQ(chains.front().step_size, 0.7);
  EXPECT_EQ(chains.front().mass_diag, Eigen::VectorXd::Ones(4));
}

TEST(Warmup, MassMatrixLearnsScales) {
  Eigen::VectorXd sd(3);
  sd << 0.1, 1.0, 10.0;
  const ScaledNormal target{sd};
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iter = 1500;
  cfg.seed = 8;
  const auto chains = cssm::sample(target, cfg);
  const auto& m = chains.front().mass_diag;
  // mass = 1 / variance
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(std::log(m[j] * sd[j] * sd[j]), 0.0, std::log(2.0)) << j;
  EXPECT_GE(chains.front().mean_accept_stat(), 0.7);
}

TEST(Warmup, WindowsFitDefaultBurnin) {
  cssm::WindowedVariance w(500, 1);
  std::vector<int> ends;
  Eigen::VectorXd var;
  for (int i = 0; i < 500; ++i)
    if (w.learn(Eigen::VectorXd::Constant(1, i % 7), var)) ends.push_back(i);
  EXPECT_EQ(ends, (std::vector<int>{99, 149, 249, 449}));
}

TEST(Sample, SeedDeterminism) {
  const CorrelatedNormal2 target{0.5};
  SamplerConfig cfg;
  cfg.n_iter = 600;
  cfg.n_burnin = 300;
  cfg.seed = 5;
  const auto a = cssm::sample(target, cfg);
  const auto b = cssm::sample(target, cfg);
  cfg.parallel_chains = true;
  const auto c = cssm::sample(target, cfg);
  cfg.seed = 6;
  const auto d = cssm::sample(target, cfg);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].draws, b[k].draws);
    EXPECT_EQ(a[k].draws, c[k].draws);
    EXPECT_NE(a[k].draws, d[k].draws);
  }
  EXPECT_NE(a[0].draws, a[1].draws);
}

TEST(Sample, RejectsBadConfig) {
  SamplerConfig cfg;
  cfg.n_burnin = cfg.n_iter;
  EXPECT_THROW(cssm::sample(StandardNormal{1}, cfg), cssm::SamplerError);
}

TEST(Sample, AllDivergentWarmupAborts) {
  struct Broken {
    int dim() const { return 1; }
    double log_density_and_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
      g = Eigen::VectorXd::Constant(1, q[0] == 0.0 ? 0.0 : std::nan(""));
      return 0.0;
    }
  };
  struct Start {
    int dim() const { return 1; }
  };
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iter = 60;
  cfg.n_burnin = 50;
  cfg.adapt_step_size = false;
  cssm::Rng rng(1);
  const Broken target;
  auto z = cssm::make_phase_point(target, Eigen::VectorXd::Zero(1));
  ASSERT_TRUE(z.finite());
  EXPECT_THROW(cssm::run_chain(target, cfg, rng, z), cssm::SamplerError);
}

using testing_support::simulate_gaussian;

TEST(Run, IndependenceRecoversUniformPrior) {
  const auto data = simulate_gaussian(0.5, 1.0, 20, 1);
  SamplerConfig cfg;
  cfg.seed = 12;
  const auto draws = cssm::run(data, cssm::ModelConfig::independence(), cfg);
  const auto tau = draws.tau_lat_all();
  ASSERT_EQ(tau.size(), 3000u);
  double mean = 0.0;
  for (double x : tau) mean += x;
  mean /= tau.size();
  double var = 0.0;
  for (double x : tau) var += (x - mean) * (x - mean);
  var /= tau.size() - 1;
  EXPECT_NEAR(mean, 0.5, 0.05);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.02);
  EXPECT_EQ(draws.loglik_all().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Run, GaussianDrawsAreConsistent) {
  const auto data = simulate_gaussian(0.7, 1.0, 60, 3);
  SamplerConfig cfg;
  cfg.n_iter = 700;
  cfg.n_burnin = 300;
  cfg.seed = 4;
  const auto model = cssm::ModelConfig::gaussian(3.0);
  const auto draws = cssm::run(data, model, cfg);
  EXPECT_EQ(draws.n_draws(), 800);
  EXPECT_EQ(draws.n_obs(), 60);
  const auto tau_lat = draws.tau_lat_all();
  const auto tau_obs = draws.tau_obs_all();
  const auto latent = draws.latent_all();
  const auto loglik = draws.loglik_all();
  for (int r = 0; r < draws.n_draws(); r += 37) {
    ASSERT_GT(tau_lat[r], 0.0);
    ASSERT_LT(tau_lat[r], 1.0);
    EXPECT_DOUBLE_EQ(tau_obs[r], cssm::tau_obs_from_tau_lat(tau_lat[r], 3.0));
    const auto spec = cssm::CopulaSpec::from_tau(cssm::CopulaFamily::gaussian(), tau_obs[r]);
    for (int t = 0; t < 60; t += 7)
      EXPECT_NEAR(loglik(r, t), cssm::log_density(spec, data.u_hat[t], latent(r, t)), 1e-12);
  }
  const auto again = cssm::run(data, model, cfg);
  EXPECT_EQ(again.latent_all(), latent);
  for (const auto& c : draws.chains) EXPECT_FALSE(c.flagged());
}

}  // namespace
