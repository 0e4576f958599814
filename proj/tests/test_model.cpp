#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cssm/model.hpp"

namespace {

using cssm::CopulaFamily;
using cssm::ModelConfig;
using cssm::PseudoSeries;

std::vector<ModelConfig> all_configs() {
  return {ModelConfig::independence(),
          ModelConfig::gaussian(1.0),
          ModelConfig::gaussian(3.0),
          ModelConfig::copula(CopulaFamily::student_t(3), 1.0),
          ModelConfig::copula(CopulaFamily::student_t(6), 6.0),
          ModelConfig::copula(CopulaFamily::gumbel(), 1.0),
          ModelConfig::copula(CopulaFamily::gumbel(), 3.0),
          ModelConfig::copula(CopulaFamily::clayton(), 1.0),
          ModelConfig::copula(CopulaFamily::clayton(), 10.0),
          ModelConfig::copula(CopulaFamily::frank(), 1.0),
          ModelConfig::copula(CopulaFamily::frank(), 6.0)};
}

PseudoSeries random_series(int n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unif(0.02, 0.98);
  std::vector<double> u(n);
  for (auto& x : u) x = unif(gen);
  return PseudoSeries::from_u(u);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(Constraint, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(cssm::tau_obs_from_tau_lat(0.6, 1.0), 0.6);
  EXPECT_NEAR(cssm::tau_obs_from_tau_lat(1.0, 4.0), 1.0, 1e-15);
  const double s = std::sin(std::numbers::pi * 0.7 / 2.0);
  const double expected = 2.0 / std::numbers::pi * std::asin(s * s * s);
  EXPECT_NEAR(expected, 0.5002, 1e-4);
  EXPECT_NEAR(cssm::tau_obs_from_tau_lat(0.7, 3.0), expected, 1e-15);
  EXPECT_THROW(cssm::tau_obs_from_tau_lat(0.5, 0.5), cssm::ModelError);
  EXPECT_THROW(cssm::tau_obs_from_tau_lat(1.5, 2.0), cssm::ModelError);
}

TEST(Constraint, MonotoneInBothArguments) {
  for (int i = 1; i < 100; ++i) {
    const double tau = i / 100.0;
    double prev = 1.0;
    for (double c : {1.0, 1.5, 2.0, 3.0, 6.0, 10.0, 25.0}) {
      const double t = cssm::tau_obs_from_tau_lat(tau, c);
      EXPECT_LE(t, prev);
      EXPECT_LE(t, tau + 1e-15);
      prev = t;
    }
  }
  for (double c : {1.0, 3.0, 6.0, 10.0}) {
    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
      const double t = cssm::tau_obs_from_tau_lat(i / 100.0, c);
      EXPECT_GE(t, prev);
      prev = t;
    }
  }
}

TEST(Constraint, DerivativeMatchesFiniteDifference) {
  const double h = 1e-7;
  for (double c : {1.0, 2.5, 6.0, 10.0}) {
    for (double tau : {0.05, 0.3, 0.6, 0.9, 0.99}) {
      const double fd =
          (cssm::tau_obs_from_tau_lat(tau + h, c) - cssm::tau_obs_from_tau_lat(tau - h, c)) / (2 * h);
      EXPECT_NEAR(cssm::tau_obs_derivative(tau, c), fd, 1e-6 * std::max(1.0, std::abs(fd))) << c << " " << tau;
    }
  }
}

TEST(Oracle, AutocorrelationArithmetic) {
  EXPECT_EQ(cssm::gaussian_oracle_autocorr(0.0, 0.9), 0.0);
  EXPECT_NEAR(cssm::gaussian_oracle_autocorr(std::nextafter(1.0, 0.0), 0.37), 0.37, 1e-15);
  EXPECT_NEAR(cssm::gaussian_oracle_autocorr(0.8, 0.7), 0.448, 1e-15);
}

TEST(PseudoSeries, UniformAndNormalScalesAgree) {
  const auto s = PseudoSeries::from_z({-1.0, 0.0, 0.3, 2.0});
  for (std::size_t t = 0; t < s.size(); ++t) EXPECT_NEAR(s.u_hat[t], cssm::normal::cdf(s.z_hat[t]), 1e-12);
  EXPECT_EQ(s.index.back(), 3);
  EXPECT_THROW(PseudoSeries::from_z({0.5}), cssm::ModelError);
  EXPECT_THROW(PseudoSeries::from_u({0.5, 1.0}), cssm::CopulaDomainError);
}

TEST(LogPosterior, IndependenceIsJacobianOnly) {
  std::mt19937_64 gen(1);
  const auto data = random_series(6, gen);
  Eigen::VectorXd q(7);
  q << 0.3, -1.0, 2.0, 0.0, 0.7, -0.2, 1.1;
  double jac = 0.0;
  Eigen::VectorXd jac_grad(7);
  for (int i = 0; i < 7; ++i) {
    const double s = logistic(q[i]);
    jac += std::log(s) + std::log(1.0 - s);
    jac_grad[i] = 1.0 - 2.0 * s;
  }
  EXPECT_NEAR(cssm::log_posterior(q, data, ModelConfig::independence()), jac, 1e-12);
  const auto g = cssm::grad_log_posterior(q, data, ModelConfig::independence());
  EXPECT_LT((g - jac_grad).cwiseAbs().maxCoeff(), 1e-14);
}

// Direct Gaussian copula density, independent of the library.
double gaussian_copula_log_density(double rho, double u, double v) {
  const double x = cssm::normal::quantile(u), y = cssm::normal::quantile(v);
  const double r2 = 1.0 - rho * rho;
  return -0.5 * std::log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2);
}

TEST(LogPosterior, GaussianTermByTerm) {
  const auto data = PseudoSeries::from_u({0.31, 0.82});
  const double tau_lat = 0.5;
  const std::vector<double> v = {0.44, 0.67};
  const auto q = cssm::to_unconstrained(tau_lat, v);
  const double rho = std::sin(std::numbers::pi * tau_lat / 2.0);
  double expected = gaussian_copula_log_density(rho, 0.31, 0.44) + gaussian_copula_log_density(rho, 0.82, 0.67) +
                    gaussian_copula_log_density(rho, 0.67, 0.44);
  for (double x : {tau_lat, v[0], v[1]}) expected += std::log(x) + std::log(1.0 - x);
  EXPECT_NEAR(cssm::log_posterior(q, data, ModelConfig::gaussian(1.0)), expected, 1e-10);
}

TEST(LogPosterior, VanishesTowardsCorners) {
  const auto data = PseudoSeries::from_u({0.4, 0.6, 0.5});
  for (const auto& config : all_configs()) {
    if (config.is_independence()) continue;
    double prev = std::numeric_limits<double>::infinity();
    for (double x : {2.0, 6.0, 12.0, 20.0}) {
      Eigen::VectorXd q(4);
      q << 0.5, 0.0, x, 0.0;
      const double lp = cssm::log_posterior(q, data, config);
      EXPECT_LT(lp, prev) << config.label();
      prev = lp;
    }
    EXPECT_LT(prev, -15.0) << config.label();
  }
}

TEST(LogPosterior, ExactBoundaryIsNegativeInfinity) {
  const auto data = PseudoSeries::from_u({0.4, 0.6});
  Eigen::VectorXd q(3);
  q << 0.0, 800.0, 0.0;
  EXPECT_EQ(cssm::log_posterior(q, data, ModelConfig::gaussian(1.0)), -std::numeric_limits<double>::infinity());
  q << 0.0, 0.0, std::nan("");
  EXPECT_EQ(cssm::log_posterior(q, data, ModelConfig::gaussian(1.0)), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(cssm::grad_log_posterior(q, data, ModelConfig::gaussian(1.0)), cssm::ModelError);
}

TEST(LogPosterior, SaturatedObservationTauIsNegativeInfinity) {
  const auto data = PseudoSeries::from_u({0.4, 0.6});
  Eigen::VectorXd q(3);
  q << 30.0, 0.0, 0.0;
  for (const auto& config : all_configs()) {
    if (config.is_independence()) continue;
    double lp = 0.0;
    EXPECT_NO_THROW(lp = cssm::log_posterior(q, data, config)) << config.label();
    EXPECT_TRUE(lp < -20.0) << config.label() << " " << lp;
  }
}

// Joint density of the linear Gaussian state space model on the normalized
// scale, minus the standard normal margins, equals the copula posterior.
TEST(LogPosterior, GaussianMatchesMultivariateNormalJointDensity) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  const int n = 4;
  for (int rep = 0; rep < 100; ++rep) {
    const double c = rep % 2 == 0 ? 1.0 : 3.0;
    const double tau_lat = unif(gen);
    std::vector<double> z(n), w(n), v(n);
    for (int t = 0; t < n; ++t) {
      z[t] = norm(gen);
      w[t] = norm(gen);
      v[t] = cssm::normal::cdf(w[t]);
    }
    const auto data = PseudoSeries::from_z(z);
    const double rho_lat = std::sin(std::numbers::pi * tau_lat / 2.0);
    const double rho_obs = std::pow(rho_lat, c);

    Eigen::MatrixXd cov(2 * n, 2 * n);
    for (int s = 0; s < n; ++s) {
      for (int t = 0; t < n; ++t) {
        const double a = std::pow(rho_lat, std::abs(s - t));
        cov(s, t) = s == t ? 1.0 : rho_obs * rho_obs * a;  // Z, Z
        cov(n + s, n + t) = a;                               // W, W
        cov(s, n + t) = rho_obs * a;                         // Z, W
        cov(n + t, s) = rho_obs * a;
      }
    }
    Eigen::VectorXd x(2 * n);
    for (int t = 0; t < n; ++t) {
      x[t] = data.z_hat[t];
      x[n + t] = w[t];
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::VectorXd sol = llt.matrixL().solve(x);
    double log_det = 0.0;
    for (int i = 0; i < 2 * n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double log_joint = -0.5 * sol.squaredNorm() - 0.5 * log_det - n * std::log(2.0 * std::numbers::pi);
    for (int i = 0; i < 2 * n; ++i) log_joint -= cssm::normal::log_pdf(x[i]);
    double jac = 0.0;
    for (double y : {tau_lat, v[0], v[1], v[2], v[3]}) jac += std::log(y) + std::log(1.0 - y);

    const auto q = cssm::to_unconstrained(tau_lat, v);
    EXPECT_NEAR(cssm::log_posterior(q, data, ModelConfig::gaussian(c)), log_joint + jac, 1e-8) << rep;
  }
}

TEST(Gradient, MatchesFiniteDifferencesForEveryFamily) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> norm(0.0, 1.2);
  std::uniform_real_distribution<double> tau_dist(-2.5, 2.2);
  const int n = 5;
  const double h = 1e-5;
  for (const auto& config : all_configs()) {
    for (int rep = 0; rep < 20; ++rep) {
      const auto data = random_series(n, gen);
      Eigen::VectorXd q(n + 1);
      q[0] = tau_dist(gen);
      for (int i = 1; i <= n; ++i) q[i] = norm(gen);
      const auto g = cssm::grad_log_posterior(q, data, config);
      for (int i = 0; i <= n; ++i) {
        Eigen::VectorXd up = q, dn = q;
        up[i] += h;
        dn[i] -= h;
        const double fd =
            (cssm::log_posterior(up, data, config) - cssm::log_posterior(dn, data, config)) / (2 * h);
        EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << config.label() << " rep=" << rep << " i=" << i;
      }
    }
  }
}

TEST(Posterior, PointwiseLoglikSumsToObservationTerms) {
  std::mt19937_64 gen(9);
  const auto data = random_series(5, gen);
  const auto config = ModelConfig::copula(CopulaFamily::gumbel(), 3.0);
  const cssm::Posterior post(data, config);
  const std::vector<double> v = {0.2, 0.4, 0.5, 0.7, 0.9};
  const auto ll = post.pointwise_loglik(0.6, v.data());
  const auto spec = cssm::CopulaSpec::from_tau(CopulaFamily::gumbel(), cssm::tau_obs_from_tau_lat(0.6, 3.0));
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(ll[t], cssm::log_density(spec, data.u_hat[t], v[t]), 1e-13);
}

TEST(ModelConfig, Labels) {
  EXPECT_EQ(ModelConfig::copula(CopulaFamily::gumbel(), 3.0).label(), "gumbel_c3");
  EXPECT_EQ(ModelConfig::copula(CopulaFamily::student_t(6), 10.0).label(), "t6_c10");
  EXPECT_EQ(ModelConfig::independence().label(), "indep");
  EXPECT_THROW(ModelConfig::gaussian(0.9), cssm::ModelError);
}

}  // namespace
