#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "incvol/kalman.hpp"

using namespace incvol;

namespace {

// Independent oracle: the T=3 model is jointly Gaussian in
// s = (p0, w0, w1, w2, e0, e1, e2) with y = A s + noise, so the exact
// conditional follows from the precision form
//   Cov = (D^{-1} + A'A/gamma^2)^{-1},  mean = Cov A' y / gamma^2.
struct JointOracle {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

JointOracle joint_normal_oracle(const std::vector<double>& y,
                                const std::vector<SigmaPair>& sigma,
                                const IncomeCoefficients& c,
                                double diffuse_var) {
  const int T = static_cast<int>(y.size());
  const int p = 1 + 2 * T;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(T, p);
  for (int t = 0; t < T; ++t) {
    a(t, 0) = 1.0;
    for (int k = 0; k <= t - 3; ++k) a(t, 1 + k) = 1.0;
    for (int k = std::max(0, t - 2); k <= t; ++k) {
      a(t, 1 + k) = c.theta_omega[static_cast<std::size_t>(t - k)];
      a(t, 1 + T + k) = c.theta_epsilon[static_cast<std::size_t>(t - k)];
    }
  }
  Eigen::VectorXd prior_var(p);
  prior_var(0) = diffuse_var;
  for (int t = 0; t < T; ++t) {
    prior_var(1 + t) = sigma[static_cast<std::size_t>(t)].omega_sq;
    prior_var(1 + T + t) = sigma[static_cast<std::size_t>(t)].epsilon_sq;
  }
  Eigen::MatrixXd prec = a.transpose() * a / c.gamma_sq;
  for (int k = 0; k < p; ++k) prec(k, k) += 1.0 / prior_var(k);
  JointOracle out;
  out.cov = prec.llt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd yv(T);
  for (int t = 0; t < T; ++t) yv(t) = y[static_cast<std::size_t>(t)];
  out.mean = out.cov * a.transpose() * yv / c.gamma_sq;
  return out;
}

}  // namespace

TEST_CASE("ffbs matches the closed-form Gaussian conditional (T=3)") {
  IncomeCoefficients c;
  c.theta_omega = {0.4, 0.9, 1.1};
  c.theta_epsilon = {0.7, 0.2, 0.1};
  c.gamma_sq = 0.05;
  const std::vector<double> y = {0.8, -0.3, 0.5};
  const std::vector<SigmaPair> sigma = {{0.3, 0.6}, {0.3, 0.6}, {0.2, 0.9}};
  const double diffuse = 25.0;  // keep the oracle well conditioned

  auto oracle = joint_normal_oracle(y, sigma, c, diffuse);

  const int n_draws = 50000;
  const int p = 7;
  Eigen::MatrixXd draws(n_draws, p);
  auto rng = make_rng(77);
  for (int k = 0; k < n_draws; ++k) {
    auto d = ffbs_sample_individual(y, sigma, c, rng, diffuse);
    draws(k, 0) = d.p0;
    for (int t = 0; t < 3; ++t) {
      draws(k, 1 + t) = d.shocks[static_cast<std::size_t>(t)].omega;
      draws(k, 4 + t) = d.shocks[static_cast<std::size_t>(t)].epsilon;
    }
  }

  Eigen::VectorXd mean = draws.colwise().mean();
  Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / (n_draws - 1);

  for (int i = 0; i < p; ++i) {
    double se = std::sqrt(oracle.cov(i, i) / n_draws);
    CHECK(std::fabs(mean(i) - oracle.mean(i)) < 3.0 * se);
  }
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      double se = std::sqrt((oracle.cov(i, i) * oracle.cov(j, j) +
                             oracle.cov(i, j) * oracle.cov(i, j)) /
                            n_draws);
      CHECK(std::fabs(cov(i, j) - oracle.cov(i, j)) < 3.0 * se);
    }
}

TEST_CASE("ffbs with huge noise reverts to the shock prior (T=1)") {
  IncomeCoefficients c;
  c.gamma_sq = 1e8;
  const std::vector<double> y = {0.4};
  const std::vector<SigmaPair> sigma = {{0.5, 2.0}};
  auto rng = make_rng(5);
  const int n = 40000;
  double sw = 0.0, sw2 = 0.0, se = 0.0, se2 = 0.0;
  for (int k = 0; k < n; ++k) {
    auto d = ffbs_sample_individual(y, sigma, c, rng);
    sw += d.shocks[0].omega;
    sw2 += d.shocks[0].omega * d.shocks[0].omega;
    se += d.shocks[0].epsilon;
    se2 += d.shocks[0].epsilon * d.shocks[0].epsilon;
  }
  CHECK(std::fabs(sw / n) < 3.0 * std::sqrt(0.5 / n));
  CHECK(sw2 / n == doctest::Approx(0.5).epsilon(0.05));
  CHECK(std::fabs(se / n) < 3.0 * std::sqrt(2.0 / n));
  CHECK(se2 / n == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("ffbs degenerate limit recovers first differences") {
  // Random walk observed without noise: gamma^2 = 0, theta_eps = (1,0,0)
  // with vanishing transitory variance forces w_t = y_t - y_{t-1}.
  IncomeCoefficients c;
  c.theta_omega = {1.0, 1.0, 1.0};
  c.gamma_sq = 0.0;
  const std::vector<double> y = {0.2, 0.7, 0.4, 0.9, 1.3};
  std::vector<SigmaPair> sigma(5, {0.5, 1e-10});
  auto rng = make_rng(8);
  for (int k = 0; k < 20; ++k) {
    auto d = ffbs_sample_individual(y, sigma, c, rng);
    for (int t = 1; t < 5; ++t)
      CHECK(d.shocks[static_cast<std::size_t>(t)].omega ==
            doctest::Approx(y[static_cast<std::size_t>(t)] -
                            y[static_cast<std::size_t>(t - 1)])
                .epsilon(1e-3));
  }
}

TEST_CASE("ffbs rejects nonpositive variances and reports the year") {
  IncomeCoefficients c;
  c.gamma_sq = 0.1;
  std::vector<SigmaPair> sigma = {{0.5, 1.0}, {0.5, 0.0}, {0.5, 1.0}};
  auto rng = make_rng(1);
  CHECK_THROWS_WITH_AS(
      ffbs_sample_individual({0.1, 0.2, 0.3}, sigma, c, rng),
      doctest::Contains("index 1"), std::domain_error);
}

TEST_CASE("ffbs deterministic given the rng stream") {
  IncomeCoefficients c;
  c.theta_omega = {0.4, 0.9, 1.0};
  c.theta_epsilon = {0.8, 0.15, 0.05};
  c.gamma_sq = 0.02;
  std::vector<double> y = {0.1, -0.2, 0.3, 0.5, 0.0, 0.4, 0.6};
  std::vector<SigmaPair> sigma(7, {0.2, 0.4});
  auto r1 = make_rng(123), r2 = make_rng(123);
  auto a = ffbs_sample_individual(y, sigma, c, r1);
  auto b = ffbs_sample_individual(y, sigma, c, r2);
  CHECK(a.p0 == b.p0);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK(a.shocks[t].omega == b.shocks[t].omega);
    CHECK(a.shocks[t].epsilon == b.shocks[t].epsilon);
  }
}
