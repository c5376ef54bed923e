#pragma once

#include <Eigen/Dense>
#include <random>
#include <stdexcept>

#include "incvol/income_process.hpp"
#include "incvol/panel.hpp"
#include "incvol/rng.hpp"

namespace incvol {

struct RegressionData {
  Eigen::VectorXd y_star;
  Eigen::MatrixXd X;  // columns: w_{t-2}, w_{t-1}, w_t, e_{t-2}, e_{t-1}, e_t
};

// Stacks the dynamic linear model into a plain regression: one row per
// person-year with a full two-lag history; the response nets out the
// initial level and all shocks that have fully entered the permanent
// component.
inline RegressionData build_regression(const PanelData& panel,
                                       const ShockPanel& shocks) {
  shocks.check_aligned(panel);
  std::size_t rows = 0;
  for (const auto& ind : panel.individuals)
    rows += ind.obs.size() > 2 ? ind.obs.size() - 2 : 0;
  if (rows < 7)
    throw std::invalid_argument(
        "build_regression: need at least 7 rows to identify 6 coefficients "
        "plus a variance");

  RegressionData out;
  out.y_star.resize(static_cast<Eigen::Index>(rows));
  out.X.resize(static_cast<Eigen::Index>(rows), 6);

  Eigen::Index r = 0;
  for (std::size_t i = 0; i < panel.individuals.size(); ++i) {
    const auto& ind = panel.individuals[i];
    const auto& sh = shocks.shocks[i];
    const int T = ind.n_years();
    for (int t = 2; t < T; ++t) {
      double level = shocks.p0[i];
      for (int k = 0; k <= t - kShockLags; ++k)
        level += sh[static_cast<std::size_t>(k)].omega;
      out.y_star(r) = ind.obs[static_cast<std::size_t>(t)].y - level;
      out.X(r, 0) = sh[static_cast<std::size_t>(t - 2)].omega;
      out.X(r, 1) = sh[static_cast<std::size_t>(t - 1)].omega;
      out.X(r, 2) = sh[static_cast<std::size_t>(t)].omega;
      out.X(r, 3) = sh[static_cast<std::size_t>(t - 2)].epsilon;
      out.X(r, 4) = sh[static_cast<std::size_t>(t - 1)].epsilon;
      out.X(r, 5) = sh[static_cast<std::size_t>(t)].epsilon;
      ++r;
    }
  }
  return out;
}

inline constexpr double kGammaSqFloor = 1e-12;

// Conjugate draw of the pass-through coefficients and noise variance:
// gamma^2 ~ Inv-Gamma(n/2 + prior_shape, RSS/2 + prior_scale) at the
// least-squares solution, then beta ~ Normal(beta_hat, gamma^2 (X'X)^{-1}),
// then the transitory weights are renormalized to sum to one. A zero RSS
// (noiseless data) degenerates to beta_hat with gamma^2 at the floor.
// When `fallback` is given, the draw is restricted to theta_in_support
// (see income_process.hpp): the conjugate density is proposed repeatedly
// and the first in-support draw is returned. On the support the target is
// proportional to the proposal, so this is rejection sampling from the
// truncated conditional; if no proposal lands in support the previous
// coefficients are kept, which is the reject branch of the equivalent
// independence-Metropolis step and leaves the target invariant.
// When `fixed_gamma_sq` is given, gamma^2 is not drawn here at all: the
// supplied value is used for the coefficient covariance and returned
// unchanged (the full sampler then updates it by a collapsed move; see
// gibbs_iterate).
// The default prior (shape and scale zero) is the scale-invariant
// 1/gamma^2, but inside the full sampler a proper prior is required: the
// shock panel has more free coordinates than there are observations, so
// under 1/gamma^2 the joint posterior is improper at gamma^2 = 0 (shocks
// interpolate y, RSS collapses, and the chain absorbs there).
inline IncomeCoefficients step1_sample_coefficients(
    const RegressionData& reg, std::mt19937_64& rng,
    double gamma_prior_shape = 0.0, double gamma_prior_scale = 0.0,
    const IncomeCoefficients* fallback = nullptr,
    const double* fixed_gamma_sq = nullptr) {
  const Eigen::Index n = reg.y_star.size();
  Eigen::Matrix<double, 6, 6> xtx = reg.X.transpose() * reg.X;
  Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(xtx);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("step1: X'X is not positive definite");
  Eigen::Matrix<double, 6, 1> beta_hat =
      llt.solve(reg.X.transpose() * reg.y_star);
  const double rss = (reg.y_star - reg.X * beta_hat).squaredNorm();

  const int max_tries = fallback ? 100 : 1;
  std::normal_distribution<double> std_normal(0.0, 1.0);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    double gamma_sq;
    Eigen::Matrix<double, 6, 1> beta;
    if (fixed_gamma_sq == nullptr && rss <= 0.0 && gamma_prior_scale <= 0.0) {
      gamma_sq = kGammaSqFloor;
      beta = beta_hat;
    } else {
      gamma_sq =
          fixed_gamma_sq
              ? *fixed_gamma_sq
              : draw_inverse_gamma(
                    static_cast<double>(n) / 2.0 + gamma_prior_shape,
                    rss / 2.0 + gamma_prior_scale, rng);
      Eigen::Matrix<double, 6, 1> z;
      for (int k = 0; k < 6; ++k) z(k) = std_normal(rng);
      // Cov(beta) = gamma^2 (X'X)^{-1} = gamma^2 L^{-T} L^{-1}.
      beta = beta_hat + std::sqrt(gamma_sq) * llt.matrixU().solve(z);
    }

    IncomeCoefficients c;
    c.theta_omega = {beta(2), beta(1), beta(0)};
    c.theta_epsilon = {beta(5), beta(4), beta(3)};
    c.gamma_sq = gamma_sq;
    c.normalize_epsilon();
    if (!fallback || theta_in_support(c)) return c;
  }
  return *fallback;
}

}  // namespace incvol
