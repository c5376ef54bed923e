#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "incvol/income_process.hpp"
#include "incvol/panel.hpp"

namespace incvol {

// Default prior variance of the initial permanent level p_{i,0}.
inline constexpr double kDiffuseLevelVar = 1e7;

namespace detail {

using Mat7 = Eigen::Matrix<double, 7, 7>;
using Vec7 = Eigen::Matrix<double, 7, 1>;

// Draw from N(mean, cov) where cov may be singular (exact lags carry zero
// variance). Eigen-decomposition square root with negative eigenvalues
// clamped to zero.
inline Vec7 draw_singular_normal(const Vec7& mean, const Mat7& cov,
                                 std::mt19937_64& rng) {
  Eigen::SelfAdjointEigenSolver<Mat7> es(cov);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  Vec7 z;
  for (int k = 0; k < 7; ++k) z(k) = std_normal(rng);
  Vec7 ev = es.eigenvalues();
  for (int k = 0; k < 7; ++k) ev(k) = ev(k) > 0.0 ? std::sqrt(ev(k)) : 0.0;
  return mean + es.eigenvectors() * ev.asDiagonal() * z;
}

}  // namespace detail

// Log marginal likelihood log p(y | coefficients, sigma^2, gamma^2) of one
// individual by the prediction-error decomposition of the same state-space
// model the sampler uses (shocks integrated out).
inline double state_space_loglik(const std::vector<double>& y,
                                 const std::vector<SigmaPair>& sigma,
                                 const IncomeCoefficients& coeffs,
                                 double diffuse_var = kDiffuseLevelVar) {
  using detail::Mat7;
  using detail::Vec7;
  const int T = static_cast<int>(y.size());
  if (T < 1 || sigma.size() != y.size())
    throw std::invalid_argument("loglik: empty series or unaligned variances");

  Vec7 h;
  h << 1.0, coeffs.theta_omega[0], coeffs.theta_omega[1], coeffs.theta_omega[2],
      coeffs.theta_epsilon[0], coeffs.theta_epsilon[1], coeffs.theta_epsilon[2];
  Mat7 F = Mat7::Zero();
  F(0, 0) = 1.0;
  F(0, 3) = 1.0;
  F(2, 1) = 1.0;
  F(3, 2) = 1.0;
  F(5, 4) = 1.0;
  F(6, 5) = 1.0;

  Vec7 m = Vec7::Zero();
  Mat7 P = Mat7::Zero();
  P(0, 0) = diffuse_var;
  P(1, 1) = sigma[0].omega_sq;
  P(4, 4) = sigma[0].epsilon_sq;

  double ll = 0.0;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      m = F * m;
      P = F * P * F.transpose();
      P(1, 1) += sigma[static_cast<std::size_t>(t)].omega_sq;
      P(4, 4) += sigma[static_cast<std::size_t>(t)].epsilon_sq;
    }
    const double s = h.dot(P * h) + coeffs.gamma_sq;
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::runtime_error("loglik: degenerate innovation variance");
    const double v = y[static_cast<std::size_t>(t)] - h.dot(m);
    ll += -0.5 * (std::log(2.0 * std::acos(-1.0) * s) + v * v / s);
    const Vec7 gain = P * h / s;
    m += gain * v;
    P -= gain * s * gain.transpose();
    P = 0.5 * (P + P.transpose()).eval();
  }
  return ll;
}

// Exact joint draw of one individual's shock path from
// p(omega, epsilon | y, coefficients, sigma^2, gamma^2) in state-space
// form. The 7-dim state stacks the cumulative permanent level (initialized
// diffuse, absorbing p_{i,0}) and the three most recent permanent and
// transitory shocks. A forward Kalman filter is followed by backward
// sampling; because the transition is partly deterministic, each backward
// step conditions the filtered Gaussian on the exact linear constraints
// the sampled successor state imposes.
struct FfbsDraw {
  double p0 = 0.0;
  std::vector<Shocks> shocks;
};

inline FfbsDraw ffbs_sample_individual(const std::vector<double>& y,
                                       const std::vector<SigmaPair>& sigma,
                                       const IncomeCoefficients& coeffs,
                                       std::mt19937_64& rng,
                                       double diffuse_var = kDiffuseLevelVar) {
  using detail::Mat7;
  using detail::Vec7;
  const int T = static_cast<int>(y.size());
  if (T < 1 || sigma.size() != y.size())
    throw std::invalid_argument("ffbs: empty series or unaligned variances");
  for (int t = 0; t < T; ++t)
    if (!(sigma[static_cast<std::size_t>(t)].omega_sq > 0.0) ||
        !(sigma[static_cast<std::size_t>(t)].epsilon_sq > 0.0))
      throw std::domain_error("ffbs: nonpositive variance at year index " +
                              std::to_string(t));

  // State: (P_t, w_t, w_{t-1}, w_{t-2}, e_t, e_{t-1}, e_{t-2}) where
  // P_t = p0 + sum of shocks that have fully entered the level.
  Vec7 h;
  h << 1.0, coeffs.theta_omega[0], coeffs.theta_omega[1], coeffs.theta_omega[2],
      coeffs.theta_epsilon[0], coeffs.theta_epsilon[1], coeffs.theta_epsilon[2];

  Mat7 F = Mat7::Zero();
  F(0, 0) = 1.0;
  F(0, 3) = 1.0;  // the lag-2 permanent shock graduates into the level
  F(2, 1) = 1.0;
  F(3, 2) = 1.0;
  F(5, 4) = 1.0;
  F(6, 5) = 1.0;

  std::vector<Vec7> filt_mean(static_cast<std::size_t>(T));
  std::vector<Mat7> filt_cov(static_cast<std::size_t>(T));

  Vec7 m = Vec7::Zero();
  Mat7 P = Mat7::Zero();
  P(0, 0) = diffuse_var;
  P(1, 1) = sigma[0].omega_sq;
  P(4, 4) = sigma[0].epsilon_sq;

  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      m = F * m;
      P = F * P * F.transpose();
      P(1, 1) += sigma[static_cast<std::size_t>(t)].omega_sq;
      P(4, 4) += sigma[static_cast<std::size_t>(t)].epsilon_sq;
    }
    const double s = h.dot(P * h) + coeffs.gamma_sq;
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::runtime_error("ffbs: degenerate innovation variance at year "
                               "index " + std::to_string(t));
    const Vec7 gain = P * h / s;
    m += gain * (y[static_cast<std::size_t>(t)] - h.dot(m));
    P -= gain * s * gain.transpose();
    P = 0.5 * (P + P.transpose()).eval();
    if (!P.allFinite())
      throw std::runtime_error("ffbs: non-finite filter covariance at year "
                               "index " + std::to_string(t));
    filt_mean[static_cast<std::size_t>(t)] = m;
    filt_cov[static_cast<std::size_t>(t)] = P;
  }

  // Backward pass. Knowing x_{t+1} pins five linear combinations of x_t:
  // its four lagged shocks and the level identity P_t + w_{t-2} = P_{t+1}.
  std::vector<Vec7> x(static_cast<std::size_t>(T));
  x[static_cast<std::size_t>(T - 1)] = detail::draw_singular_normal(
      filt_mean[static_cast<std::size_t>(T - 1)],
      filt_cov[static_cast<std::size_t>(T - 1)], rng);

  Eigen::Matrix<double, 5, 7> C = Eigen::Matrix<double, 5, 7>::Zero();
  C(0, 1) = 1.0;
  C(1, 2) = 1.0;
  C(2, 4) = 1.0;
  C(3, 5) = 1.0;
  C(4, 0) = 1.0;
  C(4, 3) = 1.0;

  for (int t = T - 2; t >= 0; --t) {
    const Vec7& next = x[static_cast<std::size_t>(t + 1)];
    Eigen::Matrix<double, 5, 1> d;
    d << next(2), next(3), next(5), next(6), next(0);

    const Vec7& fm = filt_mean[static_cast<std::size_t>(t)];
    const Mat7& fP = filt_cov[static_cast<std::size_t>(t)];
    Eigen::Matrix<double, 5, 5> gram = C * fP * C.transpose();
    // Pseudo-inverse: constraints can be exactly degenerate (zero-variance
    // lags at the start of the series, gamma^2 == 0 cases).
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> es(gram);
    Eigen::Matrix<double, 5, 1> inv_ev;
    const double tol =
        std::max(1e-13 * std::max(es.eigenvalues().maxCoeff(), 0.0), 1e-300);
    for (int k = 0; k < 5; ++k)
      inv_ev(k) = es.eigenvalues()(k) > tol ? 1.0 / es.eigenvalues()(k) : 0.0;
    Eigen::Matrix<double, 5, 5> gram_pinv = es.eigenvectors() *
                                            inv_ev.asDiagonal() *
                                            es.eigenvectors().transpose();
    Eigen::Matrix<double, 7, 5> gainc = fP * C.transpose() * gram_pinv;
    Vec7 cm = fm + gainc * (d - C * fm);
    Mat7 cP = fP - gainc * C * fP;
    cP = 0.5 * (cP + cP.transpose()).eval();
    x[static_cast<std::size_t>(t)] = detail::draw_singular_normal(cm, cP, rng);
  }

  FfbsDraw out;
  out.shocks.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    out.shocks[static_cast<std::size_t>(t)].omega =
        x[static_cast<std::size_t>(t)](1);
    out.shocks[static_cast<std::size_t>(t)].epsilon =
        x[static_cast<std::size_t>(t)](4);
  }
  out.p0 = x[0](0);
  return out;
}

}  // namespace incvol
