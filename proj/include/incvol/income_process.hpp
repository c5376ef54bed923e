#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "incvol/panel.hpp"
#include "incvol/rng.hpp"

namespace incvol {

inline constexpr int kShockLags = 3;  // q_omega == q_epsilon == 3

// Pass-through weights of permanent/transitory shocks into income, by lag
// (index 0 = contemporaneous), plus the measurement-noise variance.
// Transitory weights sum to one.
struct IncomeCoefficients {
  std::array<double, 3> theta_omega{1.0, 1.0, 1.0};
  std::array<double, 3> theta_epsilon{1.0, 0.0, 0.0};
  double gamma_sq = 0.0;

  void validate() const {
    double s = theta_epsilon[0] + theta_epsilon[1] + theta_epsilon[2];
    if (std::fabs(s - 1.0) > 1e-12)
      throw std::invalid_argument("transitory weights must sum to 1, got " +
                                  std::to_string(s));
    if (!(gamma_sq >= 0.0) || !std::isfinite(gamma_sq))
      throw std::invalid_argument("gamma_sq must be nonnegative");
  }

  void normalize_epsilon() {
    double s = theta_epsilon[0] + theta_epsilon[1] + theta_epsilon[2];
    if (s == 0.0) throw std::domain_error("transitory weights sum to zero");
    for (double& v : theta_epsilon) v /= s;
  }
};

// Identification restriction on the pass-through weights. The moving-
// average blocks admit root-flip ghosts: flipping a lag-polynomial root
// across the unit circle is an all-pass transform, so it preserves every
// within-sample autocovariance (and, because the weights are normalized
// at frequency zero, even the shock variances) and differs from the
// original only at the sample edges. The data therefore cannot separate
// the economically meaningful mode from its mirror images. Restricting
// the prior support to monotone phase-in of permanent shocks
// (0 <= w0 <= w1 <= w2 <= 1) and monotone fade-out of transitory shocks
// (e0 >= e1 >= e2 >= 0) removes the ghosts: the mirrors and shifts
// violate monotonicity or positivity.
inline bool theta_in_support(const IncomeCoefficients& c) {
  const auto& w = c.theta_omega;
  const auto& e = c.theta_epsilon;
  return 0.0 <= w[0] && w[0] <= w[1] && w[1] <= w[2] && w[2] <= 1.0 &&
         e[0] >= e[1] && e[1] >= e[2] && e[2] >= 0.0;
}

// Likelihood of a realized shock pair under a candidate variance pair:
// (s_w s_e)^(-1/2) * exp(-w^2/(2 s_w) - e^2/(2 s_e)). Proportional to the
// product of two normal densities; the 1/(2*pi) constant is dropped.
inline double shock_likelihood(double omega, double epsilon, SigmaPair s) {
  if (!(s.omega_sq > 0.0) || !(s.epsilon_sq > 0.0))
    throw std::domain_error("shock_likelihood: variances must be positive");
  return 1.0 / std::sqrt(s.omega_sq * s.epsilon_sq) *
         std::exp(-0.5 * omega * omega / s.omega_sq -
                  0.5 * epsilon * epsilon / s.epsilon_sq);
}

inline double log_shock_likelihood(double omega, double epsilon, SigmaPair s) {
  if (!(s.omega_sq > 0.0) || !(s.epsilon_sq > 0.0))
    throw std::domain_error("shock_likelihood: variances must be positive");
  return -0.5 * (std::log(s.omega_sq) + std::log(s.epsilon_sq)) -
         0.5 * omega * omega / s.omega_sq -
         0.5 * epsilon * epsilon / s.epsilon_sq;
}

enum class ShockKind { permanent, transitory };

// Path of income following a unit-time shock: permanent shocks phase in
// over three periods and then stay at full weight forever; transitory
// shocks fade to zero after three periods.
inline std::vector<double> impulse_response(const IncomeCoefficients& c,
                                            ShockKind kind, double magnitude,
                                            int horizon) {
  c.validate();
  if (horizon < kShockLags)
    throw std::invalid_argument("impulse_response: horizon must be >= 3");
  std::vector<double> path(static_cast<std::size_t>(horizon), 0.0);
  for (int k = 0; k < horizon; ++k) {
    double w;
    if (kind == ShockKind::permanent)
      w = (k < kShockLags) ? c.theta_omega[static_cast<std::size_t>(k)] : 1.0;
    else
      w = (k < kShockLags) ? c.theta_epsilon[static_cast<std::size_t>(k)] : 0.0;
    path[static_cast<std::size_t>(k)] = w * magnitude;
  }
  return path;
}

// Excess log income at local index t from shocks by the dynamic linear
// model: shocks older than the lag window enter the permanent level with
// weight one; pre-sample shocks are zero.
inline double income_from_shocks(const IncomeCoefficients& c, double p0,
                                 const std::vector<Shocks>& s, int t,
                                 double noise = 0.0) {
  double y = p0;
  for (int k = 0; k <= t - kShockLags; ++k)
    y += s[static_cast<std::size_t>(k)].omega;
  for (int k = std::max(0, t - kShockLags + 1); k <= t; ++k) {
    const auto lag = static_cast<std::size_t>(t - k);
    y += c.theta_omega[lag] * s[static_cast<std::size_t>(k)].omega;
    y += c.theta_epsilon[lag] * s[static_cast<std::size_t>(k)].epsilon;
  }
  return y + noise;
}

struct SimOptions {
  double p0_mean = 0.0;
  double p0_sd = 0.0;
  int first_year = 1970;
};

struct SimulatedPanel {
  PanelData panel;
  ShockPanel truth;
};

// Forward-runs the income process: draws normal shocks with the per
// person-year variances in `vol_truth`, adds measurement noise of
// variance gamma_sq. Deterministic given the seed.
inline SimulatedPanel simulate_panel(const IncomeCoefficients& coeffs,
                                     const SigmaPanel& vol_truth,
                                     std::uint64_t seed,
                                     const SimOptions& opts = {}) {
  coeffs.validate();
  SimulatedPanel out;
  out.panel.individuals.resize(vol_truth.size());
  out.truth.p0.resize(vol_truth.size());
  out.truth.shocks.resize(vol_truth.size());

  for (std::size_t i = 0; i < vol_truth.size(); ++i) {
    const auto& sig = vol_truth[i];
    const int T = static_cast<int>(sig.size());
    if (T < 7)
      throw std::invalid_argument(
          "simulate_panel: need at least 7 years per individual");
    auto rng = make_rng(seed, {1u, i});
    std::normal_distribution<double> std_normal(0.0, 1.0);

    double p0 = opts.p0_mean;
    if (opts.p0_sd > 0.0) p0 += opts.p0_sd * std_normal(rng);
    out.truth.p0[i] = p0;

    auto& shocks = out.truth.shocks[i];
    shocks.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto& s = sig[static_cast<std::size_t>(t)];
      if (s.omega_sq < 0.0 || s.epsilon_sq < 0.0)
        throw std::invalid_argument("simulate_panel: negative variance");
      auto& sh = shocks[static_cast<std::size_t>(t)];
      sh.omega = s.omega_sq > 0.0 ? std::sqrt(s.omega_sq) * std_normal(rng) : 0.0;
      sh.epsilon =
          s.epsilon_sq > 0.0 ? std::sqrt(s.epsilon_sq) * std_normal(rng) : 0.0;
    }

    auto& ind = out.panel.individuals[i];
    ind.first_year = opts.first_year;
    ind.obs.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      double noise =
          coeffs.gamma_sq > 0.0 ? std::sqrt(coeffs.gamma_sq) * std_normal(rng)
                                : 0.0;
      ind.obs[static_cast<std::size_t>(t)].y =
          income_from_shocks(coeffs, p0, shocks, t, noise);
    }
  }
  return out;
}

}  // namespace incvol
