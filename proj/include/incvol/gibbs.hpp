#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "incvol/kalman.hpp"
#include "incvol/mhdp.hpp"
#include "incvol/regression.hpp"

namespace incvol {

struct GibbsState {
  IncomeCoefficients coeffs;
  ShockPanel shocks;
  VolatilityState vol;
  int iteration = 0;
};

struct ChainOptions {
  int n_iter = 10000;
  int burn_in = 5000;
  int thin = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  bool debug_validate = false;  // check VolatilityState invariants per sweep
  double diffuse_var = kDiffuseLevelVar;
  // Iterations at the start of burn-in during which the pass-through
  // weights stay frozen at their initial values while the shock paths and
  // variance clusters adapt. From a cold start the variance panel is only
  // roughly right, and under a miscredited panel the weight likelihood
  // prefers a delayed alias of the true weights; letting the clustering
  // settle first removes that pull. Applies to burn-in only, so the
  // post-burn-in kernel (and hence the target) is unchanged.
  int warmup_freeze = 300;
};

// Retained slice of one iteration: coefficients plus the per person-year
// variance pairs. Full shock panels are deliberately not kept.
struct ChainSnapshot {
  int iteration = 0;
  IncomeCoefficients coeffs;
  SigmaPanel sigma;
};

namespace detail {

inline SigmaPanel sigma_panel_of(const VolatilityState& vol) {
  SigmaPanel out(vol.assignment.size());
  for (std::size_t i = 0; i < vol.assignment.size(); ++i) {
    out[i].resize(vol.assignment[i].size());
    for (std::size_t t = 0; t < vol.assignment[i].size(); ++t)
      out[i][t] = vol.sigma_at(static_cast<int>(i), static_cast<int>(t));
  }
  return out;
}

// Runs fn(i) for i in [0, n) over `threads` workers, contiguous blocks.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nw));
  for (int w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += nw) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// One full sweep: Step 1 samples the pass-through coefficients, Step 2
// redraws every individual's shock path (parallel across individuals;
// each individual's RNG stream is derived from (seed, iteration, i), so
// thread count does not change results), Step 3 resamples every
// person-year's variance pair sequentially.
inline void gibbs_iterate(GibbsState& state, const PanelData& panel,
                          const HyperParams& hypers, const ChainOptions& opts) {
  const int iter = state.iteration;
  const auto it = static_cast<std::uint64_t>(iter);
  const bool theta_frozen =
      iter < std::min(opts.warmup_freeze, opts.burn_in);

  // Step 1
  if (!theta_frozen) {
    auto rng = make_rng(opts.seed, {10u, it});
    // gamma^2 is held fixed here and updated by the collapsed move below:
    // the conjugate draw gamma^2 | shocks ~ RSS/n forms a funnel with
    // step 2 (interpolating shocks shrink RSS, a small gamma^2 makes the
    // next shock draw interpolate harder), which the chain can take
    // thousands of sweeps to leave even though the marginalized posterior
    // of gamma^2 sits at the panel's white-noise floor.
    state.coeffs = step1_sample_coefficients(
        build_regression(panel, state.shocks), rng, hypers.gamma_prior_shape,
        hypers.gamma_prior_scale, &state.coeffs, &state.coeffs.gamma_sq);
  }

  const int N = panel.n_individuals();

  // Step 1b: random-walk Metropolis on the pass-through weights under the
  // marginal likelihood p(y | theta, sigma^2, gamma^2) from the filter's
  // prediction-error decomposition (shocks integrated out). The conjugate
  // step-1 draw conditions on the current shock path, which ties theta to
  // it and mixes very slowly from a cold start; this collapsed move lets
  // theta travel on its own. Step 2 redraws the shocks immediately
  // afterwards, so the joint target is preserved (partially collapsed
  // Gibbs). Parameterization: (theta_w0..2, theta_e1, theta_e2) free with
  // theta_e0 = 1 - theta_e1 - theta_e2, keeping the sum-to-one constraint
  // exact; the prior is flat on theta_in_support (proposals outside are
  // rejected), so the acceptance ratio is the likelihood ratio.
  {
    auto rng = make_rng(opts.seed, {15u, it});
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto total_loglik = [&](const IncomeCoefficients& c) {
      std::vector<double> part(static_cast<std::size_t>(N));
      detail::parallel_for(N, opts.threads, [&](int i) {
        const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
        std::vector<double> y(ind.obs.size());
        std::vector<SigmaPair> sig(ind.obs.size());
        for (std::size_t t = 0; t < ind.obs.size(); ++t) {
          y[t] = ind.obs[t].y;
          sig[t] = state.vol.sigma_at(i, static_cast<int>(t));
        }
        part[static_cast<std::size_t>(i)] =
            state_space_loglik(y, sig, c, opts.diffuse_var);
      });
      double s = 0.0;
      for (double v : part) s += v;
      return s;
    };
    constexpr int kThetaMhProposals = 3;
    constexpr double kThetaMhStep = 0.02;
    const int n_theta_proposals = theta_frozen ? 0 : kThetaMhProposals;
    double cur_ll = total_loglik(state.coeffs);
    for (int k = 0; k < n_theta_proposals; ++k) {
      IncomeCoefficients prop = state.coeffs;
      for (auto& v : prop.theta_omega) v += kThetaMhStep * std_normal(rng);
      prop.theta_epsilon[1] += kThetaMhStep * std_normal(rng);
      prop.theta_epsilon[2] += kThetaMhStep * std_normal(rng);
      prop.theta_epsilon[0] =
          1.0 - prop.theta_epsilon[1] - prop.theta_epsilon[2];
      if (!theta_in_support(prop)) continue;
      const double prop_ll = total_loglik(prop);
      if (std::log(unif(rng)) < prop_ll - cur_ll) {
        state.coeffs = prop;
        cur_ll = prop_ll;
      }
    }
    // Collapsed gamma^2 move: log-scale random walk accepted under the
    // same marginal likelihood plus the InvGamma prior (the log g^2 term
    // is the Jacobian of the log parameterization).
    constexpr int kGammaMhProposals = 3;
    constexpr double kGammaMhStep = 0.15;
    const auto log_gamma_target = [&](double gsq, double ll) {
      return ll - (hypers.gamma_prior_shape + 1.0) * std::log(gsq) -
             hypers.gamma_prior_scale / gsq + std::log(gsq);
    };
    for (int k = 0; k < kGammaMhProposals; ++k) {
      IncomeCoefficients prop = state.coeffs;
      prop.gamma_sq =
          std::exp(std::log(state.coeffs.gamma_sq) +
                   kGammaMhStep * std_normal(rng));
      const double prop_ll = total_loglik(prop);
      if (std::log(unif(rng)) <
          log_gamma_target(prop.gamma_sq, prop_ll) -
              log_gamma_target(state.coeffs.gamma_sq, cur_ll)) {
        state.coeffs = prop;
        cur_ll = prop_ll;
      }
    }
  }

  // Step 2
  detail::parallel_for(N, opts.threads, [&](int i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    std::vector<double> y(ind.obs.size());
    std::vector<SigmaPair> sig(ind.obs.size());
    for (std::size_t t = 0; t < ind.obs.size(); ++t) {
      y[t] = ind.obs[t].y;
      sig[t] = state.vol.sigma_at(i, static_cast<int>(t));
    }
    auto rng = make_rng(opts.seed, {20u, it, static_cast<std::uint64_t>(i)});
    FfbsDraw draw;
    try {
      draw = ffbs_sample_individual(y, sig, state.coeffs, rng,
                                    opts.diffuse_var);
    } catch (const std::exception& e) {
      throw std::runtime_error("step 2, individual " + std::to_string(i) +
                               ": " + e.what());
    }
    state.shocks.p0[static_cast<std::size_t>(i)] = draw.p0;
    state.shocks.shocks[static_cast<std::size_t>(i)] = std::move(draw.shocks);
  });

  // Step 3
  {
    auto rng = make_rng(opts.seed, {30u, it});
    for (int i = 0; i < N; ++i) {
      try {
        step3_sweep_individual(state.shocks.shocks[static_cast<std::size_t>(i)],
                               i, state.vol, hypers, rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("step 3, individual " + std::to_string(i) +
                                 ": " + e.what());
      }
    }
    if (opts.debug_validate) state.vol.validate();
  }

  // Step 3b: refresh every live cluster's value from its conjugate
  // posterior given the member shocks, InvGamma(shape + n/2,
  // scale + sum(shock^2)/2) per component. The assignment prior does not
  // depend on the values (fresh values are iid from the proposal), so
  // this is a valid Gibbs block; without it a cluster born at an
  // off-target value could only be corrected by slow birth and death.
  {
    auto rng = make_rng(opts.seed, {35u, it});
    const std::size_t L = state.vol.clusters.size();
    std::vector<double> sw2(L, 0.0), se2(L, 0.0);
    std::vector<int> n(L, 0);
    for (int i = 0; i < N; ++i) {
      const auto& a = state.vol.assignment[static_cast<std::size_t>(i)];
      const auto& sh = state.shocks.shocks[static_cast<std::size_t>(i)];
      for (std::size_t t = 0; t < a.size(); ++t) {
        if (a[t] < 0) continue;
        const auto l = static_cast<std::size_t>(a[t]);
        sw2[l] += sh[t].omega * sh[t].omega;
        se2[l] += sh[t].epsilon * sh[t].epsilon;
        n[l] += 1;
      }
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (state.vol.clusters[l].count == 0) continue;
      const double shape = hypers.proposal_shape + 0.5 * n[l];
      state.vol.clusters[l].value.omega_sq =
          draw_inverse_gamma(shape, hypers.proposal_scale + 0.5 * sw2[l], rng);
      state.vol.clusters[l].value.epsilon_sq =
          draw_inverse_gamma(shape, hypers.proposal_scale + 0.5 * se2[l], rng);
    }
  }

  state.iteration += 1;
}

// Starting point: a short stochastic hill-climb of the homogeneous-
// variance marginal likelihood, restricted to theta_in_support, pins the
// pass-through weights and the variance scales near the identified mode;
// the weights are then perturbed per seed (staying in support) so
// parallel chains start over-dispersed. Every person-year starts in a single cluster at the
// fitted variances; shocks are drawn from that prior.
inline GibbsState init_gibbs_state(const PanelData& panel,
                                   const HyperParams& hypers,
                                   std::uint64_t seed) {
  hypers.validate();
  auto rng = make_rng(seed, {40u});
  std::normal_distribution<double> std_normal(0.0, 1.0);

  double sw = 0.0, swd2 = 0.0;
  for (const auto& ind : panel.individuals)
    for (int t = 1; t < ind.n_years(); ++t) {
      const auto& a = ind.obs[static_cast<std::size_t>(t - 1)];
      const auto& b = ind.obs[static_cast<std::size_t>(t)];
      if (is_missing(a) || is_missing(b)) continue;
      double d = b.y - a.y;
      sw += b.weight;
      swd2 += b.weight * d * d;
    }
  const double diff_var = sw > 0.0 ? std::max(swd2 / sw, 1e-8) : 0.1;

  // Parameter vector of the homogeneous surrogate model:
  // (w0, w1, w2, e1, e2, log s2_w, log s2_e, log g2), e0 = 1 - e1 - e2.
  const auto unpack = [](const std::array<double, 8>& p) {
    IncomeCoefficients c;
    c.theta_omega = {p[0], p[1], p[2]};
    c.theta_epsilon = {1.0 - p[3] - p[4], p[3], p[4]};
    c.gamma_sq = std::exp(p[7]);
    SigmaPair s{std::exp(p[5]), std::exp(p[6])};
    return std::make_pair(c, s);
  };
  const auto loglik = [&](const std::array<double, 8>& p) {
    auto [c, s] = unpack(p);
    double ll = 0.0;
    std::vector<double> y;
    std::vector<SigmaPair> sig;
    for (const auto& ind : panel.individuals) {
      y.resize(ind.obs.size());
      sig.assign(ind.obs.size(), s);
      for (std::size_t t = 0; t < ind.obs.size(); ++t) y[t] = ind.obs[t].y;
      ll += state_space_loglik(y, sig, c);
    }
    return ll;
  };

  std::array<double, 8> p{0.3, 0.6, 0.9, 0.3, 0.1,
                          std::log(0.5 * diff_var), std::log(0.5 * diff_var),
                          std::log(0.25 * diff_var)};
  double best = loglik(p);
  double step = 0.2;
  for (int k = 0; k < 200; ++k, step *= 0.985) {
    std::array<double, 8> cand = p;
    for (auto& v : cand) v += step * std_normal(rng);
    if (!theta_in_support(unpack(cand).first)) continue;
    double ll = loglik(cand);
    if (ll > best) {
      best = ll;
      p = cand;
    }
  }

  auto [coeffs, sig0] = unpack(p);
  GibbsState state;
  state.coeffs = coeffs;

  // Volatility init: a per-person split of income variation into the two
  // components, then quantile bins in both dimensions, each bin one
  // cluster with all of a person's years assigned to it. A single shared
  // cluster leaves the sampler to nucleate heterogeneity year by year,
  // which is far too slow through the burn-in budget, and a single scalar
  // per person cannot start people apart when the permanent and
  // transitory scales move independently across the population.
  //
  // The permanent scale comes from long differences: for k > 3 every
  // fully-entered permanent shock contributes its whole variance, so
  //   var(y_{t+k} - y_t) = s2_w k + (terms free of k),
  // and the per-person slope over k = 4..8 estimates s2_w without
  // needing the pass-through weights at all. The transitory scale then
  // comes from the one-year-change variance
  //   v0 = s2_w sum(a^2) + s2_e sum(b^2) + 2 g2
  // with a = (w0, w1-w0, w2-w1, 1-w2) and b = (e0, e1-e0, e2-e1, -e2)
  // from the fitted weights (proportional fallback on short or gappy
  // histories).
  const int NI = panel.n_individuals();

  // Theta-free permanent scales and short-difference moments, computed
  // once. lag1_c0 is the lag-1 autocovariance of the one-year changes; it
  // pins the noise variance below, because the noise enters it as exactly
  // -g2 while the transitory shocks enter through their pass-out shape.
  std::vector<double> slope_w(static_cast<std::size_t>(NI), -1.0),
      short_v0(static_cast<std::size_t>(NI), diff_var),
      lag1_c0(static_cast<std::size_t>(NI),
              std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < NI; ++i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    const int T = ind.n_years();
    std::vector<double> yv(static_cast<std::size_t>(T),
                           std::numeric_limits<double>::quiet_NaN());
    for (int t = 0; t < T; ++t)
      if (!is_missing(ind.obs[static_cast<std::size_t>(t)]))
        yv[static_cast<std::size_t>(t)] = ind.obs[static_cast<std::size_t>(t)].y;

    double v0 = 0.0;
    int n0 = 0;
    for (int t = 1; t < T; ++t) {
      const double d = yv[static_cast<std::size_t>(t)] -
                       yv[static_cast<std::size_t>(t - 1)];
      if (std::isnan(d)) continue;
      v0 += d * d;
      ++n0;
    }
    v0 = n0 > 0 ? v0 / n0 : diff_var;
    short_v0[static_cast<std::size_t>(i)] = std::max(v0, 1e-8);

    double c1 = 0.0;
    int n1 = 0;
    for (int t = 2; t < T; ++t) {
      const double d0 = yv[static_cast<std::size_t>(t - 1)] -
                        yv[static_cast<std::size_t>(t - 2)];
      const double d1 = yv[static_cast<std::size_t>(t)] -
                        yv[static_cast<std::size_t>(t - 1)];
      if (std::isnan(d0) || std::isnan(d1)) continue;
      c1 += d0 * d1;
      ++n1;
    }
    if (n1 >= 5) lag1_c0[static_cast<std::size_t>(i)] = c1 / n1;

    // Slope of the long-difference variance in k (least squares over the
    // available k points).
    double sk = 0, sm = 0, skk = 0, skm = 0;
    int np = 0;
    for (int k = 4; k <= 8 && k < T; ++k) {
      double m = 0.0;
      int n = 0;
      for (int t = 0; t + k < T; ++t) {
        const double d = yv[static_cast<std::size_t>(t + k)] -
                         yv[static_cast<std::size_t>(t)];
        if (std::isnan(d)) continue;
        m += d * d;
        ++n;
      }
      if (n < 5) continue;
      m /= n;
      sk += k; sm += m; skk += k * k; skm += k * m;
      ++np;
    }
    if (np >= 3) {
      const double denom = np * skk - sk * sk;
      if (denom > 0.0)
        slope_w[static_cast<std::size_t>(i)] = (np * skm - sk * sm) / denom;
    }
  }

  // Splits the transitory scale out of the short-difference variance
  // under weights c, then rebuilds the volatility state as quantile bins
  // in both dimensions: a (bin_w, bin_e) cell is a cluster valued at its
  // members' median estimates. The per-cluster value refresh in
  // gibbs_iterate later slides each cell to its members' scale.
  const auto rebuild_vol = [&](const IncomeCoefficients& c) {
    double A0 = 0.0, B0 = 0.0;
    const std::array<double, 4> la{c.theta_omega[0],
                                   c.theta_omega[1] - c.theta_omega[0],
                                   c.theta_omega[2] - c.theta_omega[1],
                                   1.0 - c.theta_omega[2]};
    const std::array<double, 4> lb{c.theta_epsilon[0],
                                   c.theta_epsilon[1] - c.theta_epsilon[0],
                                   c.theta_epsilon[2] - c.theta_epsilon[1],
                                   -c.theta_epsilon[2]};
    for (int k = 0; k < 4; ++k) {
      A0 += la[static_cast<std::size_t>(k)] * la[static_cast<std::size_t>(k)];
      B0 += lb[static_cast<std::size_t>(k)] * lb[static_cast<std::size_t>(k)];
    }
    double A1 = 0.0, B1 = 0.0;
    for (int k = 0; k < 3; ++k) {
      A1 += la[static_cast<std::size_t>(k)] * la[static_cast<std::size_t>(k + 1)];
      B1 += lb[static_cast<std::size_t>(k)] * lb[static_cast<std::size_t>(k + 1)];
    }

    // Pooled noise variance: per person the short-difference variance and
    // its lag-1 autocovariance satisfy
    //   v0 - s2_w A0 = s2_e B0 + 2 g2,   c1 - s2_w A1 = s2_e B1 - g2,
    // so g2 = (B1 (v0 - s2_w A0) - B0 (c1 - s2_w A1)) / (2 B1 + B0).
    // A robust pooled median keeps the left-unconstrained surrogate fits
    // from dumping unexplained heterogeneity into the noise term, which
    // would drown the pass-in transients that identify the early
    // permanent weights.
    double ghat = 0.25 * diff_var;
    if (std::fabs(2.0 * B1 + B0) > 1e-6) {
      std::vector<double> gs;
      for (int i = 0; i < NI; ++i) {
        const double sw_i = slope_w[static_cast<std::size_t>(i)];
        const double c1_i = lag1_c0[static_cast<std::size_t>(i)];
        if (!(sw_i > 0.0) || std::isnan(c1_i)) continue;
        gs.push_back((B1 * (short_v0[static_cast<std::size_t>(i)] - sw_i * A0) -
                      B0 * (c1_i - sw_i * A1)) /
                     (2.0 * B1 + B0));
      }
      if (gs.size() >= 10) {
        std::nth_element(gs.begin(), gs.begin() + gs.size() / 2, gs.end());
        ghat = gs[gs.size() / 2];
      }
    }
    state.coeffs.gamma_sq =
        std::min(std::max(ghat, 1e-6), 0.25 * diff_var);

    std::vector<double> pw(static_cast<std::size_t>(NI)),
        pe(static_cast<std::size_t>(NI));
    for (int i = 0; i < NI; ++i) {
      double sw_i = slope_w[static_cast<std::size_t>(i)];
      double se_i = -1.0;
      const double v0 = short_v0[static_cast<std::size_t>(i)];
      if (sw_i > 0.0 && B0 > 1e-12)
        se_i = (v0 - sw_i * A0 - 2.0 * state.coeffs.gamma_sq) / B0;
      if (!(sw_i > 0.0))
        sw_i = v0 * sig0.omega_sq / (sig0.omega_sq + sig0.epsilon_sq);
      if (!(se_i > 0.0))
        se_i = v0 * sig0.epsilon_sq / (sig0.omega_sq + sig0.epsilon_sq);
      pw[static_cast<std::size_t>(i)] = std::max(sw_i, 1e-8);
      pe[static_cast<std::size_t>(i)] = std::max(se_i, 1e-8);
    }

    const int kBins = 4;
    std::vector<double> sorted_pw = pw, sorted_pe = pe;
    std::sort(sorted_pw.begin(), sorted_pw.end());
    std::sort(sorted_pe.begin(), sorted_pe.end());
    const auto bin_of = [&](const std::vector<double>& s, double x) {
      const auto rank = static_cast<std::size_t>(
          std::lower_bound(s.begin(), s.end(), x) - s.begin());
      return std::min(static_cast<int>(rank * static_cast<std::size_t>(kBins) /
                                       s.size()),
                      kBins - 1);
    };
    state.vol = VolatilityState::unassigned_like(panel);
    std::vector<std::vector<int>> cell_members(
        static_cast<std::size_t>(kBins * kBins));
    for (int i = 0; i < NI; ++i) {
      const int cell =
          bin_of(sorted_pw, pw[static_cast<std::size_t>(i)]) * kBins +
          bin_of(sorted_pe, pe[static_cast<std::size_t>(i)]);
      cell_members[static_cast<std::size_t>(cell)].push_back(i);
    }
    for (auto& members : cell_members) {
      if (members.empty()) continue;
      std::vector<double> ws, es;
      for (int i : members) {
        ws.push_back(pw[static_cast<std::size_t>(i)]);
        es.push_back(pe[static_cast<std::size_t>(i)]);
      }
      std::nth_element(ws.begin(), ws.begin() + ws.size() / 2, ws.end());
      std::nth_element(es.begin(), es.begin() + es.size() / 2, es.end());
      const int cid =
          state.vol.new_cluster({ws[ws.size() / 2], es[es.size() / 2]});
      for (int i : members) {
        const int T = static_cast<int>(
            panel.individuals[static_cast<std::size_t>(i)].obs.size());
        for (int t = 0; t < T; ++t) state.vol.assign(i, t, cid);
        state.vol.rebuild_run_lengths(i);
      }
    }
  };

  // Deterministic coordinate descent of the weights (and the noise
  // variance) against the binned heterogeneous panel: the homogeneous
  // surrogate misallocates weight when the two variance scales move
  // independently across people, and a noisy stochastic climb does not
  // land deep enough in the right basin for the chain to stay there.
  const auto het_loglik = [&](const IncomeCoefficients& c) {
    double ll = 0.0;
    std::vector<double> y;
    std::vector<SigmaPair> sig;
    for (int i = 0; i < NI; ++i) {
      const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
      y.resize(ind.obs.size());
      sig.resize(ind.obs.size());
      for (std::size_t t = 0; t < ind.obs.size(); ++t) {
        y[t] = ind.obs[t].y;
        sig[t] = state.vol.sigma_at(i, static_cast<int>(t));
      }
      ll += state_space_loglik(y, sig, c);
    }
    return ll;
  };
  // The noise variance stays pinned at the pooled moment estimate from
  // rebuild_vol: left free, it absorbs the split's misassignment error
  // and masks the pass-in transients.
  const auto polish = [&](IncomeCoefficients cur) {
    const auto pack = [](const IncomeCoefficients& c) {
      return std::array<double, 5>{c.theta_omega[0], c.theta_omega[1],
                                   c.theta_omega[2], c.theta_epsilon[1],
                                   c.theta_epsilon[2]};
    };
    const double gfix = cur.gamma_sq;
    const auto unpack5 = [gfix](const std::array<double, 5>& q) {
      IncomeCoefficients c;
      c.theta_omega = {q[0], q[1], q[2]};
      c.theta_epsilon = {1.0 - q[3] - q[4], q[3], q[4]};
      c.gamma_sq = gfix;
      return c;
    };
    std::array<double, 5> q = pack(cur);
    double best2 = het_loglik(cur);
    double s = 0.08;
    for (int round = 0; round < 8; ++round, s *= 0.6) {
      for (int d = 0; d < 5; ++d) {
        for (double sign : {1.0, -1.0}) {
          std::array<double, 5> cand = q;
          cand[static_cast<std::size_t>(d)] += sign * s;
          const IncomeCoefficients c = unpack5(cand);
          if (!theta_in_support(c)) continue;
          const double ll = het_loglik(c);
          if (ll > best2) {
            best2 = ll;
            q = cand;
            break;
          }
        }
      }
    }
    return unpack5(q);
  };

  // Two rounds: the transitory split itself depends on the weights, so
  // refitting the weights sharpens the second split.
  rebuild_vol(state.coeffs);
  state.coeffs = polish(state.coeffs);
  rebuild_vol(state.coeffs);
  state.coeffs = polish(state.coeffs);

  // Per-seed over-dispersion so parallel chains do not start on top of
  // each other.
  for (int tries = 0; tries < 50; ++tries) {
    IncomeCoefficients c = state.coeffs;
    for (auto& v : c.theta_omega) v += 0.05 * std_normal(rng);
    c.theta_epsilon[1] += 0.05 * std_normal(rng);
    c.theta_epsilon[2] += 0.05 * std_normal(rng);
    c.theta_epsilon[0] = 1.0 - c.theta_epsilon[1] - c.theta_epsilon[2];
    if (theta_in_support(c)) {
      state.coeffs = c;
      break;
    }
  }

  state.shocks = ShockPanel::zeros_like(panel);
  for (int i = 0; i < NI; ++i) {
    auto& ind = state.shocks.shocks[static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < ind.size(); ++t) {
      const SigmaPair s = state.vol.sigma_at(i, static_cast<int>(t));
      ind[t].omega = std::sqrt(s.omega_sq) * std_normal(rng);
      ind[t].epsilon = std::sqrt(s.epsilon_sq) * std_normal(rng);
    }
  }
  return state;
}

// Runs one chain and returns the thinned post-burn-in snapshots.
inline std::vector<ChainSnapshot> run_chain(const PanelData& panel,
                                            const HyperParams& hypers,
                                            const ChainOptions& opts) {
  if (opts.burn_in >= opts.n_iter)
    throw std::invalid_argument("run_chain: burn_in must be < n_iter");
  if (opts.thin < 1) throw std::invalid_argument("run_chain: thin >= 1");

  GibbsState state = init_gibbs_state(panel, hypers, opts.seed);
  std::vector<ChainSnapshot> kept;
  for (int it = 0; it < opts.n_iter; ++it) {
    gibbs_iterate(state, panel, hypers, opts);
    if (it >= opts.burn_in && (it - opts.burn_in) % opts.thin == 0)
      kept.push_back({state.iteration, state.coeffs,
                      detail::sigma_panel_of(state.vol)});
  }
  return kept;
}

}  // namespace incvol
