#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "incvol/income_process.hpp"
#include "incvol/panel.hpp"
#include "incvol/rng.hpp"

namespace incvol {

// MHDP prior tuning: Theta governs new population values, Theta_i new
// within-person values, theta the propensity to change year over year.
// The proposal distribution for fresh variance pairs is inverse-Gamma.
struct HyperParams {
  double Theta = 1.0;
  double Theta_i = 1.0;
  double theta = 1.0;
  double proposal_shape = 3.0;
  double proposal_scale = 0.1;
  // Proper inverse-Gamma prior on the measurement-noise variance gamma^2
  // (see step1_sample_coefficients for why it must be proper). The default
  // is weakly informative at the scale of log-income measurement error.
  double gamma_prior_shape = 2.0;
  double gamma_prior_scale = 0.01;

  void validate() const {
    if (!(Theta > 0.0) || !(Theta_i > 0.0) || !(theta > 0.0) ||
        !(proposal_shape > 0.0) || !(proposal_scale > 0.0))
      throw std::invalid_argument("HyperParams: all must be positive");
    if (!(gamma_prior_shape > 0.0) || !(gamma_prior_scale > 0.0))
      throw std::invalid_argument("HyperParams: gamma prior must be proper");
  }
};

// Independent inverse-Gamma draws for a fresh (sigma^2_w, sigma^2_e) pair.
inline SigmaPair propose_sigma(const HyperParams& h, std::mt19937_64& rng) {
  SigmaPair s;
  s.omega_sq = draw_inverse_gamma(h.proposal_shape, h.proposal_scale, rng);
  s.epsilon_sq = draw_inverse_gamma(h.proposal_shape, h.proposal_scale, rng);
  return s;
}

// Discrete volatility values shared across person-years. Clusters live in
// a slot vector; a slot with count zero is free and may be reused (lowest
// free slot first, keeping runs deterministic).
struct VolatilityState {
  struct Cluster {
    SigmaPair value;
    int count = 0;  // person-years currently assigned
  };

  std::vector<Cluster> clusters;
  std::vector<std::vector<int>> assignment;  // -1 = unassigned
  std::vector<std::vector<int>> run_length;  // Q_{i,t}

  static VolatilityState unassigned_like(const PanelData& panel) {
    VolatilityState v;
    v.assignment.resize(panel.individuals.size());
    v.run_length.resize(panel.individuals.size());
    for (std::size_t i = 0; i < panel.individuals.size(); ++i) {
      v.assignment[i].assign(panel.individuals[i].obs.size(), -1);
      v.run_length[i].assign(panel.individuals[i].obs.size(), 0);
    }
    return v;
  }

  int n_individuals() const { return static_cast<int>(assignment.size()); }

  int n_live_clusters() const {
    int n = 0;
    for (const auto& c : clusters) n += c.count > 0 ? 1 : 0;
    return n;
  }

  SigmaPair sigma_at(int i, int t) const {
    int l = assignment[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    if (l < 0) throw std::logic_error("sigma_at: unassigned person-year");
    return clusters[static_cast<std::size_t>(l)].value;
  }

  int new_cluster(SigmaPair value) {
    for (std::size_t l = 0; l < clusters.size(); ++l)
      if (clusters[l].count == 0) {
        clusters[l] = {value, 0};
        return static_cast<int>(l);
      }
    clusters.push_back({value, 0});
    return static_cast<int>(clusters.size()) - 1;
  }

  void assign(int i, int t, int l) {
    auto& a =
        assignment[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    if (a >= 0) throw std::logic_error("assign: already assigned");
    a = l;
    clusters[static_cast<std::size_t>(l)].count += 1;
  }

  void unassign(int i, int t) {
    auto& a =
        assignment[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    if (a < 0) return;
    clusters[static_cast<std::size_t>(a)].count -= 1;
    a = -1;
  }

  // Backward run length of the value at t-1: the largest q >= 0 such that
  // all of t-1, ..., t-q hold the same value. Zero when t is the first
  // assigned year.
  int compute_run_length(int i, int t) const {
    const auto& a = assignment[static_cast<std::size_t>(i)];
    if (t == 0 || a[static_cast<std::size_t>(t - 1)] < 0) return 0;
    const int prev = a[static_cast<std::size_t>(t - 1)];
    int q = 0;
    for (int s = t - 1; s >= 0 && a[static_cast<std::size_t>(s)] == prev; --s)
      ++q;
    return q;
  }

  void rebuild_run_lengths(int i) {
    auto& q = run_length[static_cast<std::size_t>(i)];
    for (int t = 0; t < static_cast<int>(q.size()); ++t)
      q[static_cast<std::size_t>(t)] = compute_run_length(i, t);
  }

  // Checks count sums, run lengths, and live-cluster occupancy; throws on
  // the first violation.
  void validate() const {
    std::vector<int> counts(clusters.size(), 0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      for (std::size_t t = 0; t < assignment[i].size(); ++t) {
        int l = assignment[i][t];
        if (l < 0) continue;
        if (static_cast<std::size_t>(l) >= clusters.size())
          throw std::logic_error("validate: assignment out of range");
        counts[static_cast<std::size_t>(l)] += 1;
        ++assigned;
        int q = compute_run_length(static_cast<int>(i), static_cast<int>(t));
        if (run_length[i][t] != q) {
          std::ostringstream msg;
          msg << "validate: run length mismatch at (" << i << "," << t
              << "): stored " << run_length[i][t] << ", actual " << q;
          throw std::logic_error(msg.str());
        }
      }
    }
    std::size_t total = 0;
    for (std::size_t l = 0; l < clusters.size(); ++l) {
      if (clusters[l].count != counts[l]) {
        std::ostringstream msg;
        msg << "validate: cluster " << l << " count " << clusters[l].count
            << " != actual " << counts[l];
        throw std::logic_error(msg.str());
      }
      total += static_cast<std::size_t>(clusters[l].count);
    }
    if (total != assigned)
      throw std::logic_error("validate: count sum != assigned person-years");
  }
};

struct MhdpOptions {
  // With a flat likelihood every candidate value scores 1; exposes the
  // bare prior law for testing and prior simulation.
  bool flat_likelihood = false;
};

namespace detail {

// Categorical draw over log-weights, by max-subtraction.
inline std::size_t draw_categorical_log(const std::vector<double>& logw,
                                        std::mt19937_64& rng) {
  double mx = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  std::vector<double> w(logw.size());
  for (std::size_t k = 0; k < logw.size(); ++k) {
    w[k] = std::exp(logw[k] - mx);
    total += w[k];
  }
  std::uniform_real_distribution<double> u(0.0, total);
  double r = u(rng);
  for (std::size_t k = 0; k < w.size(); ++k) {
    r -= w[k];
    if (r <= 0.0) return k;
  }
  return w.size() - 1;
}

}  // namespace detail

namespace detail {

// Log marginal likelihood of one squared shock under the inverse-Gamma
// proposal prior: integral of N(x; 0, s) dInvGamma(s; a, b), a Student-t.
inline double log_marginal_shock_component(double x, double a, double b) {
  return std::lgamma(a + 0.5) - std::lgamma(a) + a * std::log(b) -
         0.5 * std::log(2.0 * std::acos(-1.0)) -
         (a + 0.5) * std::log(b + 0.5 * x * x);
}

}  // namespace detail

// One draw of sigma^2_{i,t} from its full conditional. Candidate values
// and their prior masses follow the three-level hierarchy:
//   Level 1: keep last year's value, mass Q/(theta+Q); otherwise change,
//            mass theta/(theta+Q), split by
//   Level 2: one of the individual's other values, mass prop. to its
//            occurrence count n_{l_i}, vs new-to-individual, mass Theta_i;
//            a new-to-individual value splits by
//   Level 3: a value held elsewhere in the population (mass n_l) vs a
//            fresh draw from the proposal distribution (mass Theta).
// Rather than gating level by level with a plugged-in proposal likelihood,
// the draw is collapsed: every candidate's prior mass is multiplied by the
// shock likelihood and one categorical draw is taken over all of them.
// The fresh branch integrates the proposal density in closed form (the
// inverse-Gamma proposal is conjugate to the normal shock likelihood), and
// when selected the new value is drawn from the exact conditional
// InvGamma(shape + 1/2, scale + shock^2/2) per component. With a flat
// likelihood the change-branch masses telescope and the staged prior laws
// (keep probability Q/(theta+Q), DP cluster growth) hold exactly.
// The first year of an individual has no predecessor and starts at
// Level 2.
//
// Every candidate weight also carries the forward continuation factor:
// the prior probability of the already-assigned values at t+1 onward,
// given that year t takes the candidate. The level equations alone look
// only backward (the run length Q ends at t-1), which lets a long run be
// broken cheaply from its early years; conditioning on the forward run
// restores the correct full conditional, where breaking a run mid-way is
// penalized by roughly its remaining length. The factor covers the run
// containing t+1 and the change event that ends it; residual candidate
// dependence beyond that point (count shifts of one in later change
// events) is ignored.
inline void step3_sample_volatility(const Shocks& shock, int i, int t,
                                    VolatilityState& vol,
                                    const HyperParams& hypers,
                                    std::mt19937_64& rng,
                                    const MhdpOptions& opts = {}) {
  hypers.validate();
  const auto ll = [&](SigmaPair s) {
    return opts.flat_likelihood
               ? 0.0
               : log_shock_likelihood(shock.omega, shock.epsilon, s);
  };

  const auto& a_i = vol.assignment[static_cast<std::size_t>(i)];
  const int T = static_cast<int>(a_i.size());
  const int prev =
      t > 0 ? a_i[static_cast<std::size_t>(t - 1)] : -1;
  const int q_run = vol.compute_run_length(i, t);

  vol.unassign(i, t);

  const std::size_t L = vol.clusters.size();

  // The individual's holdings over its other years.
  std::vector<int> own(L, 0);
  for (int s = 0; s < T; ++s) {
    if (s == t) continue;
    if (a_i[static_cast<std::size_t>(s)] >= 0)
      own[static_cast<std::size_t>(a_i[static_cast<std::size_t>(s)])] += 1;
  }

  // Population counts excluding individual i entirely.
  std::vector<double> n_other(L, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    n_other[l] = vol.clusters[l].count - own[l];

  // Forward context: the run of the value at t+1 and what follows it.
  int next = t + 1 < T ? a_i[static_cast<std::size_t>(t + 1)] : -1;
  int fwd_run = 0;
  int after = -1;
  if (next >= 0) {
    int s = t + 1;
    while (s < T && a_i[static_cast<std::size_t>(s)] == next) {
      ++fwd_run;
      ++s;
    }
    after = s < T ? a_i[static_cast<std::size_t>(s)] : -1;
  }

  // log prior probability that a change event at local year s lands on
  // cluster `target`, with year t hypothetically holding `cand` (-1 for a
  // fresh proposal value). Own counts use years before s only, matching
  // the sequential prior. The continuous-proposal branch carries a fixed
  // large penalty: an atom always dominates a density value, and when no
  // candidate reaches an atom the constant cancels.
  const auto log_change_target = [&](int s, int prev_clu, int target,
                                     int cand) {
    std::vector<int> o(L, 0);
    int total = 0;
    bool cand_fresh_before_s = false;
    for (int u = 0; u < s; ++u) {
      int x = u == t ? cand : a_i[static_cast<std::size_t>(u)];
      if (u == t && cand < 0) {
        cand_fresh_before_s = true;
        ++total;
        continue;
      }
      if (x < 0) continue;
      o[static_cast<std::size_t>(x)] += 1;
      ++total;
    }
    // Level 2 mass over own past values other than prev_clu.
    double d2 = hypers.Theta_i + total;
    if (prev_clu >= 0) d2 -= o[static_cast<std::size_t>(prev_clu)];
    else if (cand_fresh_before_s && prev_clu == -2) d2 -= 1.0;
    const int o_target = o[static_cast<std::size_t>(target)];
    if (o_target > 0 && target != prev_clu)
      return std::log(o_target / d2);
    // Level 3 over population values not in i's past.
    double lw = std::log(hypers.Theta_i / d2);
    double d3 = hypers.Theta;
    for (std::size_t l = 0; l < L; ++l) {
      if (o[l] > 0) continue;
      if (n_other[l] > 0.0) d3 += n_other[l];
    }
    if (o_target == 0 && n_other[static_cast<std::size_t>(target)] > 0.0)
      return lw + std::log(n_other[static_cast<std::size_t>(target)] / d3);
    constexpr double kDensityPenalty = -30.0;
    return lw + std::log(hypers.Theta / d3) + kDensityPenalty;
  };

  // Continuation factor for a candidate: cand is a cluster id or -1 for a
  // fresh value; run_to_t is the run length of the candidate ending at t.
  const auto log_forward = [&](int cand, double run_to_t) {
    if (next < 0) return 0.0;
    double lf = 0.0;
    double run_end;
    if (cand == next) {
      for (int j = 0; j < fwd_run; ++j)
        lf += std::log((run_to_t + j) / (hypers.theta + run_to_t + j));
      run_end = run_to_t + fwd_run;
    } else {
      lf += std::log(hypers.theta / (hypers.theta + run_to_t));
      lf += log_change_target(t + 1, cand >= 0 ? cand : -2, next, cand);
      for (int j = 1; j < fwd_run; ++j)
        lf += std::log(j / (hypers.theta + j));
      run_end = fwd_run;
    }
    if (after >= 0)
      lf += std::log(hypers.theta / (hypers.theta + run_end)) +
            log_change_target(t + fwd_run + 1, next, after, cand);
    return lf;
  };

  // Prior masses of the change branch. Level-2 competition excludes the
  // Level-1 value; Level 3 covers values nobody in i's other years holds.
  double mass2 = hypers.Theta_i;
  for (std::size_t l = 0; l < L; ++l)
    if (static_cast<int>(l) != prev) mass2 += own[l];
  double mass3 = hypers.Theta;
  for (std::size_t l = 0; l < L; ++l)
    if (own[l] == 0 && static_cast<int>(l) != prev && n_other[l] > 0.0)
      mass3 += n_other[l];

  std::vector<int> ids;
  std::vector<double> logw;
  if (prev >= 0) {
    ids.push_back(prev);
    logw.push_back(std::log(static_cast<double>(q_run)) +
                   ll(vol.clusters[static_cast<std::size_t>(prev)].value) +
                   log_forward(prev, q_run + 1.0));
  }
  // All change candidates share the Level-1 change mass theta (dropped for
  // the first year, where sampling starts at Level 2 with total mass 1).
  const double log_change = prev >= 0 ? std::log(hypers.theta) : 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    const int lid = static_cast<int>(l);
    if (lid == prev) continue;
    if (own[l] > 0) {
      ids.push_back(lid);
      logw.push_back(log_change + std::log(own[l] / mass2) +
                     ll(vol.clusters[l].value) + log_forward(lid, 1.0));
    } else if (n_other[l] > 0.0) {
      ids.push_back(lid);
      logw.push_back(log_change + std::log(hypers.Theta_i / mass2) +
                     std::log(n_other[l] / mass3) +
                     ll(vol.clusters[l].value) + log_forward(lid, 1.0));
    }
  }
  ids.push_back(-1);
  const double log_fresh_lik =
      opts.flat_likelihood
          ? 0.0
          : detail::log_marginal_shock_component(
                shock.omega, hypers.proposal_shape, hypers.proposal_scale) +
                detail::log_marginal_shock_component(
                    shock.epsilon, hypers.proposal_shape,
                    hypers.proposal_scale);
  logw.push_back(log_change + std::log(hypers.Theta_i / mass2) +
                 std::log(hypers.Theta / mass3) + log_fresh_lik +
                 log_forward(-1, 1.0));

  std::size_t pick = detail::draw_categorical_log(logw, rng);
  int chosen = ids[pick];
  if (chosen < 0) {
    SigmaPair star;
    if (opts.flat_likelihood) {
      star = propose_sigma(hypers, rng);
    } else {
      star.omega_sq = draw_inverse_gamma(
          hypers.proposal_shape + 0.5,
          hypers.proposal_scale + 0.5 * shock.omega * shock.omega, rng);
      star.epsilon_sq = draw_inverse_gamma(
          hypers.proposal_shape + 0.5,
          hypers.proposal_scale + 0.5 * shock.epsilon * shock.epsilon, rng);
    }
    chosen = vol.new_cluster(star);
  }

  vol.assign(i, t, chosen);
  vol.run_length[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] =
      q_run;
}

// Sweeps Level-3 style sampling over every person-year of an individual in
// increasing year order, then refreshes the stored run lengths.
inline void step3_sweep_individual(const std::vector<Shocks>& shocks, int i,
                                   VolatilityState& vol,
                                   const HyperParams& hypers,
                                   std::mt19937_64& rng,
                                   const MhdpOptions& opts = {}) {
  const int T =
      static_cast<int>(vol.assignment[static_cast<std::size_t>(i)].size());
  for (int t = 0; t < T; ++t)
    step3_sample_volatility(shocks[static_cast<std::size_t>(t)], i, t, vol,
                            hypers, rng, opts);
  vol.rebuild_run_lengths(i);
}

}  // namespace incvol
