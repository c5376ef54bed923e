#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "incvol/gibbs.hpp"
#include "incvol/stats.hpp"

namespace incvol {

// Cellwise posterior means of the variance pairs, pooled across chains.
struct PosteriorSummary {
  SigmaPanel mean;  // per person-year posterior means
  int n_chains = 0;
  int retained = 0;  // total pooled draws per cell
};

inline PosteriorSummary posterior_means(
    const std::vector<std::vector<ChainSnapshot>>& chains) {
  PosteriorSummary out;
  out.n_chains = static_cast<int>(chains.size());
  for (const auto& chain : chains) out.retained += static_cast<int>(chain.size());
  if (out.retained == 0)
    throw std::invalid_argument("posterior_means: no retained draws");

  const auto& shape = chains.front().front().sigma;
  out.mean.resize(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i)
    out.mean[i].assign(shape[i].size(), SigmaPair{0.0, 0.0});

  for (const auto& chain : chains)
    for (const auto& snap : chain)
      for (std::size_t i = 0; i < snap.sigma.size(); ++i)
        for (std::size_t t = 0; t < snap.sigma[i].size(); ++t) {
          out.mean[i][t].omega_sq += snap.sigma[i][t].omega_sq;
          out.mean[i][t].epsilon_sq += snap.sigma[i][t].epsilon_sq;
        }
  for (auto& ind : out.mean)
    for (auto& s : ind) {
      s.omega_sq /= out.retained;
      s.epsilon_sq /= out.retained;
    }
  return out;
}

enum class VarianceKind { permanent, transitory };

struct YearlyRow {
  int year = 0;
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};

// Weighted mean / median / 95th percentile of the posterior-mean variances
// per calendar year, for one variance kind.
inline std::vector<YearlyRow> yearly_distribution(const PosteriorSummary& summary,
                                                  const PanelData& panel,
                                                  VarianceKind kind) {
  if (summary.mean.size() != panel.individuals.size())
    throw std::invalid_argument("yearly_distribution: summary/panel mismatch");
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
  for (std::size_t i = 0; i < summary.mean.size(); ++i) {
    const auto& ind = panel.individuals[i];
    for (std::size_t t = 0; t < summary.mean[i].size(); ++t) {
      double v = kind == VarianceKind::permanent ? summary.mean[i][t].omega_sq
                                                 : summary.mean[i][t].epsilon_sq;
      double w = ind.obs[t].weight;
      if (w <= 0.0) continue;
      auto& e = by_year[ind.year_at(static_cast<int>(t))];
      e.first.push_back(v);
      e.second.push_back(w);
    }
  }
  std::vector<YearlyRow> rows;
  for (auto& [year, vw] : by_year) {
    if (vw.first.empty()) continue;
    YearlyRow r;
    r.year = year;
    r.mean = weighted_mean(vw.first, vw.second);
    r.median = weighted_quantile(vw.first, vw.second, 0.5);
    r.p95 = weighted_quantile(vw.first, vw.second, 0.95);
    rows.push_back(r);
  }
  return rows;
}

struct Psrf {
  double value = 1.0;
  bool degenerate = false;  // zero within-chain variance
};

// Potential-scale-reduction statistic over >= 2 equal-length chains of a
// selected scalar. Values near one indicate the chains are mixing over the
// same distribution.
inline Psrf convergence_diagnostic(
    const std::vector<std::vector<ChainSnapshot>>& chains,
    const std::function<double(const ChainSnapshot&)>& selector) {
  if (chains.size() < 2)
    throw std::invalid_argument("convergence_diagnostic: need >= 2 chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw std::invalid_argument("convergence_diagnostic: chains too short");
  for (const auto& c : chains)
    if (c.size() != n)
      throw std::invalid_argument(
          "convergence_diagnostic: unequal chain lengths");

  const std::size_t m = chains.size();
  std::vector<double> chain_mean(m), chain_var(m);
  double grand = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    double s = 0.0;
    for (const auto& snap : chains[c]) s += selector(snap);
    chain_mean[c] = s / static_cast<double>(n);
    grand += chain_mean[c];
    double v = 0.0;
    for (const auto& snap : chains[c]) {
      double d = selector(snap) - chain_mean[c];
      v += d * d;
    }
    chain_var[c] = v / static_cast<double>(n - 1);
  }
  grand /= static_cast<double>(m);

  double w = 0.0;
  for (double v : chain_var) w += v;
  w /= static_cast<double>(m);

  double b_over_n = 0.0;
  for (double mu : chain_mean) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= static_cast<double>(m - 1);

  Psrf out;
  if (w <= 0.0) {
    out.degenerate = true;
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const double nn = static_cast<double>(n);
  out.value = std::sqrt(((nn - 1.0) / nn * w + b_over_n) / w);
  return out;
}

}  // namespace incvol
