#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "incvol/panel.hpp"
#include "incvol/rng.hpp"

namespace incvol {

// Year-specific top/bottom codes built from two anchor values and a
// user-supplied deflator series. Both codes move with the deflator, so
// log(top) - log(bottom) is constant across years by construction.
struct CodeTable {
  std::map<int, double> deflator;
  double top_anchor = 99999.0;  // dollars, in top_anchor_year
  int top_anchor_year = 1982;
  double bottom_anchor = 5150.0;  // dollars, in bottom_anchor_year
  int bottom_anchor_year = 2005;

  double deflate(int year) const {
    auto it = deflator.find(year);
    if (it == deflator.end())
      throw std::out_of_range("CodeTable: no deflator for year " +
                              std::to_string(year));
    return it->second;
  }

  double top_code(int year) const {
    return top_anchor * deflate(year) / deflate(top_anchor_year);
  }

  double bottom_code(int year) const {
    return bottom_anchor * deflate(year) / deflate(bottom_anchor_year);
  }
};

// Winsorize one income value to the year's top/bottom codes.
inline double apply_income_codes(double income, int year,
                                 const CodeTable& table) {
  if (income < 0.0)
    throw std::invalid_argument("apply_income_codes: negative income");
  return std::clamp(income, table.bottom_code(year), table.top_code(year));
}

// Weighted regression of log income on generic covariates; returns the
// residuals ("excess log income"). Weights are first rescaled so the
// average weight in every calendar year is one. A rank-deficient design
// throws, naming the collinear columns.
inline std::vector<double> residualize(const std::vector<double>& log_income,
                                       const Eigen::MatrixXd& covariates,
                                       const std::vector<double>& weights,
                                       const std::vector<int>& years) {
  const auto n = log_income.size();
  if (static_cast<std::size_t>(covariates.rows()) != n || weights.size() != n ||
      years.size() != n)
    throw std::invalid_argument("residualize: inputs not aligned");
  if (n == 0) return {};

  // Per-year weight normalization.
  std::map<int, std::pair<double, int>> by_year;  // sum, count
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < 0.0)
      throw std::invalid_argument("residualize: negative weight");
    auto& e = by_year[years[i]];
    e.first += weights[i];
    e.second += 1;
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = by_year[years[i]];
    if (e.first <= 0.0)
      throw std::invalid_argument("residualize: year " +
                                  std::to_string(years[i]) +
                                  " has no positive weight");
    w[i] = weights[i] * e.second / e.first;
  }

  const Eigen::Index p = covariates.cols();
  Eigen::MatrixXd xw = covariates;
  Eigen::VectorXd yw(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double sw = std::sqrt(w[i]);
    xw.row(static_cast<Eigen::Index>(i)) *= sw;
    yw(static_cast<Eigen::Index>(i)) = sw * log_income[i];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    std::ostringstream msg;
    msg << "residualize: design is rank deficient; collinear columns:";
    auto perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < p; ++k) msg << ' ' << perm(k);
    throw std::invalid_argument(msg.str());
  }
  Eigen::VectorXd beta = qr.solve(yw);

  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i)
    resid[i] = log_income[i] -
               covariates.row(static_cast<Eigen::Index>(i)).dot(beta);
  return resid;
}

// Fills single-year gaps by the bootstrap donor rule: match the observed
// two-year change across the gap against all observed two-year changes in
// the sample, pick a donor uniformly within +/- neighborhood, and copy the
// donor's intermediate-year increment. Longer gaps must already have been
// dropped. Deterministic given the seed.
inline PanelData impute_missing(PanelData panel, std::uint64_t seed,
                                double neighborhood = 0.05) {
  struct Donor {
    double change2;    // y_{t+1} - y_{t-1}
    double increment;  // y_t - y_{t-1}
  };
  std::vector<Donor> pool;
  for (const auto& ind : panel.individuals) {
    for (int t = 1; t + 1 < ind.n_years(); ++t) {
      const auto& a = ind.obs[static_cast<std::size_t>(t - 1)];
      const auto& b = ind.obs[static_cast<std::size_t>(t)];
      const auto& c = ind.obs[static_cast<std::size_t>(t + 1)];
      if (a.observed && b.observed && c.observed && !is_missing(a) &&
          !is_missing(b) && !is_missing(c))
        pool.push_back({c.y - a.y, b.y - a.y});
    }
  }

  auto rng = make_rng(seed, {2u});
  for (std::size_t i = 0; i < panel.individuals.size(); ++i) {
    auto& ind = panel.individuals[i];
    for (int t = 0; t < ind.n_years(); ++t) {
      auto& cell = ind.obs[static_cast<std::size_t>(t)];
      if (!is_missing(cell)) continue;
      if (t == 0 || t + 1 >= ind.n_years())
        throw std::invalid_argument("impute_missing: gap at series edge for "
                                    "individual " + std::to_string(i));
      const auto& prev = ind.obs[static_cast<std::size_t>(t - 1)];
      const auto& next = ind.obs[static_cast<std::size_t>(t + 1)];
      if (is_missing(prev) || is_missing(next))
        throw std::invalid_argument(
            "impute_missing: multi-year gap for individual " +
            std::to_string(i) + "; drop such individuals first");
      const double target = next.y - prev.y;

      std::vector<std::size_t> candidates;
      double nb = neighborhood;
      for (int widen = 0; widen <= 4 && candidates.empty(); ++widen) {
        if (widen > 0) nb *= 2.0;
        for (std::size_t k = 0; k < pool.size(); ++k)
          if (std::fabs(pool[k].change2 - target) <= nb)
            candidates.push_back(k);
      }
      if (candidates.empty())
        throw std::runtime_error(
            "impute_missing: no donor within widened neighborhood for "
            "individual " + std::to_string(i) + ", year " +
            std::to_string(ind.year_at(t)));
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      cell.y = prev.y + pool[candidates[pick(rng)]].increment;
      cell.observed = false;
    }
  }
  return panel;
}

}  // namespace incvol
