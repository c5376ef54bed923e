#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "incvol/panel.hpp"
#include "incvol/stats.hpp"

namespace incvol {

// One reduced-form moment value (a squared change or a permanent-variance
// product) located at a person-year.
struct MomentCell {
  int person = 0;
  int year = 0;
  double value = 0.0;
  double weight = 1.0;
};

using MomentSeries = std::vector<MomentCell>;

// (y_t - y_{t-span})^2, placed at year t. Cells touching imputed or
// missing observations are skipped.
inline MomentSeries squared_change(const PanelData& panel, int span = 2) {
  if (span < 1) throw std::invalid_argument("squared_change: span >= 1");
  MomentSeries out;
  for (int i = 0; i < panel.n_individuals(); ++i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    for (int t = span; t < ind.n_years(); ++t) {
      const auto& a = ind.obs[static_cast<std::size_t>(t - span)];
      const auto& b = ind.obs[static_cast<std::size_t>(t)];
      if (!a.observed || !b.observed || is_missing(a) || is_missing(b))
        continue;
      double d = b.y - a.y;
      out.push_back({i, ind.year_at(t), d * d, b.weight});
    }
  }
  return out;
}

// Meghir-Pistaferri permanent-variance moment at year t: the product of
// the two-year change (t-2 to t) and the six-year change spanning it
// (t-4 to t+2). Identifies the permanent-shock variance: transitory
// shocks net out of the expectation.
inline MomentSeries permanent_variance_moment(const PanelData& panel) {
  MomentSeries out;
  for (int i = 0; i < panel.n_individuals(); ++i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    for (int t = 4; t + 2 < ind.n_years(); ++t) {
      const auto* o4 = &ind.obs[static_cast<std::size_t>(t - 4)];
      const auto* o2 = &ind.obs[static_cast<std::size_t>(t - 2)];
      const auto* o0 = &ind.obs[static_cast<std::size_t>(t)];
      const auto* p2 = &ind.obs[static_cast<std::size_t>(t + 2)];
      bool ok = true;
      for (const auto* o : {o4, o2, o0, p2})
        if (!o->observed || is_missing(*o)) ok = false;
      if (!ok) continue;
      double v = (o0->y - o2->y) * (p2->y - o4->y);
      out.push_back({i, ind.year_at(t), v, o0->weight});
    }
  }
  return out;
}

struct CohortRow {
  int year = 0;
  std::optional<double> low_mean;   // below-median cohort
  std::optional<double> high_mean;  // above-95th-percentile cohort
  int low_n = 0;
  int high_n = 0;
};

// Splits each year's moment values by the person's own value `lag` years
// earlier: the low cohort sat strictly below that year's weighted median,
// the high cohort strictly above its weighted 95th percentile. Quantiles
// are computed with weights within the lagged year; values exactly at a
// threshold belong to neither cohort.
inline std::vector<CohortRow> cohort_split(const MomentSeries& series,
                                           int lag = 4, double low_q = 0.5,
                                           double high_q = 0.95) {
  if (lag < 1) throw std::invalid_argument("cohort_split: lag >= 1");
  std::map<std::pair<int, int>, const MomentCell*> by_cell;
  std::map<int, std::vector<const MomentCell*>> by_year;
  for (const auto& c : series) {
    by_cell[{c.person, c.year}] = &c;
    by_year[c.year].push_back(&c);
  }

  std::vector<CohortRow> rows;
  for (const auto& [year, cells] : by_year) {
    auto lagged = by_year.find(year - lag);
    if (lagged == by_year.end()) continue;
    std::vector<double> lv, lw;
    for (const auto* c : lagged->second) {
      lv.push_back(c->value);
      lw.push_back(c->weight);
    }
    const double med = weighted_quantile(lv, lw, low_q);
    const double p95 = weighted_quantile(lv, lw, high_q);

    double low_sw = 0.0, low_sv = 0.0, high_sw = 0.0, high_sv = 0.0;
    CohortRow row;
    row.year = year;
    for (const auto* c : cells) {
      auto it = by_cell.find({c->person, year - lag});
      if (it == by_cell.end()) continue;
      const double past = it->second->value;
      if (past > p95) {
        high_sw += c->weight;
        high_sv += c->weight * c->value;
        row.high_n += 1;
      } else if (past < med) {
        low_sw += c->weight;
        low_sv += c->weight * c->value;
        row.low_n += 1;
      }
    }
    if (low_sw > 0.0) row.low_mean = low_sv / low_sw;
    if (high_sw > 0.0) row.high_mean = high_sv / high_sw;
    rows.push_back(row);
  }
  return rows;
}

struct YearValue {
  int year = 0;
  double value = 0.0;
  double weight = 1.0;
};

struct TrendStats {
  double slope = 0.0;
  double t_stat = 0.0;
  std::optional<double> pct_change;  // slope x span / full-sample mean x 100
};

// Trend regression of year-specific moments on calendar year. By default
// years enter unweighted; pass weight_years=true to weight by the supplied
// per-year weights. The percent change rescales the slope by the span and
// the full-sample weighted mean.
inline TrendStats trend_stats(const std::vector<YearValue>& yearly,
                              std::pair<int, int> span_years = {1968, 2005},
                              bool weight_years = false) {
  if (yearly.size() < 3)
    throw std::invalid_argument("trend_stats: need >= 3 years");
  std::vector<double> x, v, w, fw;
  for (const auto& yv : yearly) {
    x.push_back(static_cast<double>(yv.year));
    v.push_back(yv.value);
    w.push_back(weight_years ? yv.weight : 1.0);
    fw.push_back(yv.weight);
  }
  const auto line = wls_line(x, v, w);
  TrendStats out;
  out.slope = line.slope;
  out.t_stat = line.slope_se > 0.0 ? line.slope / line.slope_se : 0.0;
  const double full_mean = weighted_mean(v, fw);
  if (full_mean != 0.0)
    out.pct_change = line.slope *
                     static_cast<double>(span_years.second - span_years.first) /
                     full_mean * 100.0;
  return out;
}

// Weighted mean of a moment series per calendar year; the per-year weight
// is the total cell weight.
inline std::vector<YearValue> yearly_means(const MomentSeries& series) {
  std::map<int, std::pair<double, double>> acc;  // year -> (sum w, sum wv)
  for (const auto& c : series) {
    auto& e = acc[c.year];
    e.first += c.weight;
    e.second += c.weight * c.value;
  }
  std::vector<YearValue> out;
  for (const auto& [year, e] : acc)
    if (e.first > 0.0) out.push_back({year, e.second / e.first, e.first});
  return out;
}

}  // namespace incvol
