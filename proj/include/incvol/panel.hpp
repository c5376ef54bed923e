#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace incvol {

// One person-year of excess log income. `observed == false` marks an
// imputed (or still-missing, when y is NaN) value: usable by the sampler,
// excluded from descriptive moments.
struct PanelObs {
  double y = 0.0;
  double weight = 1.0;
  bool observed = true;
};

inline bool is_missing(const PanelObs& o) { return !std::isfinite(o.y); }

// Contiguous year-indexed series for one individual.
struct IndividualSeries {
  int first_year = 0;
  std::vector<PanelObs> obs;

  int n_years() const { return static_cast<int>(obs.size()); }
  int last_year() const { return first_year + n_years() - 1; }
  int year_at(int t) const { return first_year + t; }
  // Local index of a calendar year, or -1 if outside the series.
  int index_of(int year) const {
    int t = year - first_year;
    return (t >= 0 && t < n_years()) ? t : -1;
  }
};

// Ragged panel of excess log income with weights and observed flags.
struct PanelData {
  std::vector<IndividualSeries> individuals;

  int n_individuals() const { return static_cast<int>(individuals.size()); }

  std::size_t n_person_years() const {
    std::size_t n = 0;
    for (const auto& ind : individuals) n += ind.obs.size();
    return n;
  }

  int first_year() const {
    int y = std::numeric_limits<int>::max();
    for (const auto& ind : individuals)
      if (ind.n_years() > 0) y = std::min(y, ind.first_year);
    return y;
  }

  int last_year() const {
    int y = std::numeric_limits<int>::min();
    for (const auto& ind : individuals)
      if (ind.n_years() > 0) y = std::max(y, ind.last_year());
    return y;
  }
};

// Latent permanent/transitory shock pair for one person-year.
struct Shocks {
  double omega = 0.0;
  double epsilon = 0.0;
};

// Shock draws aligned with a companion PanelData, plus the per-individual
// initial permanent level p0.
struct ShockPanel {
  std::vector<double> p0;
  std::vector<std::vector<Shocks>> shocks;

  static ShockPanel zeros_like(const PanelData& panel) {
    ShockPanel s;
    s.p0.assign(panel.individuals.size(), 0.0);
    s.shocks.resize(panel.individuals.size());
    for (std::size_t i = 0; i < panel.individuals.size(); ++i)
      s.shocks[i].assign(panel.individuals[i].obs.size(), Shocks{});
    return s;
  }

  void check_aligned(const PanelData& panel) const {
    if (shocks.size() != panel.individuals.size() ||
        p0.size() != panel.individuals.size())
      throw std::invalid_argument("ShockPanel not aligned with panel");
    for (std::size_t i = 0; i < shocks.size(); ++i)
      if (shocks[i].size() != panel.individuals[i].obs.size())
        throw std::invalid_argument("ShockPanel not aligned with panel");
  }
};

// (sigma^2_omega, sigma^2_epsilon) pair.
struct SigmaPair {
  double omega_sq = 0.0;
  double epsilon_sq = 0.0;
};

// Per person-year variance pairs, e.g. a simulation ground truth.
using SigmaPanel = std::vector<std::vector<SigmaPair>>;

}  // namespace incvol
