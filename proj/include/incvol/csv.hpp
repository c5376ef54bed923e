#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "incvol/gibbs.hpp"
#include "incvol/panel.hpp"

namespace incvol {

namespace csv_detail {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << std::setprecision(17);
  return f;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return f;
}

}  // namespace csv_detail

// Long-format panel table. Columns: person_id, year, log_income (or a
// column named income, taken as levels), weight, covariate_1..k. An empty
// income field marks a missing year.
struct PanelTable {
  std::vector<int> person_id;
  std::vector<int> year;
  std::vector<double> income;  // log or level per `income_is_log`
  std::vector<double> weight;
  std::vector<std::vector<double>> covariates;  // row-major
  bool income_is_log = true;

  std::size_t n_rows() const { return person_id.size(); }
};

inline PanelTable read_panel_table(const std::string& path) {
  auto f = csv_detail::open_in(path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error(path + ": empty file");
  auto header = csv_detail::split(line);
  int c_person = -1, c_year = -1, c_income = -1, c_weight = -1;
  bool is_log = true;
  std::vector<int> c_cov;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& h = header[static_cast<std::size_t>(c)];
    if (h == "person_id") c_person = c;
    else if (h == "year") c_year = c;
    else if (h == "log_income") { c_income = c; is_log = true; }
    else if (h == "income") { c_income = c; is_log = false; }
    else if (h == "weight") c_weight = c;
    else if (h.rfind("covariate_", 0) == 0) c_cov.push_back(c);
  }
  for (auto [col, name] : {std::pair{c_person, "person_id"},
                           {c_year, "year"},
                           {c_income, "income or log_income"},
                           {c_weight, "weight"}})
    if (col < 0)
      throw std::runtime_error(path + ": missing column " + std::string(name));

  PanelTable t;
  t.income_is_log = is_log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = csv_detail::split(line);
    if (cells.size() < header.size())
      throw std::runtime_error(path + ": short row");
    t.person_id.push_back(std::stoi(cells[static_cast<std::size_t>(c_person)]));
    t.year.push_back(std::stoi(cells[static_cast<std::size_t>(c_year)]));
    t.income.push_back(
        csv_detail::parse_double(cells[static_cast<std::size_t>(c_income)]));
    t.weight.push_back(
        csv_detail::parse_double(cells[static_cast<std::size_t>(c_weight)]));
    std::vector<double> cov;
    for (int c : c_cov)
      cov.push_back(csv_detail::parse_double(cells[static_cast<std::size_t>(c)]));
    t.covariates.push_back(std::move(cov));
  }
  return t;
}

// Groups a long table into contiguous per-individual series. Rows of one
// person must cover a contiguous year range; missing incomes stay NaN.
inline PanelData panel_from_table(const PanelTable& t) {
  std::map<int, std::map<int, PanelObs>> by_person;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    PanelObs o;
    o.y = t.income[r];
    o.weight = std::isfinite(t.weight[r]) ? t.weight[r] : 1.0;
    o.observed = std::isfinite(o.y);
    by_person[t.person_id[r]][t.year[r]] = o;
  }
  PanelData panel;
  for (auto& [pid, rows] : by_person) {
    IndividualSeries ind;
    ind.first_year = rows.begin()->first;
    int expect = ind.first_year;
    for (auto& [yr, o] : rows) {
      while (yr > expect) {  // year absent from the file: a missing cell
        PanelObs gap;
        gap.y = std::numeric_limits<double>::quiet_NaN();
        gap.observed = false;
        ind.obs.push_back(gap);
        ++expect;
      }
      ind.obs.push_back(o);
      ++expect;
    }
    panel.individuals.push_back(std::move(ind));
  }
  return panel;
}

inline void write_panel_csv(const std::string& path, const PanelData& panel) {
  auto f = csv_detail::open_out(path);
  f << "person_id,year,log_income,weight\n";
  for (int i = 0; i < panel.n_individuals(); ++i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    for (int t = 0; t < ind.n_years(); ++t) {
      const auto& o = ind.obs[static_cast<std::size_t>(t)];
      f << i << ',' << ind.year_at(t) << ',';
      if (!is_missing(o)) f << o.y;
      f << ',' << o.weight << '\n';
    }
  }
}

inline void write_truth_csv(const std::string& path, const PanelData& panel,
                            const ShockPanel& truth, const SigmaPanel& sigma) {
  auto f = csv_detail::open_out(path);
  f << "person_id,year,omega,epsilon,sigma_omega_sq,sigma_epsilon_sq,p0\n";
  for (int i = 0; i < panel.n_individuals(); ++i) {
    const auto& ind = panel.individuals[static_cast<std::size_t>(i)];
    for (int t = 0; t < ind.n_years(); ++t) {
      const auto& s = truth.shocks[static_cast<std::size_t>(i)]
                                  [static_cast<std::size_t>(t)];
      const auto& sg =
          sigma[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      f << i << ',' << ind.year_at(t) << ',' << s.omega << ',' << s.epsilon
        << ',' << sg.omega_sq << ',' << sg.epsilon_sq << ','
        << truth.p0[static_cast<std::size_t>(i)] << '\n';
    }
  }
}

// Chain variance draws, columnar: iteration, person_id, year, pair.
inline void write_chain_sigma_csv(const std::string& path,
                                  const std::vector<ChainSnapshot>& chain,
                                  const PanelData& panel) {
  auto f = csv_detail::open_out(path);
  f << "iteration,person_id,year,sigma_omega_sq,sigma_epsilon_sq\n";
  for (const auto& snap : chain)
    for (std::size_t i = 0; i < snap.sigma.size(); ++i) {
      const auto& ind = panel.individuals[i];
      for (std::size_t t = 0; t < snap.sigma[i].size(); ++t)
        f << snap.iteration << ',' << i << ','
          << ind.year_at(static_cast<int>(t)) << ','
          << snap.sigma[i][t].omega_sq << ',' << snap.sigma[i][t].epsilon_sq
          << '\n';
    }
}

inline void write_chain_coeffs_csv(const std::string& path,
                                   const std::vector<ChainSnapshot>& chain) {
  auto f = csv_detail::open_out(path);
  f << "iteration,theta_omega_0,theta_omega_1,theta_omega_2,"
       "theta_epsilon_0,theta_epsilon_1,theta_epsilon_2,gamma_sq\n";
  for (const auto& snap : chain) {
    f << snap.iteration;
    for (double v : snap.coeffs.theta_omega) f << ',' << v;
    for (double v : snap.coeffs.theta_epsilon) f << ',' << v;
    f << ',' << snap.coeffs.gamma_sq << '\n';
  }
}

// Reads chain sigma draws back into snapshots (coefficients stay default;
// summarize only needs the variance draws).
inline std::vector<ChainSnapshot> read_chain_sigma_csv(const std::string& path) {
  auto f = csv_detail::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  auto header = csv_detail::split(line);
  if (header.size() != 5 || header[0] != "iteration")
    throw std::runtime_error(path + ": unexpected chain header");

  std::map<int, std::map<int, std::map<int, SigmaPair>>> cells;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto c = csv_detail::split(line);
    if (c.size() != 5) throw std::runtime_error(path + ": short row");
    int iter = std::stoi(c[0]);
    int person = std::stoi(c[1]);
    int year = std::stoi(c[2]);
    cells[iter][person][year] = {std::stod(c[3]), std::stod(c[4])};
  }
  std::vector<ChainSnapshot> out;
  for (auto& [iter, persons] : cells) {
    ChainSnapshot snap;
    snap.iteration = iter;
    for (auto& [pid, years] : persons) {
      std::vector<SigmaPair> row;
      for (auto& [yr, s] : years) row.push_back(s);
      snap.sigma.push_back(std::move(row));
    }
    out.push_back(std::move(snap));
  }
  return out;
}

inline void write_manifest(const std::string& path,
                           const std::map<std::string, std::string>& kv) {
  auto f = csv_detail::open_out(path);
  for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
}

}  // namespace incvol
