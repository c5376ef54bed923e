// Command-line front end: simulate | preprocess | moments | fit | summarize.
// Every subcommand is a pure function of its input files, configuration,
// and seed; rerunning with the same inputs rewrites identical outputs.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "incvol/csv.hpp"
#include "incvol/gibbs.hpp"
#include "incvol/moments.hpp"
#include "incvol/posterior.hpp"
#include "incvol/preprocess.hpp"

namespace fs = std::filesystem;
using namespace incvol;

namespace {

// Flat key=value configuration; any key can be overridden by the flag of
// the same name.
std::map<std::string, std::string> load_config(const std::string& path) {
  std::map<std::string, std::string> kv;
  if (path.empty()) return kv;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

struct RunConfig {
  std::string input;
  std::string truth;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int threads = static_cast<int>(std::thread::hardware_concurrency());

  // survey-scale defaults: {Theta, Theta_i, theta} = {1,1,1}, 10000 iterations,
  // 5000 burn-in
  HyperParams hypers;
  int n_iter = 10000;
  int burn_in = 5000;
  int n_chains = 2;
  int thin = 1;
  bool debug_validate = false;

  double neighborhood = 0.05;
  std::string deflator_csv;
  double top_anchor = 99999.0;
  int top_anchor_year = 1982;
  double bottom_anchor = 5150.0;
  int bottom_anchor_year = 2005;

  // simulate
  int sim_n = 100;
  int sim_t = 20;
  int sim_first_year = 1970;
  double sim_gamma_sq = 0.01;
  std::string sim_theta_omega = "0.381,0.865,0.951";
  std::string sim_theta_epsilon = "0.784,0.180,0.036";
  std::string sim_sigma_omega = "0.01,0.05,0.3";
  std::string sim_sigma_epsilon = "0.05,0.25,1.2";
  double sim_p0_sd = 0.0;
};

std::array<double, 3> parse_triplet(const std::string& s) {
  std::array<double, 3> out{};
  std::stringstream ss(s);
  std::string tok;
  for (int k = 0; k < 3; ++k) {
    if (!std::getline(ss, tok, ','))
      throw std::runtime_error("expected three comma-separated values: " + s);
    out[static_cast<std::size_t>(k)] = std::stod(tok);
  }
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "input") cfg.input = v;
    else if (k == "truth") cfg.truth = v;
    else if (k == "out") cfg.out_dir = v;
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "threads") cfg.threads = std::stoi(v);
    else if (k == "Theta") cfg.hypers.Theta = std::stod(v);
    else if (k == "Theta_i") cfg.hypers.Theta_i = std::stod(v);
    else if (k == "theta") cfg.hypers.theta = std::stod(v);
    else if (k == "proposal_shape") cfg.hypers.proposal_shape = std::stod(v);
    else if (k == "proposal_scale") cfg.hypers.proposal_scale = std::stod(v);
    else if (k == "n_iter") cfg.n_iter = std::stoi(v);
    else if (k == "burn_in") cfg.burn_in = std::stoi(v);
    else if (k == "n_chains") cfg.n_chains = std::stoi(v);
    else if (k == "thin") cfg.thin = std::stoi(v);
    else if (k == "debug_validate") cfg.debug_validate = v == "1" || v == "true";
    else if (k == "neighborhood") cfg.neighborhood = std::stod(v);
    else if (k == "deflator") cfg.deflator_csv = v;
    else if (k == "top_anchor") cfg.top_anchor = std::stod(v);
    else if (k == "top_anchor_year") cfg.top_anchor_year = std::stoi(v);
    else if (k == "bottom_anchor") cfg.bottom_anchor = std::stod(v);
    else if (k == "bottom_anchor_year") cfg.bottom_anchor_year = std::stoi(v);
    else if (k == "sim_n") cfg.sim_n = std::stoi(v);
    else if (k == "sim_t") cfg.sim_t = std::stoi(v);
    else if (k == "sim_first_year") cfg.sim_first_year = std::stoi(v);
    else if (k == "sim_gamma_sq") cfg.sim_gamma_sq = std::stod(v);
    else if (k == "sim_theta_omega") cfg.sim_theta_omega = v;
    else if (k == "sim_theta_epsilon") cfg.sim_theta_epsilon = v;
    else if (k == "sim_sigma_omega") cfg.sim_sigma_omega = v;
    else if (k == "sim_sigma_epsilon") cfg.sim_sigma_epsilon = v;
    else if (k == "sim_p0_sd") cfg.sim_p0_sd = std::stod(v);
    else throw std::runtime_error("unknown config key: " + k);
  }
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / name;
}

int cmd_simulate(const RunConfig& cfg) {
  IncomeCoefficients c;
  c.theta_omega = parse_triplet(cfg.sim_theta_omega);
  c.theta_epsilon = parse_triplet(cfg.sim_theta_epsilon);
  // Round the supplied transitory weights onto the sum-to-one constraint.
  c.normalize_epsilon();
  c.gamma_sq = cfg.sim_gamma_sq;

  auto sig_w = parse_list(cfg.sim_sigma_omega);
  auto sig_e = parse_list(cfg.sim_sigma_epsilon);
  if (sig_w.size() != sig_e.size() || sig_w.empty())
    throw std::runtime_error(
        "sim_sigma_omega and sim_sigma_epsilon must list the same number of "
        "cluster values");

  // Each individual keeps one volatility cluster for its whole span.
  SigmaPanel truth(static_cast<std::size_t>(cfg.sim_n));
  auto rng = make_rng(cfg.seed, {90u});
  std::uniform_int_distribution<std::size_t> pick(0, sig_w.size() - 1);
  for (auto& row : truth) {
    auto k = pick(rng);
    row.assign(static_cast<std::size_t>(cfg.sim_t), {sig_w[k], sig_e[k]});
  }

  SimOptions opts;
  opts.first_year = cfg.sim_first_year;
  opts.p0_sd = cfg.sim_p0_sd;
  auto sim = simulate_panel(c, truth, cfg.seed, opts);

  write_panel_csv(out_path(cfg, "panel.csv").string(), sim.panel);
  write_truth_csv(out_path(cfg, "truth.csv").string(), sim.panel, sim.truth,
                  truth);
  std::cout << "wrote " << out_path(cfg, "panel.csv").string() << " ("
            << cfg.sim_n << " x " << cfg.sim_t << ")\n";
  return 0;
}

int cmd_preprocess(const RunConfig& cfg) {
  if (cfg.input.empty()) throw std::runtime_error("preprocess: --input required");
  auto table = read_panel_table(cfg.input);

  std::vector<double> log_income(table.n_rows());
  if (!table.income_is_log) {
    CodeTable codes;
    codes.top_anchor = cfg.top_anchor;
    codes.top_anchor_year = cfg.top_anchor_year;
    codes.bottom_anchor = cfg.bottom_anchor;
    codes.bottom_anchor_year = cfg.bottom_anchor_year;
    if (cfg.deflator_csv.empty())
      throw std::runtime_error(
          "preprocess: income in levels needs --deflator (year,deflator CSV)");
    std::ifstream f(cfg.deflator_csv);
    if (!f) throw std::runtime_error("cannot read " + cfg.deflator_csv);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto c = line.find(',');
      codes.deflator[std::stoi(line.substr(0, c))] =
          std::stod(line.substr(c + 1));
    }
    for (std::size_t r = 0; r < table.n_rows(); ++r)
      log_income[r] = std::isfinite(table.income[r])
                          ? std::log(apply_income_codes(table.income[r],
                                                        table.year[r], codes))
                          : table.income[r];
  } else {
    log_income = table.income;
  }

  // Residualize over the observed rows only.
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table.n_rows(); ++r)
    if (std::isfinite(log_income[r])) rows.push_back(r);
  const std::size_t k = table.covariates.empty() ? 0 : table.covariates[0].size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(k + 1));
  std::vector<double> y(rows.size()), w(rows.size());
  std::vector<int> years(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    auto r = rows[j];
    y[j] = log_income[r];
    w[j] = table.weight[r];
    years[j] = table.year[r];
    x(static_cast<Eigen::Index>(j), 0) = 1.0;
    for (std::size_t c = 0; c < k; ++c)
      x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c + 1)) =
          table.covariates[r][c];
  }
  auto resid = residualize(y, x, w, years);

  PanelTable out = table;
  out.income_is_log = true;
  out.income.assign(table.n_rows(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < rows.size(); ++j) out.income[rows[j]] = resid[j];

  auto panel = panel_from_table(out);
  panel = impute_missing(panel, cfg.seed, cfg.neighborhood);
  write_panel_csv(out_path(cfg, "excess.csv").string(), panel);
  std::cout << "wrote " << out_path(cfg, "excess.csv").string() << "\n";
  return 0;
}

int cmd_moments(const RunConfig& cfg) {
  if (cfg.input.empty()) throw std::runtime_error("moments: --input required");
  auto panel = panel_from_table(read_panel_table(cfg.input));

  auto sq = squared_change(panel);
  auto mp = permanent_variance_moment(panel);

  {
    auto f = csv_detail::open_out(out_path(cfg, "moments.csv").string());
    f << "series,year,mean,median,p95\n";
    for (const auto* series : {&sq, &mp}) {
      std::string name = series == &sq ? "squared_change" : "permanent_variance";
      std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
      for (const auto& c : *series) {
        by_year[c.year].first.push_back(c.value);
        by_year[c.year].second.push_back(c.weight);
      }
      for (auto& [year, vw] : by_year)
        f << name << ',' << year << ','
          << weighted_mean(vw.first, vw.second) << ','
          << weighted_quantile(vw.first, vw.second, 0.5) << ','
          << weighted_quantile(vw.first, vw.second, 0.95) << '\n';
    }
  }
  {
    auto f = csv_detail::open_out(out_path(cfg, "cohorts.csv").string());
    f << "series,year,low_mean,high_mean\n";
    for (const auto* series : {&sq, &mp}) {
      std::string name = series == &sq ? "squared_change" : "permanent_variance";
      for (const auto& row : cohort_split(*series)) {
        f << name << ',' << row.year << ',';
        if (row.low_mean) f << *row.low_mean;
        f << ',';
        if (row.high_mean) f << *row.high_mean;
        f << '\n';
      }
    }
  }
  {
    auto f = csv_detail::open_out(out_path(cfg, "trends.csv").string());
    f << "series,slope,t_stat,pct_change\n";
    for (const auto* series : {&sq, &mp}) {
      std::string name = series == &sq ? "squared_change" : "permanent_variance";
      auto yearly = yearly_means(*series);
      if (yearly.size() < 3) continue;
      auto ts = trend_stats(yearly,
                            {panel.first_year(), panel.last_year()});
      f << name << ',' << ts.slope << ',' << ts.t_stat << ',';
      if (ts.pct_change) f << *ts.pct_change;
      f << '\n';
    }
  }
  std::cout << "wrote moments.csv, cohorts.csv, trends.csv in " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_fit(const RunConfig& cfg) {
  if (cfg.input.empty()) throw std::runtime_error("fit: --input required");
  auto panel = panel_from_table(read_panel_table(cfg.input));
  for (const auto& ind : panel.individuals)
    for (const auto& o : ind.obs)
      if (is_missing(o))
        throw std::runtime_error(
            "fit: panel has missing years; run preprocess (imputation) first");

  cfg.hypers.validate();
  std::vector<std::vector<ChainSnapshot>> chains(
      static_cast<std::size_t>(cfg.n_chains));
  // Whole chains run in parallel; step-2 threading is used only when
  // there are spare cores beyond the chain count.
  const int inner = std::max(1, cfg.threads / std::max(1, cfg.n_chains));
  detail::parallel_for(cfg.n_chains, cfg.threads, [&](int c) {
    ChainOptions opts;
    opts.n_iter = cfg.n_iter;
    opts.burn_in = cfg.burn_in;
    opts.thin = cfg.thin;
    opts.threads = inner;
    opts.debug_validate = cfg.debug_validate;
    opts.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(c)});
    chains[static_cast<std::size_t>(c)] = run_chain(panel, cfg.hypers, opts);
  });

  for (int c = 0; c < cfg.n_chains; ++c) {
    auto tag = std::to_string(c);
    write_chain_sigma_csv(out_path(cfg, "chain_" + tag + "_sigma.csv").string(),
                          chains[static_cast<std::size_t>(c)], panel);
    write_chain_coeffs_csv(
        out_path(cfg, "chain_" + tag + "_coeffs.csv").string(),
        chains[static_cast<std::size_t>(c)]);
  }
  write_manifest(out_path(cfg, "manifest.txt").string(),
                 {{"seed", std::to_string(cfg.seed)},
                  {"n_iter", std::to_string(cfg.n_iter)},
                  {"burn_in", std::to_string(cfg.burn_in)},
                  {"n_chains", std::to_string(cfg.n_chains)},
                  {"thin", std::to_string(cfg.thin)},
                  {"Theta", std::to_string(cfg.hypers.Theta)},
                  {"Theta_i", std::to_string(cfg.hypers.Theta_i)},
                  {"theta", std::to_string(cfg.hypers.theta)},
                  {"proposal_shape", std::to_string(cfg.hypers.proposal_shape)},
                  {"proposal_scale", std::to_string(cfg.hypers.proposal_scale)},
                  {"input", cfg.input}});
  std::cout << "wrote " << cfg.n_chains << " chains + manifest in "
            << cfg.out_dir << "\n";
  return 0;
}

int cmd_summarize(const RunConfig& cfg) {
  if (cfg.input.empty())
    throw std::runtime_error(
        "summarize: --input required (panel CSV; chains looked up in --out)");
  auto panel = panel_from_table(read_panel_table(cfg.input));

  std::vector<std::vector<ChainSnapshot>> chains;
  for (int c = 0;; ++c) {
    auto p = fs::path(cfg.out_dir) /
             ("chain_" + std::to_string(c) + "_sigma.csv");
    if (!fs::exists(p)) break;
    chains.push_back(read_chain_sigma_csv(p.string()));
  }
  if (chains.empty())
    throw std::runtime_error("summarize: no chain_*_sigma.csv in " +
                             cfg.out_dir);

  auto summary = posterior_means(chains);
  {
    auto f = csv_detail::open_out(out_path(cfg, "yearly.csv").string());
    f << "variance_kind,year,mean,median,p95\n";
    for (auto kind : {VarianceKind::permanent, VarianceKind::transitory}) {
      std::string name =
          kind == VarianceKind::permanent ? "permanent" : "transitory";
      for (const auto& r : yearly_distribution(summary, panel, kind))
        f << name << ',' << r.year << ',' << r.mean << ',' << r.median << ','
          << r.p95 << '\n';
    }
  }
  {
    // Plot-ready long format.
    auto f = csv_detail::open_out(out_path(cfg, "yearly_long.csv").string());
    f << "year,quantile,value,variance_kind\n";
    for (auto kind : {VarianceKind::permanent, VarianceKind::transitory}) {
      std::string name =
          kind == VarianceKind::permanent ? "permanent" : "transitory";
      for (const auto& r : yearly_distribution(summary, panel, kind)) {
        f << r.year << ",mean," << r.mean << ',' << name << '\n';
        f << r.year << ",p50," << r.median << ',' << name << '\n';
        f << r.year << ",p95," << r.p95 << ',' << name << '\n';
      }
    }
  }
  std::cout << "wrote yearly.csv, yearly_long.csv in " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous income-volatility estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  RunConfig cfg;

  // Flags override file keys: flag values are folded into `overrides`,
  // which is applied after the config file.
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    for (const char* key : {"seed", "threads", "out", "input"})
      sub->add_option_function<std::string>(
          std::string("--") + key,
          [&overrides, key](const std::string& v) { overrides[key] = v; },
          std::string("config key ") + key);
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&](const std::vector<std::string>& vals) {
          for (const auto& v : vals) {
            auto eq = v.find('=');
            if (eq == std::string::npos)
              throw CLI::ValidationError("--set expects key=value");
            overrides[v.substr(0, eq)] = v.substr(eq + 1);
          }
        },
        "override any config key, key=value (repeatable)");
  };

  auto* sim = app.add_subcommand("simulate", "write a synthetic panel + truth");
  auto* pre = app.add_subcommand("preprocess",
                                 "top/bottom-code, residualize, impute");
  auto* mom = app.add_subcommand("moments", "reduced-form volatility tables");
  auto* fit = app.add_subcommand("fit", "run the Gibbs sampler chains");
  auto* summ = app.add_subcommand("summarize", "posterior yearly tables");
  for (auto* sub : {sim, pre, mom, fit, summ}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    apply_config(cfg, load_config(config_path));
    apply_config(cfg, overrides);
    if (sim->parsed()) return cmd_simulate(cfg);
    if (pre->parsed()) return cmd_preprocess(cfg);
    if (mom->parsed()) return cmd_moments(cfg);
    if (fit->parsed()) return cmd_fit(cfg);
    if (summ->parsed()) return cmd_summarize(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
