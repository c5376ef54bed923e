#include <cmath>
#include <map>

#include "doctest.h"
#include "incvol/preprocess.hpp"

using namespace incvol;

namespace {

// Deflator matching the PSID top-code scale: the $99,999 top code in 1982
// corresponds to $202,281 in 2005 dollars.
CodeTable psid_scale_table() {
  CodeTable t;
  t.deflator = {{1982, 1.0}, {1999, 1.7}, {2000, 1.75}, {2001, 1.8},
                {2005, 202281.0 / 99999.0}};
  return t;
}

}  // namespace

TEST_CASE("top and bottom codes at the 1982 and 2005 anchors") {
  auto t = psid_scale_table();
  CHECK(apply_income_codes(3714946.0, 2005, t) == doctest::Approx(202281.0).epsilon(1e-6));
  CHECK(apply_income_codes(0.0, 2005, t) == doctest::Approx(5150.0));
  CHECK(apply_income_codes(50000.0, 2005, t) == doctest::Approx(50000.0));
  CHECK_THROWS_AS(apply_income_codes(1.0, 1890, t), std::out_of_range);
  CHECK_THROWS_AS(apply_income_codes(-5.0, 2005, t), std::invalid_argument);
}

TEST_CASE("log top-bottom gap constant across years") {
  auto t = psid_scale_table();
  double ref = std::log(t.top_code(1982)) - std::log(t.bottom_code(1982));
  for (int year : {1999, 2000, 2001, 2005}) {
    double gap = std::log(t.top_code(year)) - std::log(t.bottom_code(year));
    CHECK(std::fabs(gap - ref) < 1e-9);
  }
}

TEST_CASE("apply_income_codes idempotent") {
  auto t = psid_scale_table();
  for (double inc : {0.0, 4000.0, 80000.0, 9.9e6}) {
    double once = apply_income_codes(inc, 2001, t);
    CHECK(apply_income_codes(once, 2001, t) == once);
  }
}

TEST_CASE("residualize with intercept only demeans") {
  std::vector<double> y = {1.0, 2.0, 3.0, 4.0};
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 1);
  std::vector<double> w = {1.0, 1.0, 1.0, 1.0};
  std::vector<int> years = {1990, 1990, 1991, 1991};
  auto r = residualize(y, x, w, years);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(r[i] == doctest::Approx(y[i] - 2.5));
}

TEST_CASE("residualize matches a direct normal-equations solve") {
  // 5-point synthetic set with unequal weights, checked against
  // (X'WX)^{-1} X'Wy computed by hand here.
  std::vector<double> y = {1.3, 0.2, -0.7, 2.4, 0.9};
  std::vector<double> w = {1.0, 2.0, 0.5, 1.5, 1.0};
  std::vector<int> years(5, 2000);
  Eigen::MatrixXd x(5, 2);
  x << 1, 0.1, 1, -0.4, 1, 1.2, 1, 0.7, 1, -0.9;

  Eigen::MatrixXd wm = Eigen::MatrixXd::Zero(5, 5);
  // Year normalization rescales all weights by a common factor here
  // (single year), which cannot change the fit.
  for (int i = 0; i < 5; ++i) wm(i, i) = w[static_cast<std::size_t>(i)];
  Eigen::VectorXd yv(5);
  for (int i = 0; i < 5; ++i) yv(i) = y[static_cast<std::size_t>(i)];
  Eigen::VectorXd beta =
      (x.transpose() * wm * x).ldlt().solve(x.transpose() * wm * yv);

  auto r = residualize(y, x, w, years);
  double mean_w = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(r[i] == doctest::Approx(yv(static_cast<int>(i)) -
                                  x.row(static_cast<int>(i)).dot(beta))
                      .epsilon(1e-10));
    mean_w += w[i] * r[i];
    sum_w += w[i];
  }
  CHECK(std::fabs(mean_w / sum_w) < 1e-8);  // weighted residual mean zero
}

TEST_CASE("residualize invariant to rescaling all weights") {
  std::vector<double> y = {0.4, 1.2, -0.3, 0.8, 2.2, 0.0};
  std::vector<double> w = {1.0, 0.5, 2.0, 1.0, 0.7, 1.3};
  std::vector<int> years = {2000, 2000, 2000, 2001, 2001, 2001};
  Eigen::MatrixXd x(6, 2);
  x << 1, 0.3, 1, -0.2, 1, 0.9, 1, 0.5, 1, -0.7, 1, 0.1;
  auto r1 = residualize(y, x, w, years);
  for (auto& v : w) v *= 7.5;
  auto r2 = residualize(y, x, w, years);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(r1[i] == doctest::Approx(r2[i]).epsilon(1e-12));
}

TEST_CASE("residualize names collinear columns") {
  std::vector<double> y = {1, 2, 3, 4};
  std::vector<double> w = {1, 1, 1, 1};
  std::vector<int> years(4, 1999);
  Eigen::MatrixXd x(4, 3);
  x << 1, 2, 4, 1, 3, 6, 1, 5, 10, 1, 7, 14;  // col2 = 2 * col1
  CHECK_THROWS_WITH_AS(residualize(y, x, w, years),
                       doctest::Contains("collinear"), std::invalid_argument);
}

namespace {

PanelData gap_panel() {
  // Individual 0 has the footnote-10 gap: 0.1 (1999), missing (2000),
  // 0.5 (2001). Individual 1 supplies the donor path 0.6, 0.7, 1.0.
  PanelData p;
  IndividualSeries a;
  a.first_year = 1999;
  a.obs = {{0.1, 1.0, true},
           {std::numeric_limits<double>::quiet_NaN(), 1.0, false},
           {0.5, 1.0, true}};
  IndividualSeries b;
  b.first_year = 1972;
  b.obs = {{0.6, 1.0, true}, {0.7, 1.0, true}, {1.0, 1.0, true}};
  p.individuals = {a, b};
  return p;
}

}  // namespace

TEST_CASE("impute_missing reproduces the footnote example") {
  auto filled = impute_missing(gap_panel(), 5, 0.05);
  const auto& cell = filled.individuals[0].obs[1];
  CHECK(cell.y == doctest::Approx(0.2));
  CHECK_FALSE(cell.observed);  // imputed points flagged for moments
  // Observed cells untouched, two-year change across the gap preserved.
  CHECK(filled.individuals[0].obs[0].y == 0.1);
  CHECK(filled.individuals[0].obs[2].y == 0.5);
}

TEST_CASE("impute_missing zero-change donors fill the flanking value") {
  PanelData p;
  IndividualSeries a;
  a.first_year = 2000;
  a.obs = {{0.3, 1.0, true},
           {std::numeric_limits<double>::quiet_NaN(), 1.0, false},
           {0.3, 1.0, true}};
  IndividualSeries donor;
  donor.first_year = 1980;
  donor.obs = {{1.1, 1.0, true}, {1.1, 1.0, true}, {1.1, 1.0, true}};
  p.individuals = {a, donor};
  auto filled = impute_missing(p, 9);
  CHECK(filled.individuals[0].obs[1].y == doctest::Approx(0.3));
}

TEST_CASE("impute_missing rejects multi-year gaps") {
  PanelData p;
  IndividualSeries a;
  a.first_year = 2000;
  a.obs = {{0.1, 1.0, true},
           {std::numeric_limits<double>::quiet_NaN(), 1.0, false},
           {std::numeric_limits<double>::quiet_NaN(), 1.0, false},
           {0.4, 1.0, true}};
  p.individuals = {a};
  CHECK_THROWS(impute_missing(p, 1));
}

TEST_CASE("impute_missing fill distribution matches the donor set") {
  // Three donors with increments 0.1, 0.2, 0.3 all inside the
  // neighborhood; over many seeds the fill should be uniform over them.
  PanelData p;
  IndividualSeries a;
  a.first_year = 2000;
  a.obs = {{0.0, 1.0, true},
           {std::numeric_limits<double>::quiet_NaN(), 1.0, false},
           {0.4, 1.0, true}};
  p.individuals = {a};
  for (double inc : {0.1, 0.2, 0.3}) {
    IndividualSeries d;
    d.first_year = 1980;
    d.obs = {{0.0, 1.0, true}, {inc, 1.0, true}, {0.41, 1.0, true}};
    p.individuals.push_back(d);
  }
  std::map<int, int> hits;
  const int n_seeds = 10000;
  for (int s = 0; s < n_seeds; ++s) {
    auto filled = impute_missing(p, static_cast<std::uint64_t>(s), 0.05);
    hits[static_cast<int>(std::lround(filled.individuals[0].obs[1].y * 10))]++;
  }
  // Chi-square against uniform over 3 donors; 1% critical value, 2 dof.
  double chi2 = 0.0;
  double expect = n_seeds / 3.0;
  for (int k : {1, 2, 3}) {
    double d = hits[k] - expect;
    chi2 += d * d / expect;
  }
  CHECK(chi2 < 9.21);
}
