#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace incvol {

inline double weighted_mean(const std::vector<double>& v,
                            const std::vector<double>& w) {
  if (v.size() != w.size()) throw std::invalid_argument("size mismatch");
  double sw = 0.0, swv = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sw += w[i];
    swv += w[i] * v[i];
  }
  if (sw <= 0.0) throw std::invalid_argument("weighted_mean: no weight");
  return swv / sw;
}

// Left-continuous inverse of the weighted empirical CDF: the smallest
// sample value x with F(x) >= q.
inline double weighted_quantile(std::vector<double> v, std::vector<double> w,
                                double q) {
  if (v.empty() || v.size() != w.size())
    throw std::invalid_argument("weighted_quantile: bad input");
  if (q < 0.0 || q > 1.0)
    throw std::invalid_argument("weighted_quantile: q outside [0,1]");
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total <= 0.0) throw std::invalid_argument("weighted_quantile: no weight");
  double cum = 0.0;
  for (std::size_t k : idx) {
    cum += w[k];
    if (cum >= q * total - 1e-12 * total) return v[k];
  }
  return v[idx.back()];
}

struct WlsLine {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

// Weighted least squares of y on (1, x); the usual OLS standard error for
// the slope under the weight matrix.
inline WlsLine wls_line(const std::vector<double>& x,
                        const std::vector<double>& y,
                        const std::vector<double>& w) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n || w.size() != n)
    throw std::invalid_argument("wls_line: need >= 3 points");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xbar = sx / sw, ybar = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
    sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
  }
  if (sxx <= 0.0) throw std::invalid_argument("wls_line: degenerate x");
  WlsLine out;
  out.slope = sxy / sxx;
  out.intercept = ybar - out.slope * xbar;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = y[i] - out.intercept - out.slope * x[i];
    rss += w[i] * e * e;
  }
  double dof = static_cast<double>(n) - 2.0;
  out.slope_se = dof > 0.0 ? std::sqrt(rss / dof / sxx) : 0.0;
  return out;
}

}  // namespace incvol
