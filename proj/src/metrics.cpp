#include "mnmix/metrics.hpp"

#include "mnmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mnmix {

double ccc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DomainError("ccc needs vectors of equal length");
  if (x.size() < 2) throw DomainError("ccc needs at least two values");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    sxx += (x[j] - mx) * (x[j] - mx);
    syy += (y[j] - my) * (y[j] - my);
    sxy += (x[j] - mx) * (y[j] - my);
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  if (sxx == 0.0 && syy == 0.0) throw DomainError("ccc is undefined when both variances are zero");
  return 2.0 * sxy / (sxx + syy + (mx - my) * (mx - my));
}

double cmd(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
  if (x1.rows() != x2.rows() || x1.cols() != x2.cols() || x1.rows() != x1.cols()) {
    throw DomainError("cmd needs square matrices of equal dimension");
  }
  const double denom = x1.norm() * x2.norm();
  if (denom == 0.0) throw DomainError("cmd is undefined for a zero matrix");
  const double value = 1.0 - (x1 * x2).trace() / denom;
  return std::clamp(value, 0.0, 1.0);
}

double relative_bias(const std::vector<double>& estimates, double truth) {
  return relative_bias(estimates, std::vector<double>(estimates.size(), truth));
}

double relative_bias(const std::vector<double>& estimates, const std::vector<double>& truth) {
  if (estimates.size() != truth.size()) throw DomainError("relative bias needs equal lengths");
  if (estimates.empty()) throw DomainError("relative bias needs at least one estimate");
  double sum = 0.0;
  for (std::size_t j = 0; j < estimates.size(); ++j) {
    if (truth[j] == 0.0) throw DomainError("relative bias is undefined for a zero true value");
    sum += std::abs(estimates[j] - truth[j]) / std::abs(truth[j]);
  }
  return sum / static_cast<double>(estimates.size());
}

double coverage(const std::vector<Interval>& intervals, double truth) {
  return coverage(intervals, std::vector<double>(intervals.size(), truth));
}

double coverage(const std::vector<Interval>& intervals, const std::vector<double>& truth) {
  if (intervals.size() != truth.size()) throw DomainError("coverage needs equal lengths");
  if (intervals.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < intervals.size(); ++j) {
    if (intervals[j].lo <= truth[j] && truth[j] <= intervals[j].hi) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

double bic(double loglik, double n_params, double n_obs) {
  if (!(n_obs >= 1.0)) throw DomainError("BIC needs at least one observation");
  return -2.0 * loglik + n_params * std::log(n_obs);
}

std::int64_t n_params(const ModelSpec& spec, int R, int K, int S, int q_lambda, int q_p,
                      ParameterCount convention) {
  std::int64_t count = detection_cell_count(spec.detection_dim, R, K, S);
  count += S + static_cast<std::int64_t>(S) * (S + 1) / 2;
  if (spec.hurdle) count += 1;
  if (convention == ParameterCount::Table) {
    if (spec.autoregressive) count += 2;
    count += 2 * q_lambda;
  } else {
    if (spec.autoregressive) count += S;
    count += static_cast<std::int64_t>(S) * (q_lambda + q_p);
  }
  return count;
}

double mann_kendall_exact_upper(int n, std::int64_t s) {
  if (n < 2) return s <= 0 ? 1.0 : 0.0;
  // Inversion-count distribution of a random permutation, built one element at a
  // time; S = M - 2 * inversions with M = n(n-1)/2.
  const std::int64_t M = static_cast<std::int64_t>(n) * (n - 1) / 2;
  std::vector<double> dist{1.0};
  for (int m = 2; m <= n; ++m) {
    std::vector<double> next(dist.size() + m - 1, 0.0);
    for (std::size_t j = 0; j < dist.size(); ++j) {
      for (int add = 0; add < m; ++add) next[j + add] += dist[j] / m;
    }
    dist.swap(next);
  }
  // S >= s  <=>  inversions <= (M - s) / 2
  const double bound = std::floor(static_cast<double>(M - s) / 2.0);
  if (bound < 0) return 0.0;
  double p = 0.0;
  for (std::size_t j = 0; j < dist.size() && static_cast<double>(j) <= bound; ++j) p += dist[j];
  return std::min(1.0, p);
}

MannKendallResult mann_kendall(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 3) throw DomainError("Mann-Kendall needs a series of length >= 3");
  MannKendallResult r;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) r.S += (x[j] > x[i]) - (x[j] < x[i]);
  }
  std::map<double, int> groups;
  for (double v : x) ++groups[v];
  double tie_var = 0.0, tie_pairs = 0.0;
  for (const auto& [value, t] : groups) {
    (void)value;
    tie_var += static_cast<double>(t) * (t - 1) * (2.0 * t + 5.0);
    tie_pairs += 0.5 * t * (t - 1);
  }
  const double pairs = 0.5 * n * (n - 1);
  if (groups.size() == 1) {
    r.S = 0;
    r.tau = 0.0;
    r.p_value = 0.5;
    return r;
  }
  r.tau = static_cast<double>(r.S) / std::sqrt(pairs * (pairs - tie_pairs));
  r.var_s = (static_cast<double>(n) * (n - 1) * (2.0 * n + 5.0) - tie_var) / 18.0;
  const double sd = std::sqrt(r.var_s);
  if (r.S > 0) {
    r.z = (static_cast<double>(r.S) - 1.0) / sd;
  } else if (r.S < 0) {
    r.z = (static_cast<double>(r.S) + 1.0) / sd;
  }
  const bool ties = tie_pairs > 0.0;
  if (!ties && n <= 50) {
    r.exact = true;
    r.p_value = mann_kendall_exact_upper(n, r.S);
  } else {
    r.p_value = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  }
  return r;
}

}  // namespace mnmix
