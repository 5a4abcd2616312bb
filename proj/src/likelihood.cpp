#include "mnmix/likelihood.hpp"

#include "mnmix/distributions.hpp"
#include "mnmix/errors.hpp"
#include "latent_sum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mnmix {

namespace {

using detail::concave_window;
using detail::kNegInf;
using detail::log_sigmoid;
using detail::LogSum;
using detail::Window;

// Binomial observation terms of one latent cell with the constants included.
struct CellObservations {
  std::vector<int> y;
  std::vector<double> log_p;
  int max_y = 0;
  double sum_log_1mp = 0.0;
  double constant = 0.0;

  double operator()(int n) const {
    if (n < max_y) return kNegInf;
    const double lf = log_factorial(n);
    double v = constant + n * sum_log_1mp;
    for (int c : y) v += lf - log_factorial(n - c);
    return v;
  }
};

CellObservations cell_observations(const Dataset& d, const ModelSpec& spec, const Parameters& p,
                                   int i, int k, int s) {
  CellObservations obs;
  const int T = d.occasions();
  const auto y = d.occasions(i, k, s);
  obs.y.assign(y.begin(), y.end());
  obs.max_y = d.max_count(i, k, s);
  const double cell_eta =
      p.detection(detection_cell_index(spec.detection_dim, d.years(), d.species(), i, k, s));
  for (int t = 0; t < T; ++t) {
    double eta = cell_eta;
    if (d.q_p() > 0) eta += d.Z().row(static_cast<Eigen::Index>(i) * T + t).dot(p.gamma.row(s));
    const double lp = log_sigmoid(eta), l1mp = log_sigmoid(-eta);
    obs.log_p.push_back(lp);
    obs.sum_log_1mp += l1mp;
    obs.constant += -log_factorial(y[t]) + y[t] * (lp - l1mp);
  }
  return obs;
}

double cut_for(double tail) { return -std::log(tail) + 20.0; }

// Latent states must fit an int; larger rates are given zero likelihood.
constexpr double kMaxRate = 1e9;

// log sum_n latent(n | lambda) obs(n) for one cell.
double cell_loglik(const CellObservations& obs, double log_lambda, double theta, bool hurdle,
                   double tail) {
  const double lambda = std::exp(log_lambda);
  if (!(lambda > 0.0 && lambda <= kMaxRate)) return kNegInf;
  LogSum acc;
  int start = obs.max_y;
  if (hurdle) {
    if (obs.max_y == 0) acc.add(std::log(theta) + obs(0));
    start = std::max(start, 1);
  }
  auto term = [&](int n) { return latent_logpmf(n, log_lambda, lambda, theta, hurdle) + obs(n); };
  const Window w = concave_window(term, start, cut_for(tail), static_cast<int>(lambda));
  for (int n = w.lo; n <= w.hi; ++n) acc.add(term(n));
  return acc.value();
}

// Log-probability of a single occasion's count y when the latent rate is lambda:
// the thinned count is Poisson(lambda p); under the hurdle the value returned is
// theta [y = 0] + (1 - theta) Poisson(y | lambda p) / (1 - exp(-lambda)), which
// is exact for y > 0 and an upper bound for y = 0.
double occasion_logprob(int y, double log_lambda, double log_p, double theta, bool hurdle) {
  const double log_rate = log_lambda + log_p;
  double v = y * log_rate - std::exp(log_rate) - log_factorial(y);
  if (hurdle) {
    v += std::log1p(-theta) - std::log(-std::expm1(-std::exp(log_lambda)));
    if (y == 0) {
      const double zero = std::log(theta);
      v = std::max(v, zero) + std::log1p(std::exp(-std::abs(v - zero)));
    }
  }
  return v;
}

// Closed-form upper bound on cell_loglik: all occasions jointly are no likelier
// than any one of them.
double cell_loglik_bound(const CellObservations& obs, double log_lambda, double theta, bool hurdle) {
  if (!(std::exp(log_lambda) <= kMaxRate)) return kNegInf;
  double best = 0.0;
  for (std::size_t t = 0; t < obs.y.size(); ++t) {
    best = std::min(best, occasion_logprob(obs.y[t], log_lambda, obs.log_p[t], theta, hurdle));
  }
  return best;
}

// Upper bound on a later AR year given only that its rate is exp(eta) (N_prev + 1)^phi,
// so at least exp(eta) for phi >= 0 and at most exp(eta) otherwise. An occasion
// with y > 0 has a single-peaked probability in the rate, decreasing beyond y / p and
// increasing below (y - 1) / p (y / p without the hurdle); it bounds the year when
// exp(eta) lies past the peak in the direction the rate can move.
double ar_year_bound(const CellObservations& obs, double eta, double phi, double theta, bool hurdle) {
  double best = 0.0;
  for (std::size_t t = 0; t < obs.y.size(); ++t) {
    const int y = obs.y[t];
    if (y == 0) continue;
    const double mean = std::exp(eta + obs.log_p[t]);
    const bool past_peak = phi >= 0.0 ? mean >= y : mean <= (hurdle ? y - 1 : y);
    if (past_peak) best = std::min(best, occasion_logprob(y, eta, obs.log_p[t], theta, hurdle));
  }
  return best;
}

// Forward recursion over the years of one (site, species) chain of an AR model.
double ar_chain_loglik(const std::vector<CellObservations>& years, double base_eta, double phi,
                       double theta, bool hurdle, double tail) {
  const double cut = cut_for(tail);
  // previous-year state: zero state (hurdle) plus a contiguous block [first, first + size)
  double prev_zero = kNegInf;
  int first = 0;
  std::vector<double> alpha;

  auto add_year = [&](const CellObservations& obs, const std::vector<int>& prev_n,
                      const std::vector<double>& prev_alpha) {
    // candidate support: hull of the per-rate windows at the extreme previous states
    int start = obs.max_y;
    if (hurdle) start = std::max(start, 1);
    int lo = std::numeric_limits<int>::max(), hi = -1;
    std::vector<int> extremes;
    if (!prev_n.empty()) {
      extremes = {prev_n.front(), prev_n.back()};
    } else {
      extremes = {-1};
    }
    for (int m : extremes) {
      const double ll = m < 0 ? base_eta : base_eta + phi * std::log(m + 1.0);
      const double lambda = std::exp(ll);
      if (!(lambda <= kMaxRate)) return false;
      auto term = [&](int n) { return latent_logpmf(n, ll, lambda, theta, hurdle) + obs(n); };
      const Window w = concave_window(term, start, cut, static_cast<int>(lambda));
      lo = std::min(lo, w.lo);
      hi = std::max(hi, w.hi);
    }
    std::vector<double> out(hi - lo + 1, kNegInf);
    double zero = kNegInf;
    if (prev_n.empty()) {
      const double lambda = std::exp(base_eta);
      for (int n = lo; n <= hi; ++n) {
        out[n - lo] = latent_logpmf(n, base_eta, lambda, theta, hurdle) + obs(n);
      }
      if (hurdle && obs.max_y == 0) zero = std::log(theta) + obs(0);
    } else {
      std::vector<double> ll(prev_n.size()), lam(prev_n.size());
      LogSum total_prev;
      for (std::size_t j = 0; j < prev_n.size(); ++j) {
        ll[j] = base_eta + phi * std::log(prev_n[j] + 1.0);
        lam[j] = std::exp(ll[j]);
        total_prev.add(prev_alpha[j]);
      }
      for (int n = lo; n <= hi; ++n) {
        const double o = obs(n);
        if (!(o > kNegInf)) continue;
        LogSum acc;
        for (std::size_t j = 0; j < prev_n.size(); ++j) {
          acc.add(prev_alpha[j] + latent_logpmf(n, ll[j], lam[j], theta, hurdle));
        }
        out[n - lo] = acc.value() + o;
      }
      if (hurdle && obs.max_y == 0) zero = total_prev.value() + std::log(theta) + obs(0);
    }
    first = lo;
    alpha.swap(out);
    prev_zero = zero;
    return true;
  };

  std::vector<int> prev_n;
  std::vector<double> prev_alpha;
  for (const auto& obs : years) {
    if (!add_year(obs, prev_n, prev_alpha)) return kNegInf;
    double top = prev_zero;
    for (double v : alpha) top = std::max(top, v);
    prev_n.clear();
    prev_alpha.clear();
    if (prev_zero > top - cut) {
      prev_n.push_back(0);
      prev_alpha.push_back(prev_zero);
    }
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      if (alpha[j] > top - cut) {
        prev_n.push_back(first + static_cast<int>(j));
        prev_alpha.push_back(alpha[j]);
      }
    }
    if (prev_n.empty()) return kNegInf;
  }
  LogSum total;
  for (double v : prev_alpha) total.add(v);
  return total.value();
}

double base_eta(const Dataset& d, const Parameters& p, int i, int s, double a) {
  double eta = a;
  if (d.q_lambda() > 0) eta += d.X().row(i).dot(p.beta.row(s));
  return eta;
}

class ChainLikelihood {
 public:
  ChainLikelihood(const Dataset& d, const ModelSpec& spec, const Parameters& p, int i, int s,
                  double tail)
      : spec_(spec), tail_(tail), offset_(base_eta(d, p, i, s, 0.0)),
        theta_(p.theta), phi_(spec.autoregressive ? p.phi(s) : 0.0) {
    for (int k = 0; k < d.years(); ++k) years_.push_back(cell_observations(d, spec, p, i, k, s));
  }

  double operator()(double a) const {
    const double eta = offset_ + a;
    if (spec_.autoregressive) return ar_chain_loglik(years_, eta, phi_, theta_, spec_.hurdle, tail_);
    double total = 0.0;
    for (const auto& obs : years_) total += cell_loglik(obs, eta, theta_, spec_.hurdle, tail_);
    return total;
  }

  // Cheap upper bound on operator(). An AR chain is no likelier than any single
  // year of it.
  double upper_bound(double a) const {
    const double eta = offset_ + a;
    if (years_.empty()) return 0.0;
    if (spec_.autoregressive) {
      double best = cell_loglik_bound(years_.front(), eta, theta_, spec_.hurdle);
      for (std::size_t k = 1; k < years_.size(); ++k) {
        best = std::min(best, ar_year_bound(years_[k], eta, phi_, theta_, spec_.hurdle));
      }
      return best;
    }
    double total = 0.0;
    for (const auto& obs : years_) total += cell_loglik_bound(obs, eta, theta_, spec_.hurdle);
    return total;
  }

 private:
  const ModelSpec& spec_;
  double tail_;
  double offset_;
  double theta_;
  double phi_;
  std::vector<CellObservations> years_;
};

void check_point(const Dataset& d, const ModelSpec& spec, const Parameters& p) {
  const int R = d.sites(), S = d.species();
  if (p.a.rows() != R || p.a.cols() != S) throw DomainError("a must be R x S");
  if (p.detection.size() != detection_cell_count(spec.detection_dim, R, d.years(), S)) {
    throw DomainError("detection parameter has the wrong size");
  }
  if (spec.hurdle && !(p.theta > 0.0 && p.theta < 1.0)) {
    throw DomainError("theta must lie in (0, 1)");
  }
  if (spec.autoregressive && p.phi.size() != S) throw DomainError("phi must have length S");
}

}  // namespace

int latent_upper_bound(double lambda, double theta, bool hurdle, double tail) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("rate must be positive");
  if (!(tail > 0.0 && tail < 1.0)) throw DomainError("tail must lie in (0, 1)");
  if (lambda > 200.0) {
    const double z = std::sqrt(-2.0 * std::log(tail));
    return static_cast<int>(std::ceil(lambda + 1.5 * z * std::sqrt(lambda) + 2.0 * z * z));
  }
  const double ll = std::log(lambda);
  double cdf = hurdle ? theta : 0.0;
  for (int n = hurdle ? 1 : 0;; ++n) {
    cdf += std::exp(latent_logpmf(n, ll, lambda, theta, hurdle));
    if (cdf >= 1.0 - tail) return n;
  }
}

double marginal_loglik(const Dataset& d, const ModelSpec& spec, const Parameters& p,
                       double tail) {
  check_point(d, spec, p);
  double total = 0.0;
  for (int i = 0; i < d.sites(); ++i) {
    for (int s = 0; s < d.species(); ++s) {
      total += ChainLikelihood(d, spec, p, i, s, tail)(p.a(i, s));
    }
  }
  return total;
}

double site_species_loglik(const Dataset& d, const ModelSpec& spec, const Parameters& p, int i,
                           int s, double a, double tail) {
  check_point(d, spec, p);
  return ChainLikelihood(d, spec, p, i, s, tail)(a);
}

double integrated_loglik(const Dataset& d, const ModelSpec& spec, const Parameters& p,
                         const IntegrationOptions& opt) {
  check_point(d, spec, p);
  const int R = d.sites(), S = d.species();
  if (opt.draws < 1) throw DomainError("at least one importance draw is required");
  Eigen::LLT<Eigen::MatrixXd> sigma_llt(p.sigma_a);
  if (sigma_llt.info() != Eigen::Success) throw DomainError("Sigma_a must be positive definite");
  const Eigen::MatrixXd precision = sigma_llt.solve(Eigen::MatrixXd::Identity(S, S));
  double log_det_sigma = 0.0;
  for (int s = 0; s < S; ++s) log_det_sigma += 2.0 * std::log(sigma_llt.matrixL()(s, s));
  const double log_2pi = std::log(2.0 * M_PI);
  const double prior_const = -0.5 * (S * log_2pi + log_det_sigma);
  constexpr double kNu = 5.0;
  constexpr double kStep = 1e-3;

  double total = 0.0;
  for (int i = 0; i < R; ++i) {
    std::vector<ChainLikelihood> lik;
    lik.reserve(S);
    for (int s = 0; s < S; ++s) lik.emplace_back(d, spec, p, i, s, opt.tail);

    auto log_prior = [&](const Eigen::VectorXd& a) {
      const Eigen::VectorXd r = a - p.mu_a;
      return prior_const - 0.5 * r.dot(precision * r);
    };
    // The log-likelihood is never positive, so a point whose prior term is already
    // below `floor` is not evaluated further.
    auto log_target = [&](const Eigen::VectorXd& a, double floor = kNegInf) {
      double v = log_prior(a);
      if (v < floor) return kNegInf;
      if (floor > kNegInf) {
        double bound = v;
        for (int s = 0; s < S && bound >= floor; ++s) bound += lik[s].upper_bound(a(s));
        if (bound < floor) return kNegInf;
      }
      for (int s = 0; s < S; ++s) v += lik[s](a(s));
      return v;
    };

    // Laplace centre by damped Newton with finite-difference curvature per species.
    Eigen::VectorXd a = p.mu_a;
    double current = log_target(a);
    Eigen::MatrixXd neg_hessian = precision;
    for (int iter = 0; iter < 100; ++iter) {
      Eigen::VectorXd grad = -precision * (a - p.mu_a);
      Eigen::VectorXd curv(S);
      for (int s = 0; s < S; ++s) {
        const double up = lik[s](a(s) + kStep), mid = lik[s](a(s)), down = lik[s](a(s) - kStep);
        grad(s) += (up - down) / (2.0 * kStep);
        curv(s) = (up - 2.0 * mid + down) / (kStep * kStep);
      }
      neg_hessian = precision;
      for (int s = 0; s < S; ++s) neg_hessian(s, s) += std::max(-curv(s), 0.0);
      Eigen::LLT<Eigen::MatrixXd> h_llt(neg_hessian);
      Eigen::VectorXd step = h_llt.solve(grad);
      const double longest = step.lpNorm<Eigen::Infinity>();
      if (longest > 1.0) step /= longest;
      double t = 1.0;
      bool moved = false;
      for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
        const Eigen::VectorXd cand = a + t * step;
        const double value = log_target(cand, current);
        if (value >= current) {
          moved = value > current;
          a = cand;
          current = value;
          break;
        }
      }
      if (!moved || grad.lpNorm<Eigen::Infinity>() < 1e-7 || (t * step).norm() < 1e-9) break;
    }

    // multivariate t importance sampling around the Laplace centre
    Eigen::LLT<Eigen::MatrixXd> h_llt(neg_hessian);
    const Eigen::MatrixXd cov = h_llt.solve(Eigen::MatrixXd::Identity(S, S));
    Eigen::LLT<Eigen::MatrixXd> cov_llt(cov);
    const Eigen::MatrixXd L = cov_llt.matrixL();
    double log_det_cov = 0.0;
    for (int s = 0; s < S; ++s) log_det_cov += 2.0 * std::log(L(s, s));
    const double t_const = std::lgamma(0.5 * (kNu + S)) - std::lgamma(0.5 * kNu) -
                           0.5 * S * std::log(kNu * M_PI) - 0.5 * log_det_cov;
    RngStream rng(opt.seed, static_cast<std::uint64_t>(i));
    LogSum acc;
    const double reference = current - t_const;
    for (int m = 0; m < opt.draws; ++m) {
      Eigen::VectorXd z(S);
      for (int s = 0; s < S; ++s) z(s) = rng.normal();
      const double scale = std::sqrt(kNu / rng.chi_squared(kNu));
      const Eigen::VectorXd x = a + scale * (L * z);
      const double delta = z.squaredNorm() * scale * scale;
      const double log_q = t_const - 0.5 * (kNu + S) * std::log1p(delta / kNu);
      acc.add(log_target(x, reference + log_q - 60.0) - log_q);
    }
    total += acc.value() - std::log(static_cast<double>(opt.draws));
  }
  return total;
}

BicResult model_bic(const Dataset& d, const ModelSpec& spec, const Parameters& p,
                    ParameterCount convention, const IntegrationOptions& opt) {
  BicResult r;
  r.loglik = integrated_loglik(d, spec, p, opt);
  r.n_params = n_params(spec, d.sites(), d.years(), d.species(), d.q_lambda(), d.q_p(), convention);
  r.n_obs = static_cast<double>(d.count_cells());
  r.bic = bic(r.loglik, static_cast<double>(r.n_params), r.n_obs);
  return r;
}

}  // namespace mnmix
