#include "mnmix/correlations.hpp"

#include "mnmix/distributions.hpp"
#include "mnmix/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mnmix {

namespace {

Eigen::MatrixXd normalize_covariance(const Eigen::MatrixXd& cov, const Eigen::VectorXd& var) {
  const Eigen::Index S = cov.rows();
  Eigen::MatrixXd rho(S, S);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index r = 0; r < S; ++r) {
      if (s == r) {
        rho(s, r) = 1.0;
        continue;
      }
      const double denom = std::sqrt(var(s) * var(r));
      double value = denom > 0.0 ? 0.5 * (cov(s, r) + cov(r, s)) / denom : 0.0;
      rho(s, r) = std::clamp(value, -1.0, 1.0);
    }
  }
  return rho;
}

void check_sigma(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
    throw DomainError("Sigma must be S x S with S = length of mu");
  }
  if (!sigma.isApprox(sigma.transpose(), 1e-10)) throw DomainError("Sigma must be symmetric");
}

// x / (1 - exp(-x)) and its first two derivatives.
void truncation_factor(double x, double& f, double& df, double& d2f) {
  if (x < 1e-2) {
    const double x2 = x * x;
    f = 1.0 + x / 2.0 + x2 / 12.0 - x2 * x2 / 720.0;
    df = 0.5 + x / 6.0 - x2 * x / 180.0;
    d2f = 1.0 / 6.0 - x2 / 60.0 + x2 * x2 / 1008.0;
    return;
  }
  const double e = std::exp(-x);
  const double g = -std::expm1(-x);
  const double u = g - x * e;
  f = x / g;
  df = u / (g * g);
  d2f = (x * e * g - 2.0 * u * e) / (g * g * g);
}

}  // namespace

Eigen::MatrixXd corr_from_sigma(const Eigen::MatrixXd& sigma) {
  if (!is_positive_definite(sigma)) throw DomainError("Sigma_a must be positive definite");
  const Eigen::VectorXd var = sigma.diagonal();
  return normalize_covariance(sigma, var);
}

Eigen::MatrixXd corr_mnm(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  check_sigma(mu, sigma);
  const LognormalMoments lm = lognormal_moment_vector(mu, sigma);
  // Var(N) = E(lambda) + Var(lambda); Cov(N_s, N_r) = Cov(lambda_s, lambda_r)
  const Eigen::VectorXd var = lm.mean + lm.var;
  return normalize_covariance(lm.cov, var);
}

HurdleConditional hurdle_conditional(double lambda, double theta) {
  double f, df, d2f;
  truncation_factor(lambda, f, df, d2f);
  const double w = 1.0 - theta;
  HurdleConditional h;
  h.m = w * f;
  h.dm = w * df;
  h.d2m = w * d2f;
  // E(N^2 | lambda) = w f (1 + lambda)
  const double second = f * (1.0 + lambda);
  const double d2_second = d2f * (1.0 + lambda) + 2.0 * df;
  h.v = w * second - w * w * f * f;
  h.d2v = w * d2_second - w * w * 2.0 * (df * df + f * d2f);
  return h;
}

Eigen::MatrixXd corr_hurdle(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                            double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw DomainError("theta must lie in (0, 1)");
  check_sigma(mu, sigma);
  const LognormalMoments lm = lognormal_moment_vector(mu, sigma);
  const Eigen::Index S = mu.size();
  Eigen::VectorXd var(S), slope(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const HurdleConditional h = hurdle_conditional(lm.mean(s), theta);
    const double expected_v = h.v + 0.5 * h.d2v * lm.var(s);
    var(s) = std::max(expected_v, 0.0) + h.dm * h.dm * lm.var(s);
    slope(s) = h.dm;
  }
  Eigen::MatrixXd cov = slope.asDiagonal() * lm.cov * slope.asDiagonal();
  return normalize_covariance(cov, var);
}

Eigen::MatrixXd corr_ar(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a,
                        const CorrelationShift& shift, int k,
                        const std::optional<Eigen::VectorXi>& n_prev,
                        std::optional<double> theta) {
  const Eigen::Index S = mu_a.size();
  if (k < 0) throw DomainError("year index must be non-negative");
  Eigen::VectorXd mu = mu_a;
  Eigen::MatrixXd sigma = sigma_a;
  if (shift.beta_mean.size() > 0) mu += shift.beta_mean;
  if (shift.beta_cov.size() > 0) sigma += shift.beta_cov;
  if (k > 0) {
    if (!n_prev || n_prev->size() != S) {
      throw DomainError("previous-year abundance is required for years after the first");
    }
    Eigen::VectorXd L(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      if ((*n_prev)(s) < 0) throw DomainError("previous-year abundance must be non-negative");
      L(s) = std::log((*n_prev)(s) + 1.0);
    }
    if (shift.mu_phi.size() > 0) mu += L.cwiseProduct(shift.mu_phi);
    if (shift.sigma_phi.size() > 0) {
      sigma += L.asDiagonal() * shift.sigma_phi * L.asDiagonal();
    }
  }
  return theta ? corr_hurdle(mu, sigma, *theta) : corr_mnm(mu, sigma);
}

CorrelationReport build_correlation_report(const CorrelationInputs& in) {
  const Eigen::Index S = in.mu_a.size();
  CorrelationReport report;
  report.latent = corr_from_sigma(in.sigma_a);
  report.method = in.hurdle ? "taylor" : "exact";
  const std::optional<double> theta =
      in.hurdle ? std::optional<double>(in.theta) : std::nullopt;
  const bool has_x = in.X.size() > 0 && in.beta.size() > 0;
  const int R = has_x ? static_cast<int>(in.X.rows()) : std::max(in.sites, 1);
  const int K = in.autoregressive ? in.years : 1;
  if (in.autoregressive && K > 1 &&
      in.n_mean.size() != static_cast<std::size_t>(R) * K * S) {
    throw DomainError("AR correlations need the posterior mean abundance of every cell");
  }
  for (int i = 0; i < R; ++i) {
    CorrelationShift shift;
    if (has_x) {
      shift.beta_mean = in.beta * in.X.row(i).transpose();
      if (in.sigma_beta.size() > 0) shift.beta_cov = in.X.row(i).squaredNorm() * in.sigma_beta;
    }
    if (!in.autoregressive) {
      report.abundance.push_back({i, -1, corr_ar(in.mu_a, in.sigma_a, shift, 0, std::nullopt, theta)});
      continue;
    }
    shift.mu_phi = in.mu_phi;
    shift.sigma_phi = in.sigma_phi;
    for (int k = 0; k < K; ++k) {
      std::optional<Eigen::VectorXi> prev;
      if (k > 0) {
        Eigen::VectorXi n(S);
        for (Eigen::Index s = 0; s < S; ++s) {
          const double v = in.n_mean[(static_cast<std::size_t>(i) * K + (k - 1)) * S + s];
          n(s) = static_cast<int>(std::lround(v));
        }
        prev = n;
      }
      report.abundance.push_back({i, k, corr_ar(in.mu_a, in.sigma_a, shift, k, prev, theta)});
    }
  }
  return report;
}

}  // namespace mnmix
