#include "mnmix/distributions.hpp"

#include "mnmix/errors.hpp"
#include "mnmix/model.hpp"

#include <cmath>
#include <string>

namespace mnmix {

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d6e6d78u};
  engine_.seed(seq);
}

double RngStream::uniform() {
  // 53 random bits mapped to the open interval (0, 1)
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

int RngStream::poisson(double lambda) {
  if (lambda <= 0.0) return 0;
  std::poisson_distribution<int> dist(lambda);
  return dist(engine_);
}

int RngStream::binomial(int n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<int> dist(n, p);
  return dist(engine_);
}

double RngStream::gamma(double shape, double scale) {
  std::gamma_distribution<double> dist(shape, scale);
  return dist(engine_);
}

double RngStream::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

double RngStream::chi_squared(double df) { return gamma(0.5 * df, 2.0); }

int RngStream::uniform_int(int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(engine_);
}

int sample_poisson(RngStream& rng, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("Poisson rate must be positive and finite");
  }
  return rng.poisson(lambda);
}

int sample_ztp(RngStream& rng, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("zero-truncated Poisson rate must be positive and finite");
  }
  if (lambda > 30.0) {
    int n = 0;
    while (n == 0) n = rng.poisson(lambda);
    return n;
  }
  const double u = rng.uniform();
  int k = 1;
  double pmf = lambda / std::expm1(lambda);
  double cdf = pmf;
  const int k_max = 200 + static_cast<int>(10.0 * lambda);
  while (u > cdf && k < k_max) {
    ++k;
    pmf *= lambda / k;
    cdf += pmf;
  }
  return k;
}

int sample_hurdle_poisson(RngStream& rng, double lambda, double theta) {
  if (!(theta >= 0.0 && theta < 1.0)) throw DomainError("hurdle zero probability must lie in [0, 1)");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("hurdle rate must be positive and finite");
  }
  if (rng.uniform() < theta) return 0;
  return sample_ztp(rng, lambda);
}

int sample_binomial(RngStream& rng, int n, double p) {
  if (n < 0 || !(p >= 0.0 && p <= 1.0)) throw DomainError("invalid binomial parameters");
  return rng.binomial(n, p);
}

double sample_beta(RngStream& rng, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("Beta shapes must be positive");
  return rng.beta(a, b);
}

bool is_positive_definite(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  if (!m.isApprox(m.transpose(), 1e-10)) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

Eigen::VectorXd sample_mvnormal(RngStream& rng, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw DomainError("covariance dimension does not match the mean");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("covariance is not positive definite");
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
  return mean + llt.matrixL() * z;
}

Eigen::VectorXd sample_mvnormal_canonical(RngStream& rng, const Eigen::VectorXd& shift,
                                          const Eigen::MatrixXd& precision) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw DomainError("precision is not positive definite");
  const Eigen::VectorXd mean = llt.solve(shift);
  Eigen::VectorXd z(shift.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
  // precision = L L', so L'^{-1} z has covariance precision^{-1}
  return mean + llt.matrixU().solve(z);
}

Eigen::MatrixXd sample_inverse_wishart(RngStream& rng, const Eigen::MatrixXd& scale, double df) {
  const Eigen::Index S = scale.rows();
  if (scale.cols() != S || S == 0) throw DomainError("inverse-Wishart scale must be square");
  if (df <= static_cast<double>(S) - 1.0) {
    throw DomainError("inverse-Wishart degrees of freedom must exceed S - 1");
  }
  Eigen::LLT<Eigen::MatrixXd> scale_llt(scale);
  if (scale_llt.info() != Eigen::Success) {
    throw DomainError("inverse-Wishart scale is not positive definite");
  }
  const Eigen::MatrixXd inv_scale = scale_llt.solve(Eigen::MatrixXd::Identity(S, S));
  Eigen::LLT<Eigen::MatrixXd> inv_llt(inv_scale);
  const Eigen::MatrixXd L = inv_llt.matrixL();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(S, S);
  for (Eigen::Index j = 0; j < S; ++j) {
    A(j, j) = std::sqrt(rng.chi_squared(df - static_cast<double>(j)));
    for (Eigen::Index r = j + 1; r < S; ++r) A(r, j) = rng.normal();
  }
  // Wishart draw W = (L A)(L A)'; its inverse is M^{-T} M^{-1} with M = L A lower triangular.
  const Eigen::MatrixXd M = L * A;
  const Eigen::MatrixXd M_inv =
      M.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(S, S));
  Eigen::MatrixXd iw = M_inv.transpose() * M_inv;
  return 0.5 * (iw + iw.transpose());
}

double ztp_logpmf(int n, double lambda) {
  if (n < 1) return -std::numeric_limits<double>::infinity();
  return n * std::log(lambda) - lambda - log_factorial(n) - std::log(-std::expm1(-lambda));
}

double ztp_mean(double lambda) { return lambda / (-std::expm1(-lambda)); }

LognormalMoments lognormal_moment_vector(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  const Eigen::Index S = mu.size();
  if (sigma.rows() != S || sigma.cols() != S) throw DomainError("Sigma must be S x S");
  LognormalMoments m;
  m.mean.resize(S);
  m.var.resize(S);
  m.cov.resize(S, S);
  for (Eigen::Index s = 0; s < S; ++s) m.mean(s) = std::exp(mu(s) + 0.5 * sigma(s, s));
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index r = 0; r < S; ++r) {
      const double sym = 0.5 * (sigma(s, r) + sigma(r, s));
      m.cov(s, r) = std::exp(mu(s) + mu(r) + 0.5 * (sigma(s, s) + sigma(r, r))) * std::expm1(sym);
    }
    m.var(s) = m.cov(s, s);
  }
  if (!m.mean.allFinite() || !m.cov.allFinite()) {
    throw InvalidStateError("log-normal moments overflow");
  }
  return m;
}

}  // namespace mnmix
