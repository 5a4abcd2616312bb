#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace mnmix {

// A reproducible random stream. Identical (seed, stream) pairs give identical
// sequences; the pair is mixed through std::seed_seq so distinct stream ids give
// decorrelated Mersenne-Twister states.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  double uniform();  // (0, 1)
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  int poisson(double lambda);
  int binomial(int n, double p);
  double gamma(double shape, double scale);
  double beta(double a, double b);
  double chi_squared(double df);
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

int sample_poisson(RngStream& rng, double lambda);
// Zero-truncated Poisson: sequential inverse CDF for lambda <= 30, Poisson
// rejection above.
int sample_ztp(RngStream& rng, double lambda);
// 0 with probability theta, otherwise a zero-truncated Poisson draw.
int sample_hurdle_poisson(RngStream& rng, double lambda, double theta);
int sample_binomial(RngStream& rng, int n, double p);
double sample_beta(RngStream& rng, double a, double b);

Eigen::VectorXd sample_mvnormal(RngStream& rng, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& cov);
// Draw from N(precision^{-1} * shift, precision^{-1}) using the Cholesky factor of the precision.
Eigen::VectorXd sample_mvnormal_canonical(RngStream& rng, const Eigen::VectorXd& shift,
                                          const Eigen::MatrixXd& precision);
// Bartlett decomposition of Wishart(scale^{-1}, df), inverted. Mean is scale / (df - S - 1).
Eigen::MatrixXd sample_inverse_wishart(RngStream& rng, const Eigen::MatrixXd& scale, double df);

double ztp_logpmf(int n, double lambda);
double ztp_mean(double lambda);

bool is_positive_definite(const Eigen::MatrixXd& m);

struct LognormalMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd cov;
};

// Moments of lambda = exp(x), x ~ MVN(mu, sigma).
LognormalMoments lognormal_moment_vector(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

}  // namespace mnmix
