#include "mnmix/correlations.hpp"
#include "mnmix/distributions.hpp"
#include "mnmix/errors.hpp"

#include "doctest.h"

#include <cmath>

using namespace mnmix;

namespace {

Eigen::MatrixXd mat2(double a, double b, double c) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, b, c;
  return m;
}

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

// Empirical correlation of (N1, N2) drawn through the full log-normal hierarchy.
double monte_carlo_corr(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                        std::optional<double> theta, int draws, std::uint64_t seed) {
  RngStream rng(seed, 0);
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const Eigen::MatrixXd L = llt.matrixL();
  double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
  Eigen::VectorXd z(2);
  for (int j = 0; j < draws; ++j) {
    z << rng.normal(), rng.normal();
    const Eigen::VectorXd x = mu + L * z;
    double n[2];
    for (int s = 0; s < 2; ++s) {
      const double lambda = std::exp(x(s));
      n[s] = theta ? sample_hurdle_poisson(rng, lambda, *theta) : sample_poisson(rng, lambda);
    }
    s1 += n[0];
    s2 += n[1];
    s11 += n[0] * n[0];
    s22 += n[1] * n[1];
    s12 += n[0] * n[1];
  }
  const double m1 = s1 / draws, m2 = s2 / draws;
  const double cov = s12 / draws - m1 * m2;
  return cov / std::sqrt((s11 / draws - m1 * m1) * (s22 / draws - m2 * m2));
}

void check_correlation_matrix(const Eigen::MatrixXd& m) {
  CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((m.diagonal().array() - 1.0).abs().maxCoeff() < 1e-10);
  CHECK(m.cwiseAbs().maxCoeff() <= 1.0 + 1e-10);
}

}  // namespace

TEST_CASE("corr_from_sigma") {
  CHECK(corr_from_sigma(mat2(4, 2, 4))(0, 1) == doctest::Approx(0.5));
  CHECK(corr_from_sigma(mat2(2, 0, 9)).isIdentity(0.0));
  CHECK_THROWS_AS(corr_from_sigma(mat2(1, 2, 1)), DomainError);
}

TEST_CASE("corr_mnm closed form") {
  const Eigen::MatrixXd r = corr_mnm(vec2(0, 0), mat2(1, 0.5, 1));
  const double e = std::exp(0.5);
  const double var = e + std::exp(1.0) * (std::exp(1.0) - 1.0);
  const double cov = e * e * (std::exp(0.5) - 1.0);
  CHECK(var == doctest::Approx(6.31949).epsilon(1e-5));
  CHECK(std::abs(cov - 1.76351) < 2e-4);
  CHECK(r(0, 1) == doctest::Approx(cov / var).epsilon(1e-12));
  CHECK(r(0, 1) == doctest::Approx(0.27906).epsilon(1e-4));
  check_correlation_matrix(r);
  CHECK(corr_mnm(vec2(1, 2), mat2(0.5, 0.0, 0.3))(0, 1) == 0.0);
}

TEST_CASE("corr_mnm against Monte Carlo") {
  const double mc = monte_carlo_corr(vec2(0, 0), mat2(1, 0.5, 1), std::nullopt, 2000000, 31);
  CHECK(std::abs(corr_mnm(vec2(0, 0), mat2(1, 0.5, 1))(0, 1) - mc) < 0.015);
}

TEST_CASE("corr_mnm attenuates and keeps sign") {
  RngStream rng(32, 0);
  for (int rep = 0; rep < 200; ++rep) {
    Eigen::MatrixXd A(3, 3);
    for (int i = 0; i < 3; ++i) for (int j = 0; j < 3; ++j) A(i, j) = rng.normal();
    const Eigen::MatrixXd sigma = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd mu(3);
    for (int s = 0; s < 3; ++s) mu(s) = rng.normal(0.0, 1.0);
    const Eigen::MatrixXd r = corr_mnm(mu, sigma);
    const Eigen::MatrixXd base = corr_from_sigma(sigma);
    check_correlation_matrix(r);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        CHECK(std::abs(r(i, j)) < std::abs(base(i, j)));
        CHECK((r(i, j) > 0) == (sigma(i, j) > 0));
      }
    }
  }
}

TEST_CASE("corr_hurdle") {
  CHECK_THROWS_AS(corr_hurdle(vec2(1, 1), mat2(0.5, 0.2, 0.5), 0.0), DomainError);
  CHECK_THROWS_AS(corr_hurdle(vec2(1, 1), mat2(0.5, 0.2, 0.5), 1.0), DomainError);
  CHECK(corr_hurdle(vec2(1, 1), mat2(0.5, 0.0, 0.5), 0.3)(0, 1) == 0.0);

  // Negligible zero probability and truncation: approaches corr_mnm.
  const Eigen::MatrixXd h = corr_hurdle(vec2(3, 3), mat2(0.2, 0.1, 0.2), 1e-9);
  const Eigen::MatrixXd m = corr_mnm(vec2(3, 3), mat2(0.2, 0.1, 0.2));
  CHECK(std::abs(h(0, 1) - m(0, 1)) < 0.02);
  check_correlation_matrix(h);

  const double mc = monte_carlo_corr(vec2(1, 1), mat2(0.5, 0.2, 0.5), 0.3, 2000000, 33);
  CHECK(std::abs(corr_hurdle(vec2(1, 1), mat2(0.5, 0.2, 0.5), 0.3)(0, 1) - mc) < 0.05);
}

TEST_CASE("hurdle conditional derivatives") {
  const double theta = 0.4, lambda = 1.7, h = 1e-4;
  const auto c = hurdle_conditional(lambda, theta);
  const auto up = hurdle_conditional(lambda + h, theta);
  const auto down = hurdle_conditional(lambda - h, theta);
  CHECK(c.m == doctest::Approx((1 - theta) * lambda / (1 - std::exp(-lambda))).epsilon(1e-12));
  CHECK(c.dm == doctest::Approx((up.m - down.m) / (2 * h)).epsilon(1e-6));
  CHECK(c.d2m == doctest::Approx((up.m - 2 * c.m + down.m) / (h * h)).epsilon(1e-4));
  CHECK(c.d2v == doctest::Approx((up.v - 2 * c.v + down.v) / (h * h)).epsilon(1e-4));
  // Variance from the pmf directly.
  double m1 = 0, m2 = 0;
  for (int k = 1; k < 100; ++k) {
    const double pk = (1 - theta) * std::exp(ztp_logpmf(k, lambda));
    m1 += k * pk;
    m2 += double(k) * k * pk;
  }
  CHECK(c.v == doctest::Approx(m2 - m1 * m1).epsilon(1e-10));
}

TEST_CASE("corr_ar reduces to corr_mnm") {
  const Eigen::VectorXd mu = vec2(0.5, 1.0);
  const Eigen::MatrixXd sigma = mat2(0.6, -0.3, 0.4);
  CorrelationShift none;
  CHECK(corr_ar(mu, sigma, none, 0, std::nullopt) == corr_mnm(mu, sigma));

  Eigen::VectorXi prev(2);
  prev << 5, 12;
  CorrelationShift zero_phi;
  zero_phi.mu_phi = Eigen::VectorXd::Zero(2);
  zero_phi.sigma_phi = Eigen::MatrixXd::Zero(2, 2);
  for (int k = 1; k < 5; ++k) {
    const Eigen::MatrixXd r = corr_ar(mu, sigma, zero_phi, k, prev);
    CHECK((r - corr_mnm(mu, sigma)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(corr_ar(mu, sigma, none, 2, std::nullopt), DomainError);
}
