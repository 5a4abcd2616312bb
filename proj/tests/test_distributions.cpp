#include "mnmix/distributions.hpp"
#include "mnmix/errors.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

using namespace mnmix;

namespace {

// Upper tail of chi-square(df) via the regularised lower incomplete gamma series.
double chi_square_upper(double stat, int df) {
  const double a = 0.5 * df, x = 0.5 * stat;
  if (x <= 0) return 1.0;
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 5000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (term < sum * 1e-16) break;
  }
  const double lower = std::exp(-x + a * std::log(x) - std::lgamma(a)) * sum;
  return 1.0 - lower;
}

double ztp_pmf_reference(int k, double lambda) {
  return std::exp(k * std::log(lambda) - lambda - std::lgamma(k + 1.0)) / (1.0 - std::exp(-lambda));
}

}  // namespace

TEST_CASE("streams are reproducible and distinct") {
  RngStream a(42, 0), b(42, 0), c(42, 1);
  bool differs = false;
  for (int j = 0; j < 100; ++j) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    differs |= x != c.uniform();
  }
  CHECK(differs);
}

TEST_CASE("zero-truncated Poisson mean matches the series") {
  double series = 0.0;
  for (int k = 1; k <= 100; ++k) series += k * ztp_pmf_reference(k, 1.0);
  CHECK(series == doctest::Approx(1.58198).epsilon(1e-5));
  CHECK(ztp_mean(1.0) == doctest::Approx(series).epsilon(1e-12));

  RngStream rng(1, 0);
  const int n = 1000000;
  double total = 0.0;
  int zeros = 0;
  for (int j = 0; j < n; ++j) {
    const int v = sample_ztp(rng, 1.0);
    zeros += v == 0;
    total += v;
  }
  CHECK(zeros == 0);
  CHECK(std::abs(total / n - series) < 0.005);
}

TEST_CASE("zero-truncated Poisson goodness of fit") {
  for (double lambda : {0.1, 1.0, 10.0, 45.0}) {
    CAPTURE(lambda);
    RngStream rng(2024, static_cast<std::uint64_t>(lambda * 10));
    const int n = 1000000;
    std::map<int, long> observed;
    for (int j = 0; j < n; ++j) ++observed[sample_ztp(rng, lambda)];
    CHECK(observed.count(0) == 0);
    // Pool the tails so every bin has expected count >= 5.
    std::vector<double> expected;
    std::vector<long> counts;
    double pending_e = 0.0;
    long pending_o = 0;
    for (int k = 1; k <= 400; ++k) {
      pending_e += n * ztp_pmf_reference(k, lambda);
      pending_o += observed.count(k) ? observed[k] : 0;
      if (pending_e >= 5.0) {
        expected.push_back(pending_e);
        counts.push_back(pending_o);
        pending_e = 0.0;
        pending_o = 0;
      }
    }
    long beyond = 0;
    for (const auto& [k, c] : observed) beyond += k > 400 ? c : 0;
    expected.back() += pending_e;
    counts.back() += pending_o + beyond;
    double stat = 0.0;
    for (std::size_t b = 0; b < expected.size(); ++b) {
      stat += (counts[b] - expected[b]) * (counts[b] - expected[b]) / expected[b];
    }
    const int df = static_cast<int>(expected.size()) - 1;
    CHECK(chi_square_upper(stat, df) > 0.001);
  }
}

TEST_CASE("chi-square tail helper") {
  CHECK(chi_square_upper(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(chi_square_upper(18.307038053275146, 10) == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("hurdle Poisson zero fraction") {
  RngStream rng(3, 0);
  const int n = 200000;
  int zeros = 0;
  for (int j = 0; j < n; ++j) zeros += sample_hurdle_poisson(rng, 2.0, 0.7) == 0;
  CHECK(std::abs(static_cast<double>(zeros) / n - 0.7) < 0.005);
}

TEST_CASE("ztp log pmf") {
  CHECK(ztp_logpmf(0, 2.0) == -std::numeric_limits<double>::infinity());
  CHECK(ztp_logpmf(3, 2.5) == doctest::Approx(std::log(ztp_pmf_reference(3, 2.5))).epsilon(1e-12));
  RngStream rng(1, 1);
  CHECK_THROWS_AS(sample_ztp(rng, 0.0), DomainError);
}

TEST_CASE("inverse Wishart moments and definiteness") {
  RngStream rng(5, 0);
  const Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(3, 3);
  Eigen::MatrixXd inverse_total = Eigen::MatrixXd::Zero(3, 3);
  std::vector<double> diag;
  const int n = 400000;
  for (int j = 0; j < n; ++j) {
    const Eigen::MatrixXd w = sample_inverse_wishart(rng, scale, 6.0);
    if (j < 1000) {
      CHECK(is_positive_definite(w));
      CHECK((w - w.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
    total += w;
    inverse_total += w.inverse();
    diag.push_back(w(0, 0));
  }
  // The diagonal of IW(I, 6) in three dimensions has infinite variance, so the
  // mean converges slowly; its inverse is Wishart with mean 6 I and the diagonal
  // is inverse-gamma(2, 1/2), both checked tightly.
  total /= n;
  inverse_total /= n;
  CHECK((total - 0.5 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.03);
  CHECK((inverse_total - 6.0 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.05);
  std::sort(diag.begin(), diag.end());
  double ks = 0.0;
  for (std::size_t j = 0; j < diag.size(); j += 97) {
    const double z = 0.5 / diag[j];
    const double cdf = std::exp(-z) * (1.0 + z);
    ks = std::max(ks, std::abs(cdf - (j + 0.5) / diag.size()));
  }
  CHECK(ks < 0.005);
}

TEST_CASE("multivariate normal moments") {
  RngStream rng(6, 0);
  Eigen::VectorXd mean(2);
  mean << 1.0, -2.0;
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.6, 0.6, 1.0;
  const int n = 200000;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd x = sample_mvnormal(rng, mean, cov);
    m += x;
    c += (x - mean) * (x - mean).transpose();
  }
  m /= n;
  c /= n;
  CHECK((m - mean).cwiseAbs().maxCoeff() < 0.02);
  CHECK((c - cov).cwiseAbs().maxCoeff() < 0.03);

  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(sample_mvnormal(rng, mean, bad), DomainError);
}

TEST_CASE("canonical normal draw") {
  RngStream rng(8, 0);
  Eigen::MatrixXd precision(1, 1);
  precision << 4.0;
  Eigen::VectorXd shift(1);
  shift << 2.0;
  double s = 0.0, ss = 0.0;
  const int n = 200000;
  for (int j = 0; j < n; ++j) {
    const double x = sample_mvnormal_canonical(rng, shift, precision)(0);
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(ss / n - mean * mean == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("log-normal moments") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Ones(1, 1);
  const auto m = lognormal_moment_vector(mu, sigma);
  CHECK(m.mean(0) == doctest::Approx(1.64872).epsilon(1e-5));
  CHECK(m.var(0) == doctest::Approx(4.67077).epsilon(1e-5));
  CHECK(m.mean(0) == doctest::Approx(std::exp(0.5)).epsilon(1e-14));
  CHECK(m.var(0) == doctest::Approx((std::exp(1.0) - 1.0) * std::exp(1.0)).epsilon(1e-14));
}

TEST_CASE("binomial and beta draws") {
  RngStream rng(9, 0);
  double s = 0.0, b = 0.0;
  const int n = 100000;
  for (int j = 0; j < n; ++j) {
    s += sample_binomial(rng, 10, 0.3);
    b += sample_beta(rng, 2.0, 5.0);
  }
  CHECK(s / n == doctest::Approx(3.0).epsilon(0.01));
  CHECK(b / n == doctest::Approx(2.0 / 7.0).epsilon(0.01));
  CHECK(sample_binomial(rng, 0, 0.4) == 0);
}
