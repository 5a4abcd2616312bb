#include "mnmix/errors.hpp"
#include "mnmix/model.hpp"

#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

using namespace mnmix;

namespace {

// Reference binomial log-pmf from lgamma, independent of the library tables.
double binom_logpmf(int y, int n, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0) +
         y * std::log(p) + (n - y) * std::log1p(-p);
}

Dataset small_dataset(int R, int T, int K, int S, int q = 0) {
  std::vector<int> counts(static_cast<std::size_t>(R) * T * K * S, 1);
  Eigen::MatrixXd X;
  if (q > 0) X = Eigen::MatrixXd::Constant(R, q, 1.0);
  return Dataset(R, T, K, S, counts, X);
}

}  // namespace

TEST_CASE("compute_lambda identity and AR arithmetic") {
  const Dataset d = small_dataset(2, 2, 2, 1, 1);
  ModelSpec plain = ModelSpec::make(1, false, false, DetectionDim::C);
  Parameters p = Parameters::zeros(d, plain);
  p.beta.setZero();
  CHECK(compute_lambda(p, d, plain, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));

  ModelSpec ar = ModelSpec::make(1, false, true, DetectionDim::C);
  p.a(0, 0) = 1.0;
  p.beta(0, 0) = 0.5;  // x = 1
  p.phi(0) = 0.2;
  const double expected_log = 1.5 + 0.2 * std::log(10.0);
  CHECK(expected_log == doctest::Approx(1.96052).epsilon(1e-5));
  CHECK(compute_lambda(p, d, ar, 0, 1, 0, 9) == doctest::Approx(std::exp(expected_log)).epsilon(1e-12));
  CHECK(compute_lambda(p, d, ar, 0, 1, 0, 9) == doctest::Approx(7.1034).epsilon(1e-4));

  // first year of an AR model is the plain value, bit for bit
  CHECK(compute_lambda(p, d, ar, 0, 0, 0) == compute_lambda(p, d, plain, 0, 0, 0));
}

TEST_CASE("compute_lambda reports overflow") {
  const Dataset d = small_dataset(1, 1, 1, 1);
  const ModelSpec spec = ModelSpec::make(1, false, false, DetectionDim::C);
  Parameters p = Parameters::zeros(d, spec);
  p.a(0, 0) = 1000.0;
  CHECK_THROWS_AS(compute_lambda(p, d, spec, 0, 0, 0), InvalidStateError);
}

TEST_CASE("compute_p inverse logit and dimension handling") {
  const Dataset d = small_dataset(2, 5, 3, 2);
  ModelSpec c = ModelSpec::make(2, false, false, DetectionDim::C);
  Parameters p = Parameters::zeros(d, c);
  CHECK(compute_p(p, d, c, 0, 0, 0, 0) == doctest::Approx(0.5));
  p.detection(1) = 1.0;
  CHECK(compute_p(p, d, c, 0, 0, 0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(compute_p(p, d, c, 0, 0, 0, 1) == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(compute_p(p, d, c, 0, 0, 0, 1) == compute_p(p, d, c, 1, 4, 2, 1));

  ModelSpec b = ModelSpec::make(2, false, false, DetectionDim::B);
  Parameters pb = Parameters::zeros(d, b);
  CHECK(pb.detection.size() == 4);
  pb.detection(detection_cell_index(DetectionDim::B, 3, 2, 1, 0, 1)) = 2.0;
  CHECK(compute_p(pb, d, b, 1, 0, 0, 1) == compute_p(pb, d, b, 1, 3, 2, 1));
  CHECK(compute_p(pb, d, b, 0, 0, 0, 1) == doctest::Approx(0.5));

  ModelSpec a = ModelSpec::make(2, false, false, DetectionDim::A);
  Parameters pa = Parameters::zeros(d, a);
  CHECK(pa.detection.size() == 12);
  pa.detection(detection_cell_index(DetectionDim::A, 3, 2, 1, 2, 0)) = -1.0;
  CHECK(compute_p(pa, d, a, 1, 0, 2, 0) < 0.5);
  CHECK(compute_p(pa, d, a, 1, 0, 1, 0) == doctest::Approx(0.5));
}

TEST_CASE("loglik_observation against reference binomial") {
  const std::vector<int> y3{3};
  CHECK(loglik_observation(y3, 3, 1.0) == doctest::Approx(0.0));
  const std::vector<int> y5{5};
  CHECK(loglik_observation(y5, 3, 0.4) == -std::numeric_limits<double>::infinity());
  const std::vector<int> y2{2};
  CHECK(loglik_observation(y2, 5, 0.3) == doctest::Approx(std::log(10 * 0.09 * 0.343)).epsilon(1e-12));
  CHECK(loglik_observation(y2, 5, 0.3) == doctest::Approx(-1.17538).epsilon(1e-5));

  const std::vector<int> y{4, 0, 7, 2};
  const std::vector<int> y_perm{7, 2, 0, 4};
  double ref = 0.0;
  for (int v : y) ref += binom_logpmf(v, 9, 0.37);
  CHECK(loglik_observation(y, 9, 0.37) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(loglik_observation(y_perm, 9, 0.37) == doctest::Approx(loglik_observation(y, 9, 0.37)).epsilon(1e-14));
}

TEST_CASE("logpmf_latent values and normalisation") {
  ModelSpec plain = ModelSpec::make(1, false, false, DetectionDim::C);
  ModelSpec hurdle = ModelSpec::make(1, true, false, DetectionDim::C);
  CHECK(logpmf_latent(0, 1.0, 0.5, plain) == doctest::Approx(-1.0));
  CHECK(logpmf_latent(0, 1.0, 0.3, hurdle) == std::log(0.3));
  CHECK(logpmf_latent(0, 40.0, 0.3, hurdle) == std::log(0.3));
  CHECK(logpmf_latent(0, 1.0, 1e-9, hurdle) == std::log(1e-9));
  const double ztp2 = std::log(0.7 * (std::exp(-1.0) / 2.0) / (1.0 - std::exp(-1.0)));
  CHECK(logpmf_latent(2, 1.0, 0.3, hurdle) == doctest::Approx(ztp2).epsilon(1e-12));
  CHECK(std::abs(logpmf_latent(2, 1.0, 0.3, hurdle) - -1.59130) < 2e-4);

  CHECK_THROWS_AS(logpmf_latent(1, 0.0, 0.5, plain), DomainError);
  CHECK_THROWS_AS(logpmf_latent(1, -1.0, 0.5, plain), DomainError);
  CHECK_THROWS_AS(logpmf_latent(1, 1.0, 1.0, hurdle), DomainError);

  for (double lambda : {1e-3, 0.1, 1.0, 7.0, 55.0, 400.0}) {
    for (double theta : {0.2, 0.7}) {
      for (const ModelSpec* spec : {&plain, &hurdle}) {
        // sum to well beyond the 1 - 1e-12 quantile
        const int top = static_cast<int>(lambda + 20.0 * std::sqrt(lambda) + 40.0);
        double total = 0.0;
        for (int n = 0; n <= top; ++n) total += std::exp(logpmf_latent(n, lambda, theta, *spec));
        CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("dataset validation and layout") {
  CHECK_THROWS_AS(Dataset(1, 1, 1, 1, std::vector<int>{-1}), DomainError);
  CHECK_THROWS_AS(Dataset(2, 1, 1, 1, std::vector<int>{1}), DomainError);
  std::vector<int> counts(2 * 3 * 2 * 2);
  for (std::size_t j = 0; j < counts.size(); ++j) counts[j] = static_cast<int>(j);
  const Dataset d(2, 3, 2, 2, counts);
  // layout [site][year][species][occasion]
  CHECK(d.y(1, 2, 0, 1) == static_cast<int>(((1 * 2 + 0) * 2 + 1) * 3 + 2));
  CHECK(d.max_count(0, 1, 1) == d.y(0, 2, 1, 1));
  CHECK(d.count_cells() == counts.size());

  const ModelSpec ar = ModelSpec::make(2, false, true, DetectionDim::C);
  const Dataset one_year(2, 3, 1, 2, std::vector<int>(12, 0));
  CHECK_THROWS_AS(ar.validate(one_year), DomainError);
  ModelSpec bad = ModelSpec::make(2, false, false, DetectionDim::C);
  bad.hyper.df = 2.0;
  CHECK_THROWS_AS(bad.validate(d), DomainError);
}

TEST_CASE("detection cell counts follow the dimension") {
  CHECK(detection_cell_count(DetectionDim::A, 94, 10, 10) == 9400);
  CHECK(detection_cell_count(DetectionDim::B, 94, 10, 10) == 940);
  CHECK(detection_cell_count(DetectionDim::C, 94, 10, 10) == 10);
  // A with a single year has the same cells as B
  CHECK(detection_cell_count(DetectionDim::A, 7, 1, 3) == detection_cell_count(DetectionDim::B, 7, 1, 3));
  CHECK(detection_cell_index(DetectionDim::A, 1, 3, 4, 0, 2) ==
        detection_cell_index(DetectionDim::B, 1, 3, 4, 0, 2));
}
