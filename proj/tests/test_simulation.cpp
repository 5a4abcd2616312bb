#include "mnmix/errors.hpp"
#include "mnmix/simulation.hpp"

#include "doctest.h"

#include <cmath>
#include <set>

using namespace mnmix;

namespace {

// Standard deviation of a log-normal with the given log mean and log variance.
double lognormal_sd(double mu, double s2) { return std::sqrt(std::exp(2 * mu + s2) * (std::exp(s2) - 1)); }

}  // namespace

TEST_CASE("lambda regime calibration") {
  const double small = lambda_log_variance(Regime::Small);
  const double large = lambda_log_variance(Regime::Large);
  CHECK(small == doctest::Approx(0.700).epsilon(1e-3));
  CHECK(large == doctest::Approx(0.6605).epsilon(1e-3));
  CHECK(lognormal_sd(std::log(7.0), small) == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(lognormal_sd(std::log(55.0), large) == doctest::Approx(74.0).epsilon(1e-10));
  CHECK(detection_interval(Regime::Small).lo == 0.1);
  CHECK(detection_interval(Regime::Large).hi == 0.9);
  CHECK(regime_from_string("small") == Regime::Small);
  CHECK_THROWS_AS(regime_from_string("medium"), ValidationError);
}

TEST_CASE("random correlation matrices") {
  RngStream rng(41, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXd c = random_correlation(6, 0.6, rng);
    CHECK(is_positive_definite(c));
    CHECK((c.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 6; ++i) for (int j = 0; j < 6; ++j) if (i != j) CHECK(std::abs(c(i, j)) < 0.6 + 1e-9);
  }
}

TEST_CASE("simulation is deterministic and consistent") {
  const ModelSpec spec = ModelSpec::make(3, false, true, DetectionDim::B);
  Scenario scen;
  scen.R = 5;
  scen.T = 4;
  scen.S = 3;
  scen.K = 3;
  scen.p_regime = Regime::Small;
  RngStream a(42, 7), b(42, 7);
  const SimulatedData x = simulate_dataset(spec, scen, a);
  const SimulatedData y = simulate_dataset(spec, scen, b);
  CHECK(x.data.raw_counts() == y.data.raw_counts());
  CHECK(x.truth.N.values() == y.truth.N.values());
  CHECK(x.truth.sigma_a == y.truth.sigma_a);
  CHECK(x.truth.detection.size() == 15);
  CHECK(x.truth.p.minCoeff() >= 0.1);
  CHECK(x.truth.p.maxCoeff() <= 0.4);
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 3; ++k)
      for (int s = 0; s < 3; ++s) CHECK(x.data.max_count(i, k, s) <= x.truth.N(i, k, s));
}

TEST_CASE("hurdle zero fraction in simulated abundance") {
  const ModelSpec spec = ModelSpec::make(5, true, false, DetectionDim::C);
  Scenario scen;
  scen.R = 2000;
  scen.T = 1;
  scen.S = 5;
  scen.K = 10;
  scen.theta = 0.7;
  RngStream rng(43, 0);
  const SimulatedData sim = simulate_dataset(spec, scen, rng);
  double zeros = 0;
  for (int v : sim.truth.N.values()) zeros += v == 0;
  CHECK(std::abs(zeros / sim.truth.N.values().size() - 0.7) < 0.01);
}

TEST_CASE("hurdle with zero theta draws zero-truncated counts per cell") {
  Scenario scen;
  scen.R = 20000;
  scen.T = 1;
  scen.S = 5;
  scen.lambda_regime = Regime::Small;
  scen.theta = 0.0;
  RngStream rng(44, 0);
  const SimulatedData h = simulate_dataset(ModelSpec::make(5, true, false, DetectionDim::C), scen, rng);
  // Expected moments of a Poisson conditioned on N > 0, averaged over the cells' own rates.
  double zeros = 0, ones = 0, sum = 0, want_ones = 0, want_mean = 0;
  const auto& N = h.truth.N.values();
  for (std::size_t c = 0; c < N.size(); ++c) {
    const double l = h.truth.lambda[c];
    zeros += N[c] == 0;
    ones += N[c] == 1;
    sum += N[c];
    want_ones += l * std::exp(-l) / -std::expm1(-l);
    want_mean += l / -std::expm1(-l);
  }
  const double n = static_cast<double>(N.size());
  CHECK(zeros == 0);
  CHECK(std::abs(ones - want_ones) / n < 0.005);
  CHECK(std::abs(sum - want_mean) / want_mean < 0.02);
}

TEST_CASE("scenario validation") {
  Scenario scen;
  CHECK_THROWS_AS(scen.validate(ModelSpec::make(5, true, false, DetectionDim::C)), DomainError);
  scen.theta = 0.3;
  CHECK_THROWS_AS(scen.validate(ModelSpec::make(5, false, false, DetectionDim::C)), DomainError);
  Scenario ar;
  ar.K = 1;
  CHECK_THROWS_AS(ar.validate(ModelSpec::make(5, false, true, DetectionDim::C)), DomainError);
}

TEST_CASE("replicate seeds are distinct") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 1; s < 20; ++s)
    for (int r = 0; r < 50; ++r) seen.insert(replicate_seed(s, r));
  CHECK(seen.size() == 19 * 50);
  CHECK(replicate_seed(3, 4) == replicate_seed(3, 4));
}

TEST_CASE("aggregate of one replicate equals that replicate") {
  ReplicateMetrics r;
  r.ok = true;
  r.ccc = 0.91;
  r.cmd = 0.07;
  r.rb_p = 0.12;
  r.rb_mu_a = 0.05;
  r.rb_theta = 0.2;
  r.coverage_N = 0.48;
  r.coverage_Sigma = 0.5;
  r.coverage_p = 0.6;
  r.coverage_mu_a = 0.4;
  r.coverage_theta = 1.0;
  Scenario scen;
  scen.id = "one";
  scen.theta = 0.2;
  const ModelSpec spec = ModelSpec::make(5, true, false, DetectionDim::C);
  const StudyMetricRow row = aggregate(scen, spec, {r}, 0.6, 40.0);
  CHECK(row.ccc == r.ccc);
  CHECK(row.cmd == r.cmd);
  CHECK(row.rb_p == r.rb_p);
  CHECK(row.rb_mu_a == r.rb_mu_a);
  CHECK(row.rb_theta == r.rb_theta);
  CHECK(row.coverage_N == r.coverage_N);
  CHECK(row.coverage_Sigma == r.coverage_Sigma);
  CHECK(row.coverage_p == r.coverage_p);
  CHECK(row.coverage_mu_a == r.coverage_mu_a);
  CHECK(row.coverage_theta == r.coverage_theta);
  CHECK_FALSE(row.rb_phi);
  CHECK(row.replicates == 1);
  CHECK(row.failures == 0);
  CHECK(row.model == "MNM-Hurdle(C)");

  ReplicateMetrics failed;
  failed.ok = false;
  const StudyMetricRow two = aggregate(scen, spec, {r, failed}, 0.6, 40.0);
  CHECK(two.failures == 1);
  CHECK(two.ccc == r.ccc);
}

TEST_CASE("small study runs and is deterministic") {
  const ModelSpec spec = ModelSpec::make(2, false, false, DetectionDim::C);
  Scenario scen;
  scen.id = "tiny";
  scen.R = 4;
  scen.T = 3;
  scen.S = 2;
  scen.replicates = 2;
  scen.seed = 5;
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iter = 800;
  cfg.n_burn = 200;
  cfg.thin = 2;
  StudyOptions opt;
  opt.workers = 2;
  const auto first = run_study(spec, {scen}, cfg, opt);
  opt.workers = 1;
  const auto second = run_study(spec, {scen}, cfg, opt);
  REQUIRE(first.size() == 1);
  CHECK(first[0].replicates.size() == 2);
  CHECK(first[0].row.ccc == second[0].row.ccc);
  CHECK(first[0].row.cmd == second[0].row.cmd);
  CHECK(first[0].row.coverage_Sigma == second[0].row.coverage_Sigma);
  CHECK(first[0].row.ccc <= 1.0);
  CHECK(first[0].row.cmd >= 0.0);
}
