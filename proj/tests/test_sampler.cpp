#include "mnmix/errors.hpp"
#include "mnmix/sampler.hpp"
#include "mnmix/simulation.hpp"

#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

using namespace mnmix;

namespace {

// Split-R-hat written directly from its definition, kept separate from the library.
double rhat_reference(const std::vector<std::vector<double>>& chains) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    const Eigen::Index h = static_cast<Eigen::Index>(c.size() / 2);
    const Eigen::Map<const Eigen::VectorXd> v(c.data(), static_cast<Eigen::Index>(c.size()));
    halves.emplace_back(v.head(h));
    halves.emplace_back(v.tail(h));
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves.front().size());
  Eigen::VectorXd means(halves.size()), vars(halves.size());
  for (std::size_t j = 0; j < halves.size(); ++j) {
    means(j) = halves[j].mean();
    vars(j) = (halves[j].array() - means(j)).square().sum() / (n - 1.0);
  }
  const double W = vars.mean();
  const double B = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
  return std::sqrt(((n - 1.0) / n * W + B / n) / W);
}

}  // namespace

TEST_CASE("rhat matches the reference formula") {
  const std::vector<std::vector<double>> same{{1, 2, 3, 4}, {1, 2, 3, 4}};
  CHECK(std::abs(rhat(same) - rhat_reference(same)) < 1e-12);

  RngStream rng(11, 0);
  std::vector<std::vector<double>> random(3, std::vector<double>(101));
  for (auto& c : random) for (double& x : c) x = rng.normal();
  CHECK(std::abs(rhat(random) - rhat_reference(random)) < 1e-12);

  std::vector<std::vector<double>> apart(2, std::vector<double>(1000));
  for (double& x : apart[0]) x = rng.normal(0.0, 1.0);
  for (double& x : apart[1]) x = rng.normal(5.0, 1.0);
  CHECK(rhat(apart) > 1.5);

  const std::vector<std::vector<double>> constant{{2, 2, 2, 2}, {2, 2, 2, 2}};
  CHECK(rhat(constant) == 1.0);
  CHECK_THROWS_AS(rhat({{1, 2, 3, 4}}), DomainError);
}

TEST_CASE("mu_a update is the conjugate normal") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(4, 1, 2.0);
  a(0, 0) = 1.5;
  a(1, 0) = 2.5;
  const Eigen::MatrixXd sigma_a = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::VectorXd mu0 = Eigen::VectorXd::Zero(1);
  const Eigen::MatrixXd sigma0 = Eigen::MatrixXd::Constant(1, 1, 10.0);
  const double precision = 1.0 / 10.0 + 4.0;
  const double mean = 8.0 / precision;
  CHECK(precision == doctest::Approx(4.1));
  CHECK(mean == doctest::Approx(1.95122).epsilon(1e-5));

  RngStream rng(12, 0);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int j = 0; j < n; ++j) {
    const double x = gibbs_update_mu_a(a, sigma_a, mu0, sigma0, rng)(0);
    s += x;
    ss += x * x;
  }
  const double m = s / n;
  CHECK(std::abs(m - mean) < 4.0 * std::sqrt(1.0 / precision / n));
  CHECK(ss / n - m * m == doctest::Approx(1.0 / precision).epsilon(0.02));
}

TEST_CASE("Sigma_a update is the conjugate inverse Wishart") {
  RngStream rng(13, 0);
  const int R = 6, S = 2;
  Eigen::MatrixXd a(R, S);
  for (int i = 0; i < R; ++i) for (int s = 0; s < S; ++s) a(i, s) = rng.normal(0.5 * s, 1.0);
  Eigen::VectorXd mu(S);
  mu << 0.1, 0.4;
  const Eigen::MatrixXd omega = Eigen::MatrixXd::Identity(S, S);
  const double df = S + 1;
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(S, S);
  for (int i = 0; i < R; ++i) {
    const Eigen::VectorXd r = a.row(i).transpose() - mu;
    scatter += r * r.transpose();
  }
  const Eigen::MatrixXd expected = (omega + scatter) / (df + R - S - 1);
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(S, S);
  const int n = 200000;
  for (int j = 0; j < n; ++j) total += gibbs_update_sigma_a(a, mu, omega, df, rng);
  total /= n;
  CHECK(((total - expected).array().abs() / expected.array().abs().maxCoeff()).maxCoeff() < 0.02);
}

TEST_CASE("theta update is the Beta conjugate") {
  LatentAbundance N(1000, 1, 1);
  for (int i = 300; i < 1000; ++i) N(i, 0, 0) = 0;
  for (int i = 0; i < 300; ++i) N(i, 0, 0) = 1 + i % 4;
  RngStream rng(14, 0);
  double s = 0.0;
  const int n = 100000;
  for (int j = 0; j < n; ++j) s += update_theta(N, 1.0, 1.0, rng);
  CHECK(701.0 / 1002.0 == doctest::Approx(0.6996).epsilon(1e-4));
  CHECK(std::abs(s / n - 701.0 / 1002.0) < 0.0005);
}

TEST_CASE("latent N update targets the exact full conditional") {
  // Species 0 has counts (2, 0, 1); species 1 is all zero.
  const Dataset data(1, 3, 1, 2, std::vector<int>{2, 0, 1, 0, 0, 0});
  for (bool hurdle : {false, true}) {
    CAPTURE(hurdle);
    const ModelSpec spec = ModelSpec::make(2, hurdle, false, DetectionDim::C);
    const Model model(data, spec);
    Parameters params = Parameters::zeros(data, spec);
    params.a(0, 0) = 1.2;
    params.a(0, 1) = 0.4;
    params.detection << 0.3, -0.5;
    params.theta = 0.35;
    LatentAbundance N(1, 1, 2);
    N(0, 0, 0) = 3;
    N(0, 0, 1) = 1;
    SamplerConfig cfg;
    ChainState st = make_state(model, params, N, cfg);
    RngStream rng(15, hurdle ? 1 : 0);

    const int top = 60;
    std::vector<std::vector<double>> hist(2, std::vector<double>(top + 1, 0.0));
    const int n = 200000;
    for (int j = 0; j < n; ++j) {
      update_latent_n(st, model, rng);
      if (j < 5000 && (j + 1) % 50 == 0) adapt_proposals(st);
      for (int s = 0; s < 2; ++s) hist[s][std::min(st.N(0, 0, s), top)] += 1.0 / n;
    }
    for (int s = 0; s < 2; ++s) {
      CAPTURE(s);
      const double lambda = std::exp(params.a(0, s));
      const double p = inv_logit(params.detection(s));
      std::vector<double> exact(top + 1, 0.0);
      const auto y = data.occasions(0, 0, s);
      for (int v = 0; v <= top; ++v) {
        const double lp = logpmf_latent(v, lambda, params.theta, spec) + loglik_observation(y, v, p);
        exact[v] = std::isfinite(lp) ? std::exp(lp) : 0.0;
      }
      const double z = std::accumulate(exact.begin(), exact.end(), 0.0);
      double tv = 0.0;
      for (int v = 0; v <= top; ++v) tv += 0.5 * std::abs(exact[v] / z - hist[s][v]);
      CHECK(tv < 0.015);
    }
  }
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_burn = cfg.n_iter;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = SamplerConfig{};
  cfg.thin = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = SamplerConfig{};
  cfg.n_chains = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("fit is reproducible and summaries are ordered") {
  ModelSpec spec = ModelSpec::make(2, true, false, DetectionDim::C);
  Scenario scen;
  scen.R = 4;
  scen.T = 3;
  scen.S = 2;
  scen.K = 1;
  scen.theta = 0.3;
  RngStream rng(16, 0);
  const SimulatedData sim = simulate_dataset(spec, scen, rng);

  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.n_iter = 1500;
  cfg.n_burn = 500;
  cfg.thin = 2;
  cfg.seed = 99;
  const FitResult first = fit(sim.data, spec, cfg);
  const FitResult second = fit(sim.data, spec, cfg);
  REQUIRE(first.draws.chains.size() == 2);
  CHECK(first.draws.n_retained == cfg.retained_per_chain());
  CHECK(first.draws.chains == second.draws.chains);

  for (const auto& p : first.summary.parameters) {
    CAPTURE(p.name);
    CHECK(p.q025 <= p.q25);
    CHECK(p.q25 <= p.q50);
    CHECK(p.q50 <= p.q75);
    CHECK(p.q75 <= p.q975);
    CHECK(p.rhat >= 1.0 - 1e-3);
    CHECK(p.flagged == (p.rhat >= cfg.rhat_threshold));
  }
  for (const auto& l : first.summary.latent) {
    CHECK(l.q25 <= l.q50);
    CHECK(l.q50 <= l.q75);
    CHECK(l.q025 >= sim.data.max_count(l.site, l.year, l.species));
  }
  CHECK(first.summary.get("theta").mean > 0.0);
}
