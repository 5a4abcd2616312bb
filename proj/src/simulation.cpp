#include "mnmix/simulation.hpp"

#include "mnmix/correlations.hpp"
#include "mnmix/errors.hpp"
#include "mnmix/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <thread>

namespace mnmix {

const char* to_string(Regime regime) { return regime == Regime::Small ? "small" : "large"; }

Regime regime_from_string(const std::string& text) {
  if (text == "small") return Regime::Small;
  if (text == "large") return Regime::Large;
  throw ValidationError("regime must be 'small' or 'large', got '" + text + "'");
}

Interval01 detection_interval(Regime regime) {
  return regime == Regime::Small ? Interval01{0.1, 0.4} : Interval01{0.5, 0.9};
}

double lambda_median(Regime regime) { return regime == Regime::Small ? 7.0 : 55.0; }
double lambda_sd(Regime regime) { return regime == Regime::Small ? 10.0 : 74.0; }

double lognormal_log_variance(double median, double sd) {
  if (!(median > 0.0 && sd > 0.0)) throw DomainError("median and sd must be positive");
  const double r = sd / median;
  const double u = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * r * r));
  return std::log(u);
}

double lambda_log_variance(Regime regime) {
  return lognormal_log_variance(lambda_median(regime), lambda_sd(regime));
}

void Scenario::validate(const ModelSpec& spec) const {
  if (R < 1 || T < 1 || S < 1 || K < 1) throw DomainError("scenario dimensions must be >= 1");
  if (replicates < 1) throw DomainError("replicate count must be >= 1");
  if (spec.autoregressive && K < 2) throw DomainError("AR scenarios need K >= 2");
  if (spec.hurdle) {
    if (!theta) throw DomainError("hurdle scenarios need theta");
    if (!(*theta >= 0.0 && *theta < 1.0)) throw DomainError("theta must lie in [0, 1)");
  } else if (theta) {
    throw DomainError("theta is only meaningful for hurdle variants");
  }
  if (!(max_abs_correlation >= 0.0 && max_abs_correlation < 1.0)) {
    throw DomainError("max_abs_correlation must lie in [0, 1)");
  }
}

Eigen::MatrixXd random_correlation(int S, double max_abs, RngStream& rng) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(S, S);
  for (int s = 0; s < S; ++s) {
    for (int r = s + 1; r < S; ++r) c(s, r) = c(r, s) = max_abs * (2.0 * rng.uniform() - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.05);
  c = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::VectorXd inv_sd = c.diagonal().cwiseSqrt().cwiseInverse();
  c = inv_sd.asDiagonal() * c * inv_sd.asDiagonal();
  c = (0.5 * (c + c.transpose())).eval();
  c.diagonal().setOnes();
  return c;
}

SimulatedData simulate_dataset(const ModelSpec& spec, const Scenario& scen, RngStream& rng) {
  scen.validate(spec);
  const int R = scen.R, T = scen.T, S = scen.S, K = scen.K;
  GroundTruth g;
  const double sigma2 = lambda_log_variance(scen.lambda_regime);
  g.mu_a = Eigen::VectorXd::Constant(S, std::log(lambda_median(scen.lambda_regime)));
  g.sigma_a = sigma2 * random_correlation(S, scen.max_abs_correlation, rng);
  g.a.resize(R, S);
  for (int i = 0; i < R; ++i) g.a.row(i) = sample_mvnormal(rng, g.mu_a, g.sigma_a).transpose();

  const auto interval = detection_interval(scen.p_regime);
  const int cells = detection_cell_count(spec.detection_dim, R, K, S);
  g.p.resize(cells);
  g.detection.resize(cells);
  for (int c = 0; c < cells; ++c) {
    g.p(c) = interval.lo + (interval.hi - interval.lo) * rng.uniform();
    g.detection(c) = logit(g.p(c));
  }
  g.theta = spec.hurdle ? *scen.theta : 0.0;
  g.phi = Eigen::VectorXd::Zero(S);
  if (spec.autoregressive) {
    for (int s = 0; s < S; ++s) {
      double v;
      do {
        v = 0.25 * rng.normal();
      } while (!(v > -1.0 && v < 1.0));
      g.phi(s) = v;
    }
  }

  g.N = LatentAbundance(R, K, S);
  g.lambda.assign(static_cast<std::size_t>(R) * K * S, 0.0);
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        double eta = g.a(i, s);
        if (spec.autoregressive && k > 0) eta += g.phi(s) * std::log(g.N(i, k - 1, s) + 1.0);
        const double lambda = std::exp(eta);
        if (!std::isfinite(lambda) || lambda > 1e8) {
          throw InvalidStateError("simulated abundance rate overflowed");
        }
        g.lambda[g.N.index(i, k, s)] = lambda;
        g.N(i, k, s) = spec.hurdle ? sample_hurdle_poisson(rng, lambda, g.theta)
                                   : sample_poisson(rng, lambda);
      }
    }
  }

  std::vector<int> counts(static_cast<std::size_t>(R) * K * S * T);
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        const std::size_t c = g.N.index(i, k, s);
        const double p = g.p(detection_cell_index(spec.detection_dim, K, S, i, k, s));
        for (int t = 0; t < T; ++t) counts[c * T + t] = sample_binomial(rng, g.N(i, k, s), p);
      }
    }
  }
  DatasetLabels labels;
  for (int i = 0; i < R; ++i) labels.sites.push_back("site" + std::to_string(i + 1));
  for (int k = 0; k < K; ++k) labels.years.push_back(k + 1);
  for (int s = 0; s < S; ++s) labels.species.push_back("sp" + std::to_string(s + 1));
  return {Dataset(R, T, K, S, std::move(counts), {}, {}, std::move(labels)), std::move(g)};
}

namespace {

std::string block_of(const std::string& name) { return name.substr(0, name.find('[')); }

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  }
  return m;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t scenario_seed, int replicate) {
  return splitmix64(splitmix64(scenario_seed) ^ static_cast<std::uint64_t>(replicate));
}

std::string model_label(const ModelSpec& spec) {
  return spec.variant_name() + "(" + to_char(spec.detection_dim) + ")";
}

ReplicateMetrics evaluate_replicate(const FitResult& fit, const Dataset& data,
                                    const ModelSpec& spec, const GroundTruth& truth) {
  ReplicateMetrics m;
  const auto& summary = fit.summary;
  const int S = data.species();

  std::vector<double> n_hat, n_true;
  std::vector<Interval> n_int;
  for (const auto& ls : summary.latent) {
    const std::size_t c = data.cell(ls.site, ls.year, ls.species);
    n_hat.push_back(ls.mean);
    n_true.push_back(truth.N.values()[c]);
    n_int.push_back({static_cast<double>(ls.q25), static_cast<double>(ls.q75)});
  }
  m.ccc = ccc(n_hat, n_true);
  m.coverage_N = coverage(n_int, n_true);

  // parameter layout follows parameter_names(): mu_a, Sigma_a, p, beta, gamma, theta, phi
  std::size_t j = 0;
  const auto& ps = summary.parameters;
  std::vector<double> mu_hat, mu_true;
  std::vector<Interval> mu_int;
  for (int s = 0; s < S; ++s, ++j) {
    mu_hat.push_back(ps[j].mean);
    mu_true.push_back(truth.mu_a(s));
    mu_int.push_back({ps[j].q25, ps[j].q75});
  }
  m.rb_mu_a = relative_bias(mu_hat, mu_true);
  m.coverage_mu_a = coverage(mu_int, mu_true);

  Eigen::MatrixXd sigma_hat(S, S);
  std::vector<double> sigma_true;
  std::vector<Interval> sigma_int;
  for (int s = 0; s < S; ++s) {
    for (int r = s; r < S; ++r, ++j) {
      sigma_hat(s, r) = sigma_hat(r, s) = ps[j].mean;
      sigma_true.push_back(truth.sigma_a(s, r));
      sigma_int.push_back({ps[j].q25, ps[j].q75});
    }
  }
  m.cmd = cmd(corr_from_sigma(sigma_hat), corr_from_sigma(truth.sigma_a));
  m.coverage_Sigma = coverage(sigma_int, sigma_true);

  std::vector<double> p_hat, p_true;
  std::vector<Interval> p_int;
  for (Eigen::Index c = 0; c < truth.p.size(); ++c, ++j) {
    p_hat.push_back(ps[j].mean);
    p_true.push_back(truth.p(c));
    p_int.push_back({ps[j].q25, ps[j].q75});
  }
  m.rb_p = relative_bias(p_hat, p_true);
  m.coverage_p = coverage(p_int, p_true);
  j += static_cast<std::size_t>(S) * (data.q_lambda() + data.q_p());

  if (spec.hurdle) {
    if (truth.theta > 0.0) m.rb_theta = relative_bias({ps[j].mean}, truth.theta);
    m.coverage_theta = coverage({{ps[j].q25, ps[j].q75}}, truth.theta);
    ++j;
  }
  if (spec.autoregressive) {
    std::vector<double> phi_hat, phi_true;
    std::vector<Interval> phi_int;
    for (int s = 0; s < S; ++s, ++j) {
      phi_hat.push_back(ps[j].mean);
      phi_true.push_back(truth.phi(s));
      phi_int.push_back({ps[j].q25, ps[j].q75});
    }
    m.rb_phi = relative_bias(phi_hat, phi_true);
    m.coverage_phi = coverage(phi_int, phi_true);
  }
  std::set<std::string> blocks;
  for (const auto& name : summary.flagged) blocks.insert(block_of(name));
  m.flagged_blocks.assign(blocks.begin(), blocks.end());
  m.ok = true;
  return m;
}

StudyMetricRow aggregate(const Scenario& scen, const ModelSpec& spec,
                         const std::vector<ReplicateMetrics>& reps, double median_p,
                         double median_lambda, const StudyOptions& options) {
  StudyMetricRow row;
  row.scenario = scen.id;
  row.model = model_label(spec);
  row.median_p = median_p;
  row.median_lambda = median_lambda;
  row.theta = scen.theta;
  row.replicates = static_cast<int>(reps.size());

  const double nan = std::numeric_limits<double>::quiet_NaN();
  int ok = 0;
  double sums[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  double rb_theta = 0, rb_phi = 0, cov_theta = 0, cov_phi = 0;
  int n_rb_theta = 0, n_rb_phi = 0, n_cov_theta = 0, n_cov_phi = 0;
  std::map<std::string, int> flag_counts;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++row.failures;
      continue;
    }
    ++ok;
    const double v[8] = {r.ccc, r.cmd, r.rb_p, r.rb_mu_a,
                         r.coverage_N, r.coverage_Sigma, r.coverage_p, r.coverage_mu_a};
    for (int q = 0; q < 8; ++q) sums[q] += v[q];
    if (r.rb_theta) rb_theta += *r.rb_theta, ++n_rb_theta;
    if (r.rb_phi) rb_phi += *r.rb_phi, ++n_rb_phi;
    if (r.coverage_theta) cov_theta += *r.coverage_theta, ++n_cov_theta;
    if (r.coverage_phi) cov_phi += *r.coverage_phi, ++n_cov_phi;
    for (const auto& b : r.flagged_blocks) ++flag_counts[b];
  }
  auto mean = [&](double sum) { return ok > 0 ? sum / ok : nan; };
  row.ccc = mean(sums[0]);
  row.cmd = mean(sums[1]);
  row.rb_p = mean(sums[2]);
  row.rb_mu_a = mean(sums[3]);
  row.coverage_N = mean(sums[4]);
  row.coverage_Sigma = mean(sums[5]);
  row.coverage_p = mean(sums[6]);
  row.coverage_mu_a = mean(sums[7]);
  if (n_rb_theta > 0) row.rb_theta = rb_theta / n_rb_theta;
  if (n_rb_phi > 0) row.rb_phi = rb_phi / n_rb_phi;
  if (n_cov_theta > 0) row.coverage_theta = cov_theta / n_cov_theta;
  if (n_cov_phi > 0) row.coverage_phi = cov_phi / n_cov_phi;

  std::set<std::string> flagged;
  for (const auto& [block, count] : flag_counts) {
    if (ok > 0 && count >= options.flag_share * ok) flagged.insert(block);
  }
  if (ok > 0) {
    if (row.rb_p > options.flag_bias) flagged.insert("p");
    if (row.rb_mu_a > options.flag_bias) flagged.insert("mu_a");
    if (row.rb_theta && *row.rb_theta > options.flag_bias) flagged.insert("theta");
    if (row.rb_phi && *row.rb_phi > options.flag_bias) flagged.insert("phi");
  }
  for (const auto& b : flagged) row.flags += (row.flags.empty() ? "" : ";") + b;
  return row;
}

std::vector<ScenarioResult> run_study(const ModelSpec& spec_template,
                                      const std::vector<Scenario>& scenarios,
                                      const SamplerConfig& cfg, const StudyOptions& options) {
  struct Task {
    std::size_t scenario;
    int replicate;
  };
  std::vector<ModelSpec> specs;
  std::vector<Task> tasks;
  for (std::size_t q = 0; q < scenarios.size(); ++q) {
    const auto& scen = scenarios[q];
    ModelSpec spec = spec_template;
    if (spec.hyper.mu0.size() != scen.S) {
      spec = ModelSpec::make(scen.S, spec_template.hurdle, spec_template.autoregressive,
                             spec_template.detection_dim);
    }
    scen.validate(spec);
    specs.push_back(spec);
    for (int r = 0; r < scen.replicates; ++r) tasks.push_back({q, r});
  }

  struct Outcome {
    ReplicateMetrics metrics;
    std::vector<double> p_cells, lambda_cells;
  };
  std::vector<Outcome> outcomes(tasks.size());
  int workers = options.workers > 0 ? options.workers
                                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
  SamplerConfig fit_cfg = cfg;
  if (workers > 1) fit_cfg.parallel_chains = false;

  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const auto& scen = scenarios[tasks[t].scenario];
      const auto& spec = specs[tasks[t].scenario];
      const int rep = tasks[t].replicate;
      Outcome& out = outcomes[t];
      try {
        RngStream rng(scen.seed, static_cast<std::uint64_t>(rep));
        SimulatedData sim = simulate_dataset(spec, scen, rng);
        out.p_cells.assign(sim.truth.p.data(), sim.truth.p.data() + sim.truth.p.size());
        out.lambda_cells = sim.truth.lambda;
        SamplerConfig c = fit_cfg;
        c.seed = replicate_seed(scen.seed, rep);
        const FitResult fr = fit(sim.data, spec, c);
        out.metrics = evaluate_replicate(fr, sim.data, spec, sim.truth);
      } catch (const std::exception& e) {
        out.metrics.ok = false;
        out.metrics.error = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  std::vector<ScenarioResult> results(scenarios.size());
  std::vector<std::vector<double>> p_pool(scenarios.size()), lambda_pool(scenarios.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const std::size_t q = tasks[t].scenario;
    results[q].replicates.push_back(std::move(outcomes[t].metrics));
    auto& pp = p_pool[q];
    pp.insert(pp.end(), outcomes[t].p_cells.begin(), outcomes[t].p_cells.end());
    auto& lp = lambda_pool[q];
    lp.insert(lp.end(), outcomes[t].lambda_cells.begin(), outcomes[t].lambda_cells.end());
  }
  for (std::size_t q = 0; q < scenarios.size(); ++q) {
    results[q].row = aggregate(scenarios[q], specs[q], results[q].replicates,
                               median_of(p_pool[q]), median_of(lambda_pool[q]), options);
  }
  return results;
}

}  // namespace mnmix
