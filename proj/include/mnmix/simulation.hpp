#pragma once

#include "mnmix/distributions.hpp"
#include "mnmix/model.hpp"
#include "mnmix/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mnmix {

enum class Regime { Small, Large };
const char* to_string(Regime regime);
Regime regime_from_string(const std::string& text);

// Detection cells are drawn uniformly on this interval.
struct Interval01 {
  double lo = 0.0;
  double hi = 1.0;
};
Interval01 detection_interval(Regime regime);  // small [0.1, 0.4], large [0.5, 0.9]
double lambda_median(Regime regime);           // 7 or 55
double lambda_sd(Regime regime);               // 10 or 74
// sigma^2 of log lambda that gives the regime's median and standard deviation.
double lambda_log_variance(Regime regime);
double lognormal_log_variance(double median, double sd);

struct Scenario {
  std::string id;
  int R = 10, T = 5, S = 5, K = 1;
  Regime p_regime = Regime::Large;
  Regime lambda_regime = Regime::Large;
  std::optional<double> theta;  // hurdle variants only
  int replicates = 20;
  std::uint64_t seed = 1;
  double max_abs_correlation = 0.6;

  void validate(const ModelSpec& spec) const;
};

struct GroundTruth {
  LatentAbundance N;
  std::vector<double> lambda;  // per latent cell
  Eigen::MatrixXd a;
  Eigen::VectorXd mu_a;
  Eigen::MatrixXd sigma_a;
  Eigen::VectorXd detection;  // logit scale, one per detection cell
  Eigen::VectorXd p;          // probability scale
  double theta = 0.0;
  Eigen::VectorXd phi;
};

struct SimulatedData {
  Dataset data;
  GroundTruth truth;
};

// Random correlation matrix with off-diagonals uniform on (-max_abs, max_abs),
// made positive definite by eigenvalue clipping and rescaled to a unit diagonal.
Eigen::MatrixXd random_correlation(int S, double max_abs, RngStream& rng);

SimulatedData simulate_dataset(const ModelSpec& spec, const Scenario& scen, RngStream& rng);

// Per-replicate evaluation of a fit against its ground truth.
struct ReplicateMetrics {
  bool ok = false;
  std::string error;
  double ccc = 0, cmd = 0, rb_p = 0, rb_mu_a = 0;
  std::optional<double> rb_theta, rb_phi;
  double coverage_N = 0, coverage_Sigma = 0, coverage_p = 0, coverage_mu_a = 0;
  std::optional<double> coverage_theta, coverage_phi;
  std::vector<std::string> flagged_blocks;  // blocks with any R-hat at or above threshold
};

ReplicateMetrics evaluate_replicate(const FitResult& fit, const Dataset& data,
                                    const ModelSpec& spec, const GroundTruth& truth);

struct StudyMetricRow {
  std::string scenario;
  std::string model;
  double median_p = 0, median_lambda = 0;
  std::optional<double> theta;
  double ccc = 0, cmd = 0, rb_p = 0, rb_mu_a = 0;
  std::optional<double> rb_theta, rb_phi;
  double coverage_N = 0, coverage_Sigma = 0, coverage_p = 0, coverage_mu_a = 0;
  std::optional<double> coverage_theta, coverage_phi;
  int replicates = 0;
  int failures = 0;
  std::string flags;  // ';'-separated block names
};

struct ScenarioResult {
  StudyMetricRow row;
  std::vector<ReplicateMetrics> replicates;
};

struct StudyOptions {
  int workers = 0;  // 0: hardware concurrency
  double flag_share = 0.10;  // a block is flagged when R-hat fails in this share of replicates
  double flag_bias = 0.5;    // or when its relative bias exceeds this
};

// Mean of the successful replicates' metrics. With one replicate the row equals
// that replicate's metrics.
StudyMetricRow aggregate(const Scenario& scen, const ModelSpec& spec,
                         const std::vector<ReplicateMetrics>& reps, double median_p,
                         double median_lambda, const StudyOptions& options = {});

// Every scenario owns its random streams, so rows do not depend on list order.
std::vector<ScenarioResult> run_study(const ModelSpec& spec, const std::vector<Scenario>& scenarios,
                                      const SamplerConfig& cfg, const StudyOptions& options = {});

// Sampler seed of one replicate, derived from the scenario seed.
std::uint64_t replicate_seed(std::uint64_t scenario_seed, int replicate);

std::string model_label(const ModelSpec& spec);

}  // namespace mnmix
