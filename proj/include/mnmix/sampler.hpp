#pragma once

#include "mnmix/distributions.hpp"
#include "mnmix/model.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mnmix {

struct SamplerConfig {
  int n_chains = 4;
  int n_iter = 50000;
  int n_burn = 10000;
  int thin = 5;
  double rhat_threshold = 1.05;
  std::uint64_t seed = 20240101;

  // Initial random-walk scales; adapted during burn-in only.
  double scale_a = 0.3;
  double scale_detection = 0.3;
  double scale_beta = 0.1;
  double scale_gamma = 0.1;
  double scale_phi = 0.05;
  int adapt_interval = 50;
  // Every this many iterations (0: never), models without AR terms or detection
  // covariates also update each detection cell jointly with its member N.
  int collapse_interval = 5;

  // A block with no accepted proposal for this many consecutive iterations in
  // every chain is reported as degenerate.
  int stuck_window = 1000;
  bool parallel_chains = true;

  int retained_per_chain() const { return (n_iter - n_burn) / thin; }
  void validate() const;
};

enum class Block {
  LatentN,
  RandomEffects,
  MuA,
  SigmaA,
  Detection,
  DetectionCovariates,
  Beta,
  Theta,
  Phi,
};
inline constexpr int kBlockCount = 9;
const char* block_name(Block block);

// Data, spec and everything precomputed from them that the updates share.
class Model {
 public:
  Model(Dataset data, ModelSpec spec);

  const Dataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }

  int detection_cell(int i, int k, int s) const {
    return detection_cell_index(spec_.detection_dim, data_.years(), data_.species(), i, k, s);
  }
  int detection_cells() const { return static_cast<int>(members_.size()); }
  // Latent cells (i, k, s) whose occasions share detection cell d.
  const std::vector<int>& detection_members(int d) const { return members_[d]; }

  const Eigen::MatrixXd& sigma0_inverse() const { return sigma0_inv_; }
  Eigen::MatrixXd omega() const { return spec_.hyper.omega_diag.asDiagonal(); }

 private:
  Dataset data_;
  ModelSpec spec_;
  std::vector<std::vector<int>> members_;
  Eigen::MatrixXd sigma0_inv_;
};

struct BlockStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  int zero_streak = 0;
  int longest_zero_streak = 0;
  double rate() const { return proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0; }
};

// Per-element random-walk scales plus batch acceptance counters.
struct ProposalTuning {
  std::vector<double> scale_a, scale_detection, scale_beta, scale_gamma, scale_phi, scale_joint;
  std::vector<int> width_n;
  std::vector<int> acc_a, acc_detection, acc_beta, acc_gamma, acc_phi, acc_n, tries_n, acc_joint;
  int tries_joint = 0;
  int batches = 0;
};

// One chain's current values with cached linear predictors.
struct ChainState {
  Parameters params;
  LatentAbundance N;

  Eigen::MatrixXd base_eta;            // R x S: a_is + x_i' beta_s
  std::vector<double> log_lambda;      // per latent cell
  std::vector<double> lambda;
  std::vector<double> eta_detection;   // per observation (cell * T + t), logit p
  std::vector<double> log_p, log_1mp;  // per observation
  std::vector<double> sum_log_1mp;     // per latent cell
  Eigen::MatrixXd sigma_a_inverse;

  ProposalTuning tuning;
  std::array<BlockStats, kBlockCount> stats{};
  int batch_iterations = 0;
  int collapse_interval = 0;
  std::int64_t sweeps = 0;
};

// Builds caches for the given values. N must satisfy N >= max_t Y.
ChainState make_state(const Model& model, Parameters params, LatentAbundance N,
                      const SamplerConfig& cfg = {});
// Feasible start: N = max_t Y + 1 (0 for all-zero cells under the hurdle),
// a jittered around log(N + 0.5), b = beta = phi = 0, theta = empirical zero fraction.
ChainState initialize_state(const Model& model, const SamplerConfig& cfg, RngStream& rng);

void update_latent_n(ChainState& state, const Model& model, RngStream& rng);
Eigen::VectorXd gibbs_update_mu_a(const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma_a,
                                  const Eigen::VectorXd& mu0, const Eigen::MatrixXd& sigma0,
                                  RngStream& rng);
Eigen::MatrixXd gibbs_update_sigma_a(const Eigen::MatrixXd& a, const Eigen::VectorXd& mu_a,
                                     const Eigen::MatrixXd& omega, double df, RngStream& rng);
// Gaussian random-walk Metropolis over one of RandomEffects, Detection,
// DetectionCovariates, Beta or Phi, element by element.
void mh_update_block(Block block, ChainState& state, const Model& model, RngStream& rng);
double update_theta(const LatentAbundance& N, double shape1, double shape2, RngStream& rng);

// One full Metropolis-within-Gibbs iteration over every block of the model.
void sweep(ChainState& state, const Model& model, RngStream& rng);
// Rescales proposals from the batch acceptance rates and resets the batch.
void adapt_proposals(ChainState& state);

// Split-chain potential scale reduction factor. Constant chains give exactly 1.
double rhat(const std::vector<std::vector<double>>& chains);

// Integer-valued draws of one latent cell, pooled over chains.
class IntHistogram {
 public:
  void add(int value, std::uint32_t weight = 1);
  void merge(const IntHistogram& other);
  std::uint64_t total() const { return total_; }
  double mean() const;
  double sd() const;
  // Smallest value whose cumulative frequency reaches prob.
  int quantile(double prob) const;
  double mass_below(int value) const;
  int min_value() const { return offset_; }
  int max_value() const { return offset_ + static_cast<int>(counts_.size()) - 1; }
  std::uint64_t count(int value) const;

 private:
  int offset_ = 0;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  int n_chains = 0;
  int n_retained = 0;
  // chain -> row-major (n_retained x names.size())
  std::vector<std::vector<double>> chains;
  std::vector<std::map<std::string, double>> acceptance;  // per chain, post burn-in
  std::vector<IntHistogram> latent;                       // per latent cell, pooled
  Eigen::MatrixXd a_mean;                                 // pooled posterior mean of a
  Eigen::VectorXd detection_logit_mean;

  int index_of(const std::string& name) const;
  double value(int chain, int draw, int param) const {
    return chains[chain][static_cast<std::size_t>(draw) * names.size() + param];
  }
  std::vector<std::vector<double>> parameter_chains(int param) const;
  std::vector<double> pooled(int param) const;
};

struct ParameterSummary {
  std::string name;
  double mean = 0, sd = 0;
  double q025 = 0, q25 = 0, q50 = 0, q75 = 0, q975 = 0;
  double rhat = 1.0;
  bool flagged = false;
};

struct LatentSummary {
  int site = 0, year = 0, species = 0;
  double mean = 0, sd = 0;
  int q025 = 0, q25 = 0, q50 = 0, q75 = 0, q975 = 0;
};

struct PosteriorSummary {
  std::vector<ParameterSummary> parameters;
  std::vector<LatentSummary> latent;
  std::vector<std::string> flagged;  // R-hat >= threshold
  double rhat_threshold = 1.05;

  bool converged() const { return flagged.empty(); }
  const ParameterSummary& get(const std::string& name) const;
};

struct FitResult {
  PosteriorDraws draws;
  PosteriorSummary summary;
};

// Scalar parameter names in draw order.
std::vector<std::string> parameter_names(const Model& model);
// Flattened values of the scalar parameters in `parameter_names` order.
std::vector<double> flatten_parameters(const Parameters& params, const Model& model);

PosteriorSummary summarize(const PosteriorDraws& draws, const Model& model, double rhat_threshold);

// Runs cfg.n_chains independent chains (stream ids 0..n_chains-1 under cfg.seed).
// Throws SamplerError when a block is stuck in every chain.
FitResult fit(const Dataset& data, const ModelSpec& spec, const SamplerConfig& cfg);

// Posterior means of every continuous parameter (detection on the logit scale).
Parameters posterior_mean_parameters(const PosteriorDraws& draws, const Model& model);
// Posterior mean of each latent cell.
std::vector<double> posterior_mean_latent(const PosteriorDraws& draws);

}  // namespace mnmix
