#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mnmix {

// Granularity of the logit-scale detection intercepts.
//   A: one cell per (site, species, year)
//   B: one cell per (site, species)
//   C: one cell per species
enum class DetectionDim { A, B, C };

char to_char(DetectionDim dim);
DetectionDim detection_dim_from_string(const std::string& text);

int detection_cell_count(DetectionDim dim, int R, int K, int S);
int detection_cell_index(DetectionDim dim, int K, int S, int i, int k, int s);

struct DatasetLabels {
  std::vector<std::string> sites;
  std::vector<int> years;
  std::vector<std::string> species;
  std::vector<std::string> abundance_covariates;
  std::vector<std::string> detection_covariates;
};

// Observed counts Y(i, t, k, s) with site-level abundance covariates X (R x q_lambda)
// and occasion-level detection covariates Z ((R*T) x q_p, row i*T + t).
// Immutable after construction.
class Dataset {
 public:
  Dataset() = default;
  // `counts` uses the layout [site][year][species][occasion].
  Dataset(int R, int T, int K, int S, std::vector<int> counts,
          Eigen::MatrixXd X = {}, Eigen::MatrixXd Z = {}, DatasetLabels labels = {});

  int sites() const { return R_; }
  int occasions() const { return T_; }
  int years() const { return K_; }
  int species() const { return S_; }
  int q_lambda() const { return static_cast<int>(X_.cols()); }
  int q_p() const { return static_cast<int>(Z_.cols()); }

  std::size_t cell(int i, int k, int s) const {
    return (static_cast<std::size_t>(i) * K_ + k) * S_ + s;
  }
  std::size_t cell_count() const { return static_cast<std::size_t>(R_) * K_ * S_; }
  std::size_t count_cells() const { return counts_.size(); }

  int y(int i, int t, int k, int s) const { return counts_[cell(i, k, s) * T_ + t]; }
  std::span<const int> occasions(int i, int k, int s) const {
    return {counts_.data() + cell(i, k, s) * T_, static_cast<std::size_t>(T_)};
  }
  int max_count(int i, int k, int s) const { return max_count_[cell(i, k, s)]; }
  int sum_count(int i, int k, int s) const { return sum_count_[cell(i, k, s)]; }
  int sum_count_cell(std::size_t c) const { return sum_count_[c]; }
  int max_count_cell(std::size_t c) const { return max_count_[c]; }

  const std::vector<int>& raw_counts() const { return counts_; }
  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::MatrixXd& Z() const { return Z_; }
  const DatasetLabels& labels() const { return labels_; }

  double zero_fraction() const;

 private:
  int R_ = 0, T_ = 0, K_ = 0, S_ = 0;
  std::vector<int> counts_;
  std::vector<int> max_count_;
  std::vector<int> sum_count_;
  Eigen::MatrixXd X_;
  Eigen::MatrixXd Z_;
  DatasetLabels labels_;
};

struct Hyperparameters {
  Eigen::VectorXd mu0;           // prior mean of mu_a
  Eigen::VectorXd sigma0_diag;   // prior variances of mu_a
  Eigen::VectorXd omega_diag;    // inverse-Wishart scale (diagonal)
  double df = 0.0;               // inverse-Wishart degrees of freedom
  double theta_shape1 = 1.0;     // Beta prior on theta
  double theta_shape2 = 1.0;
  Eigen::VectorXd mu_phi;
  Eigen::VectorXd sigma_phi_diag;
  double detection_prior_sd = 1.5;  // Normal prior on logit detection cells
  double beta_prior_sd = std::sqrt(10.0);
  double gamma_prior_sd = 1.5;

  // mu0 = 0, Sigma0 = 10 I, Omega = I, v = S + 1, Beta(1, 1), mu_phi = 0, Sigma_phi = I.
  static Hyperparameters defaults(int S);
};

struct ModelSpec {
  bool hurdle = false;
  bool autoregressive = false;
  DetectionDim detection_dim = DetectionDim::C;
  Hyperparameters hyper;

  static ModelSpec make(int S, bool hurdle, bool autoregressive, DetectionDim dim);

  std::string variant_name() const;
  // Throws DomainError on invalid hyperparameters or data/spec inconsistency.
  void validate(const Dataset& data) const;
};

struct Parameters {
  Eigen::MatrixXd a;          // R x S random effects
  Eigen::VectorXd mu_a;       // S
  Eigen::MatrixXd sigma_a;    // S x S
  Eigen::MatrixXd beta;       // S x q_lambda
  Eigen::VectorXd detection;  // logit-scale detection cells
  Eigen::MatrixXd gamma;      // S x q_p detection covariate coefficients
  double theta = 0.5;
  Eigen::VectorXd phi;        // S

  static Parameters zeros(const Dataset& data, const ModelSpec& spec);
};

class LatentAbundance {
 public:
  LatentAbundance() = default;
  LatentAbundance(int R, int K, int S, int fill = 0)
      : R_(R), K_(K), S_(S), values_(static_cast<std::size_t>(R) * K * S, fill) {}

  int& operator()(int i, int k, int s) { return values_[index(i, k, s)]; }
  int operator()(int i, int k, int s) const { return values_[index(i, k, s)]; }
  std::size_t index(int i, int k, int s) const {
    return (static_cast<std::size_t>(i) * K_ + k) * S_ + s;
  }
  int sites() const { return R_; }
  int years() const { return K_; }
  int species() const { return S_; }
  std::vector<int>& values() { return values_; }
  const std::vector<int>& values() const { return values_; }

 private:
  int R_ = 0, K_ = 0, S_ = 0;
  std::vector<int> values_;
};

double log_factorial(int n);
double inv_logit(double x);
double logit(double p);

// Linear predictor a_is + x_i' beta_s (+ phi_s log(N_prev + 1) when AR and k > 0).
double log_lambda(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                  int i, int k, int s, std::optional<int> n_prev);

// exp(log_lambda). `n_prev` must be given iff the model is AR and k > 0 (years are
// zero-based here). Throws InvalidStateError when the result is not finite.
double compute_lambda(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                      int i, int k, int s, std::optional<int> n_prev = std::nullopt);

double compute_p(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                 int i, int t, int k, int s);

// Sum over occasions of log Binomial(y_t | n, p). -inf when any y_t > n.
double loglik_observation(std::span<const int> y, int n, double p);
double loglik_observation(std::span<const int> y, int n, std::span<const double> p);

// Poisson or hurdle-Poisson log-pmf evaluated from log(lambda); never throws.
double latent_logpmf(int n, double log_lambda, double lambda, double theta, bool hurdle);

// Log-pmf of the latent abundance law. Throws DomainError for lambda <= 0 or,
// under the hurdle, theta outside (0, 1).
double logpmf_latent(int n, double lambda, double theta, const ModelSpec& spec);

}  // namespace mnmix
