#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace mnmix {

// Sigma_ss' / sqrt(Sigma_ss Sigma_s's'). Throws DomainError unless positive definite.
Eigen::MatrixXd corr_from_sigma(const Eigen::MatrixXd& sigma);

// Correlation of Poisson counts whose log rates are MVN(mu, sigma).
Eigen::MatrixXd corr_mnm(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

// Hurdle-Poisson counts with log-normal rates, by a second-order delta
// expansion of the conditional moments around E(lambda). theta in (0, 1).
Eigen::MatrixXd corr_hurdle(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                            double theta);

// Conditional moments of a hurdle-Poisson count given lambda and their first
// two derivatives in lambda.
struct HurdleConditional {
  double m = 0, dm = 0, d2m = 0;  // E(N | lambda)
  double v = 0, d2v = 0;          // Var(N | lambda)
};
HurdleConditional hurdle_conditional(double lambda, double theta);

// Terms added to (mu_a, Sigma_a) before the count correlation is taken.
struct CorrelationShift {
  Eigen::VectorXd beta_mean;  // S: x_i' mu_beta_s
  Eigen::MatrixXd beta_cov;   // S x S: x_i^2 Sigma_beta; empty means zero
  Eigen::VectorXd mu_phi;     // S; empty means zero
  Eigen::MatrixXd sigma_phi;  // S x S; empty means zero
};

// Abundance correlation at zero-based year k of an AR variant. For k > 0 the
// log rate mean gains L_s mu_phi_s and its covariance L_s L_s' Sigma_phi_ss'
// with L_s = log(n_prev_s + 1). theta selects the hurdle form.
Eigen::MatrixXd corr_ar(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a,
                        const CorrelationShift& shift, int k,
                        const std::optional<Eigen::VectorXi>& n_prev,
                        std::optional<double> theta = std::nullopt);

struct CorrelationMatrix {
  int site = 0;
  int year = -1;  // -1 when the matrix is not year specific
  Eigen::MatrixXd value;
};

struct CorrelationReport {
  Eigen::MatrixXd latent;
  std::vector<CorrelationMatrix> abundance;
  std::string method;  // "exact" or "taylor"
};

struct CorrelationInputs {
  Eigen::VectorXd mu_a;
  Eigen::MatrixXd sigma_a;
  Eigen::MatrixXd beta;       // S x q_lambda, may be empty
  Eigen::MatrixXd X;          // R x q_lambda, may be empty
  // S x S covariance of each covariate's coefficients across species, scaled by
  // sum_j x_ij^2; empty treats beta as fixed.
  Eigen::MatrixXd sigma_beta;
  bool hurdle = false;
  double theta = 0.5;
  bool autoregressive = false;
  Eigen::VectorXd mu_phi;
  Eigen::MatrixXd sigma_phi;
  // Posterior mean latent abundance, R*K*S in [site][year][species] order;
  // required for AR years after the first.
  std::vector<double> n_mean;
  int sites = 1;
  int years = 1;
};

CorrelationReport build_correlation_report(const CorrelationInputs& in);

}  // namespace mnmix
