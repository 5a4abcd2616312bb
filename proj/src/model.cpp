#include "mnmix/model.hpp"

#include "mnmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mnmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LogFactorialTable {
  static constexpr int kSize = 1 << 17;
  std::vector<double> values;
  LogFactorialTable() : values(kSize) {
    values[0] = 0.0;
    for (int n = 1; n < kSize; ++n) values[n] = values[n - 1] + std::log(static_cast<double>(n));
  }
};

const LogFactorialTable& log_factorial_table() {
  static const LogFactorialTable table;
  return table;
}

}  // namespace

char to_char(DetectionDim dim) {
  switch (dim) {
    case DetectionDim::A: return 'A';
    case DetectionDim::B: return 'B';
    case DetectionDim::C: return 'C';
  }
  return '?';
}

DetectionDim detection_dim_from_string(const std::string& text) {
  if (text == "A" || text == "a") return DetectionDim::A;
  if (text == "B" || text == "b") return DetectionDim::B;
  if (text == "C" || text == "c") return DetectionDim::C;
  throw ValidationError("unknown detection dimension '" + text + "' (expected A, B or C)");
}

int detection_cell_count(DetectionDim dim, int R, int K, int S) {
  switch (dim) {
    case DetectionDim::A: return R * K * S;
    case DetectionDim::B: return R * S;
    case DetectionDim::C: return S;
  }
  return 0;
}

int detection_cell_index(DetectionDim dim, int K, int S, int i, int k, int s) {
  switch (dim) {
    case DetectionDim::A: return (i * K + k) * S + s;
    case DetectionDim::B: return i * S + s;
    case DetectionDim::C: return s;
  }
  return 0;
}

Dataset::Dataset(int R, int T, int K, int S, std::vector<int> counts, Eigen::MatrixXd X,
                 Eigen::MatrixXd Z, DatasetLabels labels)
    : R_(R), T_(T), K_(K), S_(S), counts_(std::move(counts)), X_(std::move(X)),
      Z_(std::move(Z)), labels_(std::move(labels)) {
  if (R < 0 || T < 1 || K < 1 || S < 1) {
    throw DomainError("dataset dimensions must satisfy R >= 0, T >= 1, K >= 1, S >= 1");
  }
  const std::size_t expected = static_cast<std::size_t>(R) * T * K * S;
  if (counts_.size() != expected) {
    throw DomainError("count vector has " + std::to_string(counts_.size()) +
                      " entries, expected R*T*K*S = " + std::to_string(expected));
  }
  if (X_.size() == 0) X_.resize(R, 0);
  if (Z_.size() == 0) Z_.resize(static_cast<Eigen::Index>(R) * T, 0);
  if (X_.rows() != R) throw DomainError("abundance covariate matrix must have R rows");
  if (Z_.rows() != static_cast<Eigen::Index>(R) * T) {
    throw DomainError("detection covariate matrix must have R*T rows");
  }
  if (!X_.allFinite() || !Z_.allFinite()) throw DomainError("covariates must be finite");

  max_count_.assign(cell_count(), 0);
  sum_count_.assign(cell_count(), 0);
  for (std::size_t c = 0; c < cell_count(); ++c) {
    int mx = 0, sum = 0;
    for (int t = 0; t < T_; ++t) {
      const int v = counts_[c * T_ + t];
      if (v < 0) throw DomainError("counts must be non-negative");
      mx = std::max(mx, v);
      sum += v;
    }
    max_count_[c] = mx;
    sum_count_[c] = sum;
  }
}

double Dataset::zero_fraction() const {
  if (counts_.empty()) return 0.0;
  const auto zeros = std::count(counts_.begin(), counts_.end(), 0);
  return static_cast<double>(zeros) / static_cast<double>(counts_.size());
}

Hyperparameters Hyperparameters::defaults(int S) {
  Hyperparameters h;
  h.mu0 = Eigen::VectorXd::Zero(S);
  h.sigma0_diag = Eigen::VectorXd::Constant(S, 10.0);
  h.omega_diag = Eigen::VectorXd::Ones(S);
  h.df = S + 1.0;
  h.mu_phi = Eigen::VectorXd::Zero(S);
  h.sigma_phi_diag = Eigen::VectorXd::Ones(S);
  return h;
}

ModelSpec ModelSpec::make(int S, bool hurdle, bool autoregressive, DetectionDim dim) {
  ModelSpec spec;
  spec.hurdle = hurdle;
  spec.autoregressive = autoregressive;
  spec.detection_dim = dim;
  spec.hyper = Hyperparameters::defaults(S);
  return spec;
}

std::string ModelSpec::variant_name() const {
  std::string name = "MNM";
  if (hurdle) name += "-Hurdle";
  if (autoregressive) name += "-AR";
  return name;
}

void ModelSpec::validate(const Dataset& data) const {
  const int S = data.species();
  auto check_size = [S](const Eigen::VectorXd& v, const char* what) {
    if (v.size() != S) throw DomainError(std::string(what) + " must have length S");
  };
  check_size(hyper.mu0, "mu0");
  check_size(hyper.sigma0_diag, "Sigma0 diagonal");
  check_size(hyper.omega_diag, "Omega diagonal");
  if ((hyper.sigma0_diag.array() <= 0).any()) throw DomainError("Sigma0 must be positive");
  if ((hyper.omega_diag.array() <= 0).any()) throw DomainError("Omega must be positive");
  if (hyper.df < S + 1) throw DomainError("inverse-Wishart degrees of freedom must be >= S + 1");
  if (hyper.detection_prior_sd <= 0 || hyper.beta_prior_sd <= 0 || hyper.gamma_prior_sd <= 0) {
    throw DomainError("prior standard deviations must be positive");
  }
  if (hurdle && (hyper.theta_shape1 <= 0 || hyper.theta_shape2 <= 0)) {
    throw DomainError("Beta prior shapes must be positive");
  }
  if (autoregressive) {
    check_size(hyper.mu_phi, "mu_phi");
    check_size(hyper.sigma_phi_diag, "Sigma_phi diagonal");
    if ((hyper.sigma_phi_diag.array() <= 0).any()) throw DomainError("Sigma_phi must be positive");
    if (data.years() < 2) throw DomainError("the autoregressive model requires K >= 2 years");
  }
}

Parameters Parameters::zeros(const Dataset& data, const ModelSpec& spec) {
  const int R = data.sites(), K = data.years(), S = data.species();
  Parameters p;
  p.a = Eigen::MatrixXd::Zero(R, S);
  p.mu_a = Eigen::VectorXd::Zero(S);
  p.sigma_a = Eigen::MatrixXd::Identity(S, S);
  p.beta = Eigen::MatrixXd::Zero(S, data.q_lambda());
  p.detection = Eigen::VectorXd::Zero(detection_cell_count(spec.detection_dim, R, K, S));
  p.gamma = Eigen::MatrixXd::Zero(S, data.q_p());
  p.theta = 0.5;
  p.phi = Eigen::VectorXd::Zero(S);
  return p;
}

double log_factorial(int n) {
  if (n < 0) return std::numeric_limits<double>::quiet_NaN();
  const auto& table = log_factorial_table();
  if (n < LogFactorialTable::kSize) return table.values[n];
  return std::lgamma(static_cast<double>(n) + 1.0);
}

double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double log_lambda(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                  int i, int k, int s, std::optional<int> n_prev) {
  double eta = params.a(i, s);
  if (data.q_lambda() > 0) eta += data.X().row(i).dot(params.beta.row(s));
  if (spec.autoregressive && k > 0) {
    eta += params.phi(s) * std::log(static_cast<double>(*n_prev) + 1.0);
  }
  return eta;
}

double compute_lambda(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                      int i, int k, int s, std::optional<int> n_prev) {
  const bool needs_prev = spec.autoregressive && k > 0;
  if (needs_prev != n_prev.has_value()) {
    throw DomainError(needs_prev ? "previous-year abundance required for AR model at k > 1"
                                 : "previous-year abundance only applies to AR model at k > 1");
  }
  if (n_prev && *n_prev < 0) throw DomainError("previous-year abundance must be >= 0");
  const double lambda = std::exp(log_lambda(params, data, spec, i, k, s, n_prev));
  if (!std::isfinite(lambda) || lambda <= 0.0) {
    throw InvalidStateError("abundance rate is not finite and positive at site " +
                            std::to_string(i) + ", year " + std::to_string(k) + ", species " +
                            std::to_string(s));
  }
  return lambda;
}

double compute_p(const Parameters& params, const Dataset& data, const ModelSpec& spec,
                 int i, int t, int k, int s) {
  if (i < 0 || i >= data.sites() || t < 0 || t >= data.occasions() || k < 0 ||
      k >= data.years() || s < 0 || s >= data.species()) {
    throw DomainError("detection index out of range");
  }
  double eta = params.detection(
      detection_cell_index(spec.detection_dim, data.years(), data.species(), i, k, s));
  if (data.q_p() > 0) {
    eta += data.Z().row(static_cast<Eigen::Index>(i) * data.occasions() + t).dot(params.gamma.row(s));
  }
  return inv_logit(eta);
}

double loglik_observation(std::span<const int> y, int n, double p) {
  double total = 0.0;
  const double lf_n = log_factorial(n);
  for (int v : y) {
    if (v > n) return kNegInf;
    double term = lf_n - log_factorial(v) - log_factorial(n - v);
    if (v > 0) term += v * std::log(p);
    if (n - v > 0) term += (n - v) * std::log1p(-p);
    total += term;
  }
  return total;
}

double loglik_observation(std::span<const int> y, int n, std::span<const double> p) {
  double total = 0.0;
  const double lf_n = log_factorial(n);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const int v = y[t];
    if (v > n) return kNegInf;
    double term = lf_n - log_factorial(v) - log_factorial(n - v);
    if (v > 0) term += v * std::log(p[t]);
    if (n - v > 0) term += (n - v) * std::log1p(-p[t]);
    total += term;
  }
  return total;
}

double latent_logpmf(int n, double log_lambda, double lambda, double theta, bool hurdle) {
  if (n < 0) return kNegInf;
  if (!std::isfinite(lambda)) return kNegInf;
  if (!hurdle) {
    if (n == 0) return -lambda;
    return n * log_lambda - lambda - log_factorial(n);
  }
  if (n == 0) return std::log(theta);
  // log(1 - e^{-lambda}) without cancellation for small lambda
  const double log_norm = std::log(-std::expm1(-lambda));
  return std::log1p(-theta) + n * log_lambda - lambda - log_factorial(n) - log_norm;
}

double logpmf_latent(int n, double lambda, double theta, const ModelSpec& spec) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("latent abundance rate must be positive and finite");
  }
  if (spec.hurdle && !(theta > 0.0 && theta < 1.0)) {
    throw DomainError("hurdle zero probability must lie in (0, 1)");
  }
  if (n < 0) throw DomainError("latent abundance must be non-negative");
  return latent_logpmf(n, std::log(lambda), lambda, theta, spec.hurdle);
}

}  // namespace mnmix
