#pragma once

#include "mnmix/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace mnmix {

// Lin's concordance correlation with population (1/n) moments.
double ccc(const std::vector<double>& estimates, const std::vector<double>& truth);

// 1 - tr(X1 X2) / (||X1||_F ||X2||_F).
double cmd(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2);

// Mean of |est - truth| / |truth|.
double relative_bias(const std::vector<double>& estimates, double truth);
double relative_bias(const std::vector<double>& estimates, const std::vector<double>& truth);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};
// Fraction of intervals with lo <= truth <= hi.
double coverage(const std::vector<Interval>& intervals, double truth);
double coverage(const std::vector<Interval>& intervals, const std::vector<double>& truth);

double bic(double loglik, double n_params, double n_obs);

enum class ParameterCount {
  // Detection cells + S (mu_a) + S(S+1)/2 (Sigma_a) + 1 (theta) + 2 (AR) + 2 q_lambda.
  Table,
  // Every free scalar: adds S per AR term set, S q_lambda betas and S q_p gammas.
  Full,
};
std::int64_t n_params(const ModelSpec& spec, int R, int K, int S, int q_lambda, int q_p,
                      ParameterCount convention = ParameterCount::Table);

struct MannKendallResult {
  std::int64_t S = 0;
  double tau = 0.0;
  double var_s = 0.0;
  double z = 0.0;
  double p_value = 0.5;  // one-sided, increasing alternative
  bool exact = false;
};

// One-sided (increasing trend) Mann-Kendall test. The p-value is exact for
// tie-free series of length <= 50 and otherwise uses the normal approximation
// with continuity correction and the tie-corrected variance.
MannKendallResult mann_kendall(const std::vector<double>& series);

// P(S >= s) under the null for a tie-free series of length n.
double mann_kendall_exact_upper(int n, std::int64_t s);

}  // namespace mnmix
