#pragma once

#include "mnmix/metrics.hpp"
#include "mnmix/model.hpp"

#include <cstdint>

namespace mnmix {

// Smallest n whose cumulative latent probability reaches 1 - tail.
int latent_upper_bound(double lambda, double theta, bool hurdle, double tail);

// Observed-data log-likelihood at a parameter point (random effects a included),
// with every N summed out from max_t Y up to the 1 - tail quantile of its latent
// law. Summation continues past that quantile while terms are still relevant, so
// a large observed count never truncates the support. AR variants use a forward
// recursion over the years of each (site, species) chain. A latent rate above 1e9
// contributes zero likelihood, since its states do not fit an int.
double marginal_loglik(const Dataset& data, const ModelSpec& spec, const Parameters& point,
                       double tail = 1e-10);

// Log-likelihood of the (site, species) chain as a function of the random effect.
double site_species_loglik(const Dataset& data, const ModelSpec& spec, const Parameters& point,
                           int i, int s, double a, double tail = 1e-10);

struct IntegrationOptions {
  int draws = 200;            // importance-sampling draws per site
  std::uint64_t seed = 7919;  // fixed so that BIC is a deterministic function of its inputs
  double tail = 1e-10;
};

// Log-likelihood with N and the random effects a ~ MVN(mu_a, Sigma_a) integrated
// out. Each site is a Laplace-centred importance-sampling estimate with
// multivariate t(5) proposals.
double integrated_loglik(const Dataset& data, const ModelSpec& spec, const Parameters& point,
                         const IntegrationOptions& options = {});

struct BicResult {
  double loglik = 0.0;
  std::int64_t n_params = 0;
  double n_obs = 0.0;
  double bic = 0.0;
};

// BIC from the integrated log-likelihood; n_obs = R T K S.
BicResult model_bic(const Dataset& data, const ModelSpec& spec, const Parameters& point,
                    ParameterCount convention = ParameterCount::Table,
                    const IntegrationOptions& options = {});

}  // namespace mnmix
