#include "mnmix/errors.hpp"
#include "mnmix/sampler.hpp"

#include "latent_sum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mnmix {

namespace {

using detail::kNegInf;
using detail::log_sigmoid;
constexpr double kTargetContinuous = 0.44;
constexpr double kTargetLatent = 0.3;

bool metropolis_accept(double log_ratio, RngStream& rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(rng.uniform()) < log_ratio;
}

BlockStats& stats_of(ChainState& st, Block b) { return st.stats[static_cast<int>(b)]; }

void count(ChainState& st, Block b, bool accepted) {
  auto& s = stats_of(st, b);
  ++s.proposed;
  if (accepted) ++s.accepted;
}

double latent_term(int n, double log_lambda, double theta, bool hurdle) {
  return latent_logpmf(n, log_lambda, std::exp(log_lambda), theta, hurdle);
}

void refresh_detection(ChainState& st, const Model& model) {
  const auto& d = model.data();
  const int T = d.occasions();
  for (std::size_t c = 0; c < d.cell_count(); ++c) {
    double sum = 0.0;
    for (int t = 0; t < T; ++t) {
      const std::size_t o = c * T + t;
      st.log_p[o] = log_sigmoid(st.eta_detection[o]);
      st.log_1mp[o] = log_sigmoid(-st.eta_detection[o]);
      sum += st.log_1mp[o];
    }
    st.sum_log_1mp[c] = sum;
  }
}

void refresh_lambda(ChainState& st, const Model& model) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species();
  st.base_eta = st.params.a;
  if (d.q_lambda() > 0) st.base_eta += d.X() * st.params.beta.transpose();
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        const std::size_t c = d.cell(i, k, s);
        double eta = st.base_eta(i, s);
        if (model.spec().autoregressive && k > 0) {
          eta += st.params.phi(s) * std::log(st.N(i, k - 1, s) + 1.0);
        }
        st.log_lambda[c] = eta;
        st.lambda[c] = std::exp(eta);
      }
    }
  }
}

void refresh_sigma_inverse(ChainState& st) {
  const auto S = st.params.sigma_a.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(st.params.sigma_a);
  if (llt.info() != Eigen::Success) throw InvalidStateError("Sigma_a is not positive definite");
  st.sigma_a_inverse = llt.solve(Eigen::MatrixXd::Identity(S, S));
}

// Shared by detection cells and detection covariate coefficients: the proposal
// adds delta * shift_of(cell, t) to the logit of every affected observation.
// Returns the accepted step, or 0 when the proposal is rejected.
template <typename ShiftFn>
double propose_detection_shift(ChainState& st, const Model& model, RngStream& rng, Block block,
                               double scale, int& acc, double current, double prior_sd,
                               const std::vector<std::size_t>& cells, ShiftFn shift_of) {
  const auto& d = model.data();
  const int T = d.occasions();
  const double delta = scale * rng.normal();
  const double proposal = current + delta;
  double log_ratio = -(proposal * proposal - current * current) / (2.0 * prior_sd * prior_sd);
  for (std::size_t c : cells) {
    const int n = st.N.values()[c];
    const int* y = d.raw_counts().data() + c * T;
    for (int t = 0; t < T; ++t) {
      const std::size_t o = c * T + t;
      const double shift = delta * shift_of(c, t);
      if (shift == 0.0) continue;
      const double eta = st.eta_detection[o] + shift;
      log_ratio += y[t] * (log_sigmoid(eta) - st.log_p[o]) +
                   (n - y[t]) * (log_sigmoid(-eta) - st.log_1mp[o]);
    }
  }
  const bool ok = metropolis_accept(log_ratio, rng);
  count(st, block, ok);
  if (!ok) return 0.0;
  ++acc;
  for (std::size_t c : cells) {
    double sum = 0.0;
    for (int t = 0; t < T; ++t) {
      const std::size_t o = c * T + t;
      st.eta_detection[o] += delta * shift_of(c, t);
      st.log_p[o] = log_sigmoid(st.eta_detection[o]);
      st.log_1mp[o] = log_sigmoid(-st.eta_detection[o]);
      sum += st.log_1mp[o];
    }
    st.sum_log_1mp[c] = sum;
  }
  return delta;
}

// Conditional law of N in one cell whose occasions share a detection logit,
// given every other unknown. Weights are relative to the mode and built by the
// ratio of consecutive terms, so no exponentials are needed in the window.
struct CellConditional {
  int lo = 0;                  // n of weights[0]
  std::vector<double> weights;
  double log_mass = 0.0;       // log of the total, in the scale of the full conditional
  double zero_weight = 0.0;    // mass at n = 0 under the hurdle when every count is zero
};

constexpr double kConditionalEps = 1e-12;

// shift is added to log lambda of the cell.
void cell_conditional(const ChainState& st, const Model& model, std::size_t c, double l1mp,
                      double shift, CellConditional& out) {
  const auto& d = model.data();
  const int T = d.occasions();
  const bool hurdle = model.spec().hurdle;
  const int* y = d.raw_counts().data() + c * T;
  const int max_y = d.max_count_cell(c);
  const double ll = st.log_lambda[c] + shift;
  const double lam = shift == 0.0 ? st.lambda[c] : std::exp(ll);
  const double slope = std::exp(ll + T * l1mp);
  // term(n + 1) / term(n)
  auto ratio = [&](int n) {
    double num = slope, den = 1.0;
    const double m = n + 1.0;
    for (int t = 0; t < T; ++t) {
      num *= m;
      den *= m - y[t];
    }
    return num / (den * m);
  };
  const int start = hurdle ? std::max(max_y, 1) : max_y;
  int mode = start;
  if (ratio(start) > 1.0) {
    int lo = start;
    int step = std::max(1, st.N.values()[c] - start);
    int hi = lo + step;
    while (ratio(hi) > 1.0) {
      lo = hi;
      step *= 2;
      hi = lo + step;
    }
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      if (ratio(mid) > 1.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    mode = hi;
  }
  double anchor = mode * (ll + T * l1mp) + (T - 1) * log_factorial(mode);
  for (int t = 0; t < T; ++t) anchor -= log_factorial(mode - y[t]);
  anchor -= lam;
  if (hurdle) anchor += std::log1p(-st.params.theta) - std::log(-std::expm1(-lam));

  auto& w = out.weights;
  w.clear();
  double v = 1.0;
  int n = mode;
  while (n > start) {
    v /= ratio(n - 1);
    if (v < kConditionalEps) break;
    w.push_back(v);
    --n;
  }
  out.lo = n;
  std::reverse(w.begin(), w.end());
  w.push_back(1.0);
  double total = 0.0;
  for (double x : w) total += x;
  v = 1.0;
  for (int m = mode;; ++m) {
    v *= ratio(m);
    if (v < kConditionalEps) break;
    w.push_back(v);
    total += v;
  }
  out.zero_weight = 0.0;
  if (hurdle && max_y == 0) {
    out.zero_weight = std::exp(std::log(st.params.theta) - anchor);
    total += out.zero_weight;
  }
  out.log_mass = anchor + std::log(total);
}

int draw_from_conditional(const CellConditional& cc, RngStream& rng) {
  double total = cc.zero_weight;
  for (double x : cc.weights) total += x;
  double u = rng.uniform() * total;
  if (u < cc.zero_weight) return 0;
  u -= cc.zero_weight;
  for (std::size_t j = 0; j < cc.weights.size(); ++j) {
    u -= cc.weights[j];
    if (u <= 0.0) return cc.lo + static_cast<int>(j);
  }
  return cc.lo + static_cast<int>(cc.weights.size()) - 1;
}

// Joint move along the ridge where lambda p is constant: the detection logit
// takes a random-walk step, the random effects behind the cell move by
// log p - log p', and every member N is summed out for the accept step and
// then drawn from its exact conditional. Needs a shared logit per cell and
// independent years.
void joint_detection_update(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const auto& spec = model.spec();
  const int T = d.occasions(), R = d.sites(), K = d.years(), S = d.species();
  const double sd = spec.hyper.detection_prior_sd;
  // C: one cell per species moves a column of a with mu_a; B (or A with one
  // year): one cell per (site, species) moves a single a; A otherwise: no shift
  const bool species_cells = spec.detection_dim == DetectionDim::C;
  const bool site_cells = spec.detection_dim == DetectionDim::B ||
                          (spec.detection_dim == DetectionDim::A && K == 1);
  auto& tn = st.tuning;
  ++tn.tries_joint;
  CellConditional prop_cc, cur_cc;
  std::vector<int> fresh;
  for (int dc = 0; dc < model.detection_cells(); ++dc) {
    const auto& members = model.detection_members(dc);
    const double cur = st.params.detection(dc);
    const double prop = cur + tn.scale_joint[dc] * rng.normal();
    const double lp = log_sigmoid(prop), l1mp = log_sigmoid(-prop);
    const double clp = log_sigmoid(cur), cl1mp = log_sigmoid(-cur);
    double log_ratio = -(prop * prop - cur * cur) / (2.0 * sd * sd);
    double delta = 0.0;
    int site = -1, species = -1;
    if (species_cells || site_cells) {
      delta = clp - lp;
      const std::size_t c0 = static_cast<std::size_t>(members.front());
      species = static_cast<int>(c0 % S);
      if (species_cells) {
        const double m0 = spec.hyper.mu0(species), v0 = spec.hyper.sigma0_diag(species);
        const double mu = st.params.mu_a(species);
        log_ratio -= ((mu + delta - m0) * (mu + delta - m0) - (mu - m0) * (mu - m0)) / (2.0 * v0);
      } else {
        site = static_cast<int>(c0 / (static_cast<std::size_t>(K) * S));
        const Eigen::VectorXd r = st.params.a.row(site).transpose() - st.params.mu_a;
        log_ratio += -delta * st.sigma_a_inverse.row(species).dot(r) -
                     0.5 * delta * delta * st.sigma_a_inverse(species, species);
      }
    }
    fresh.clear();
    for (int c : members) {
      cell_conditional(st, model, c, l1mp, delta, prop_cc);
      cell_conditional(st, model, c, cl1mp, 0.0, cur_cc);
      log_ratio += prop_cc.log_mass - cur_cc.log_mass +
                   d.sum_count_cell(c) * ((lp - l1mp) - (clp - cl1mp));
      fresh.push_back(draw_from_conditional(prop_cc, rng));
    }
    const bool ok = metropolis_accept(log_ratio, rng);
    count(st, Block::Detection, ok);
    if (!ok) continue;
    ++tn.acc_joint[dc];
    st.params.detection(dc) = prop;
    if (species_cells) {
      st.params.mu_a(species) += delta;
      for (int i = 0; i < R; ++i) {
        st.params.a(i, species) += delta;
        st.base_eta(i, species) += delta;
      }
    } else if (site_cells) {
      st.params.a(site, species) += delta;
      st.base_eta(site, species) += delta;
    }
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto c = static_cast<std::size_t>(members[m]);
      st.N.values()[c] = fresh[m];
      if (delta != 0.0) {
        st.log_lambda[c] += delta;
        st.lambda[c] = std::exp(st.log_lambda[c]);
      }
      for (int t = 0; t < T; ++t) {
        const std::size_t o = c * T + t;
        st.eta_detection[o] = prop;
        st.log_p[o] = lp;
        st.log_1mp[o] = l1mp;
      }
      st.sum_log_1mp[c] = T * l1mp;
    }
  }
}

void update_random_effects(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species();
  const bool hurdle = model.spec().hurdle;
  const double theta = st.params.theta;
  auto& a = st.params.a;
  for (int i = 0; i < R; ++i) {
    for (int s = 0; s < S; ++s) {
      const std::size_t e = static_cast<std::size_t>(i) * S + s;
      const double delta = st.tuning.scale_a[e] * rng.normal();
      const Eigen::VectorXd r = a.row(i).transpose() - st.params.mu_a;
      const double pr = st.sigma_a_inverse.row(s).dot(r);
      double log_ratio = -delta * pr - 0.5 * delta * delta * st.sigma_a_inverse(s, s);
      for (int k = 0; k < K; ++k) {
        const std::size_t c = d.cell(i, k, s);
        const int n = st.N.values()[c];
        log_ratio += latent_term(n, st.log_lambda[c] + delta, theta, hurdle) -
                     latent_logpmf(n, st.log_lambda[c], st.lambda[c], theta, hurdle);
      }
      const bool ok = metropolis_accept(log_ratio, rng);
      count(st, Block::RandomEffects, ok);
      if (!ok) continue;
      ++st.tuning.acc_a[e];
      a(i, s) += delta;
      st.base_eta(i, s) += delta;
      for (int k = 0; k < K; ++k) {
        const std::size_t c = d.cell(i, k, s);
        st.log_lambda[c] += delta;
        st.lambda[c] = std::exp(st.log_lambda[c]);
      }
    }
  }
}

void update_beta(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species(), q = d.q_lambda();
  const bool hurdle = model.spec().hurdle;
  const double theta = st.params.theta;
  const double sd = model.spec().hyper.beta_prior_sd;
  for (int s = 0; s < S; ++s) {
    for (int j = 0; j < q; ++j) {
      const std::size_t e = static_cast<std::size_t>(s) * q + j;
      const double delta = st.tuning.scale_beta[e] * rng.normal();
      const double cur = st.params.beta(s, j);
      double log_ratio = -((cur + delta) * (cur + delta) - cur * cur) / (2.0 * sd * sd);
      for (int i = 0; i < R; ++i) {
        const double shift = delta * d.X()(i, j);
        for (int k = 0; k < K; ++k) {
          const std::size_t c = d.cell(i, k, s);
          const int n = st.N.values()[c];
          log_ratio += latent_term(n, st.log_lambda[c] + shift, theta, hurdle) -
                       latent_logpmf(n, st.log_lambda[c], st.lambda[c], theta, hurdle);
        }
      }
      const bool ok = metropolis_accept(log_ratio, rng);
      count(st, Block::Beta, ok);
      if (!ok) continue;
      ++st.tuning.acc_beta[e];
      st.params.beta(s, j) += delta;
      for (int i = 0; i < R; ++i) {
        const double shift = delta * d.X()(i, j);
        st.base_eta(i, s) += shift;
        for (int k = 0; k < K; ++k) {
          const std::size_t c = d.cell(i, k, s);
          st.log_lambda[c] += shift;
          st.lambda[c] = std::exp(st.log_lambda[c]);
        }
      }
    }
  }
}

void update_phi(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const auto& hyper = model.spec().hyper;
  const int R = d.sites(), K = d.years(), S = d.species();
  const bool hurdle = model.spec().hurdle;
  const double theta = st.params.theta;
  for (int s = 0; s < S; ++s) {
    const double delta = st.tuning.scale_phi[s] * rng.normal();
    const double cur = st.params.phi(s);
    const double m = hyper.mu_phi(s), v = hyper.sigma_phi_diag(s);
    double log_ratio = -((cur + delta - m) * (cur + delta - m) - (cur - m) * (cur - m)) / (2.0 * v);
    for (int i = 0; i < R; ++i) {
      for (int k = 1; k < K; ++k) {
        const std::size_t c = d.cell(i, k, s);
        const double shift = delta * std::log(st.N(i, k - 1, s) + 1.0);
        const int n = st.N.values()[c];
        log_ratio += latent_term(n, st.log_lambda[c] + shift, theta, hurdle) -
                     latent_logpmf(n, st.log_lambda[c], st.lambda[c], theta, hurdle);
      }
    }
    const bool ok = metropolis_accept(log_ratio, rng);
    count(st, Block::Phi, ok);
    if (!ok) continue;
    ++st.tuning.acc_phi[s];
    st.params.phi(s) += delta;
    for (int i = 0; i < R; ++i) {
      for (int k = 1; k < K; ++k) {
        const std::size_t c = d.cell(i, k, s);
        st.log_lambda[c] += delta * std::log(st.N(i, k - 1, s) + 1.0);
        st.lambda[c] = std::exp(st.log_lambda[c]);
      }
    }
  }
}

}  // namespace

const char* block_name(Block block) {
  switch (block) {
    case Block::LatentN: return "N";
    case Block::RandomEffects: return "a";
    case Block::MuA: return "mu_a";
    case Block::SigmaA: return "Sigma_a";
    case Block::Detection: return "p";
    case Block::DetectionCovariates: return "gamma";
    case Block::Beta: return "beta";
    case Block::Theta: return "theta";
    case Block::Phi: return "phi";
  }
  return "?";
}

void SamplerConfig::validate() const {
  if (n_chains < 1) throw DomainError("n_chains must be >= 1");
  if (n_iter < 1) throw DomainError("n_iter must be >= 1");
  if (n_burn < 0 || n_burn >= n_iter) throw DomainError("n_burn must satisfy 0 <= n_burn < n_iter");
  if (thin < 1) throw DomainError("thin must be >= 1");
  if (retained_per_chain() < 1) throw DomainError("no draws would be retained");
  if (adapt_interval < 1) throw DomainError("adapt_interval must be >= 1");
  if (collapse_interval < 0) throw DomainError("collapse_interval must be >= 0");
  if (!(scale_a > 0 && scale_detection > 0 && scale_beta > 0 && scale_gamma > 0 && scale_phi > 0)) {
    throw DomainError("proposal scales must be positive");
  }
}

Model::Model(Dataset data, ModelSpec spec) : data_(std::move(data)), spec_(std::move(spec)) {
  spec_.validate(data_);
  const int R = data_.sites(), K = data_.years(), S = data_.species();
  members_.assign(detection_cell_count(spec_.detection_dim, R, K, S), {});
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        members_[detection_cell(i, k, s)].push_back(static_cast<int>(data_.cell(i, k, s)));
      }
    }
  }
  sigma0_inv_ = spec_.hyper.sigma0_diag.cwiseInverse().asDiagonal();
}

ChainState make_state(const Model& model, Parameters params, LatentAbundance N,
                      const SamplerConfig& cfg) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species(), T = d.occasions();
  const std::size_t cells = d.cell_count();
  if (N.values().size() != cells) throw DomainError("latent abundance has the wrong size");
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        if (N(i, k, s) < d.max_count(i, k, s)) {
          throw DomainError("latent abundance below the maximum observed count");
        }
      }
    }
  }
  ChainState st;
  st.params = std::move(params);
  st.N = std::move(N);
  st.log_lambda.assign(cells, 0.0);
  st.lambda.assign(cells, 0.0);
  st.eta_detection.assign(cells * T, 0.0);
  st.log_p.assign(cells * T, 0.0);
  st.log_1mp.assign(cells * T, 0.0);
  st.sum_log_1mp.assign(cells, 0.0);

  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        const std::size_t c = d.cell(i, k, s);
        const double cell_eta = st.params.detection(model.detection_cell(i, k, s));
        for (int t = 0; t < T; ++t) {
          double eta = cell_eta;
          if (d.q_p() > 0) {
            eta += d.Z().row(static_cast<Eigen::Index>(i) * T + t).dot(st.params.gamma.row(s));
          }
          st.eta_detection[c * T + t] = eta;
        }
      }
    }
  }
  refresh_detection(st, model);
  refresh_lambda(st, model);
  refresh_sigma_inverse(st);

  auto& tn = st.tuning;
  tn.scale_a.assign(static_cast<std::size_t>(R) * S, cfg.scale_a);
  tn.scale_detection.assign(model.detection_cells(), cfg.scale_detection);
  tn.scale_beta.assign(static_cast<std::size_t>(S) * d.q_lambda(), cfg.scale_beta);
  tn.scale_gamma.assign(static_cast<std::size_t>(S) * d.q_p(), cfg.scale_gamma);
  tn.scale_phi.assign(S, cfg.scale_phi);
  tn.width_n.assign(cells, 1);
  for (std::size_t c = 0; c < cells; ++c) {
    const int mx = *std::max_element(d.raw_counts().begin() + c * T,
                                     d.raw_counts().begin() + (c + 1) * T);
    tn.width_n[c] = 1 + static_cast<int>(std::sqrt(static_cast<double>(mx)) / 2.0);
  }
  tn.acc_a.assign(tn.scale_a.size(), 0);
  tn.acc_detection.assign(tn.scale_detection.size(), 0);
  tn.acc_beta.assign(tn.scale_beta.size(), 0);
  tn.acc_gamma.assign(tn.scale_gamma.size(), 0);
  tn.acc_phi.assign(tn.scale_phi.size(), 0);
  tn.acc_n.assign(cells, 0);
  tn.tries_n.assign(cells, 0);
  tn.scale_joint.assign(model.detection_cells(), cfg.scale_detection);
  tn.acc_joint.assign(tn.scale_joint.size(), 0);
  if (d.q_p() == 0 && !model.spec().autoregressive) st.collapse_interval = cfg.collapse_interval;
  return st;
}

ChainState initialize_state(const Model& model, const SamplerConfig& cfg, RngStream& rng) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species();
  LatentAbundance N(R, K, S);
  int empty_cells = 0;
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        const int mx = d.max_count(i, k, s);
        if (mx == 0) ++empty_cells;
        N(i, k, s) = (mx == 0 && model.spec().hurdle) ? 0 : mx + 1;
      }
    }
  }
  Parameters p = Parameters::zeros(d, model.spec());
  for (int i = 0; i < R; ++i) {
    for (int s = 0; s < S; ++s) {
      double mean_n = 0.0;
      for (int k = 0; k < K; ++k) mean_n += N(i, k, s);
      mean_n /= K;
      p.a(i, s) = std::log(mean_n + 0.5) + 0.1 * rng.normal();
    }
  }
  if (R > 0) {
    p.mu_a = p.a.colwise().mean().transpose();
    Eigen::VectorXd var = Eigen::VectorXd::Constant(S, 0.1);
    if (R > 1) {
      const Eigen::MatrixXd centered = p.a.rowwise() - p.mu_a.transpose();
      var += (centered.array().square().colwise().sum() / (R - 1)).matrix().transpose();
    }
    p.sigma_a = var.asDiagonal();
  } else {
    p.mu_a = model.spec().hyper.mu0;
  }
  const double cells = static_cast<double>(d.cell_count());
  p.theta = cells > 0 ? std::clamp(empty_cells / cells, 0.05, 0.95) : 0.5;
  return make_state(model, std::move(p), std::move(N), cfg);
}

void update_latent_n(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const int R = d.sites(), K = d.years(), S = d.species(), T = d.occasions();
  const bool hurdle = model.spec().hurdle;
  const bool ar = model.spec().autoregressive;
  const double theta = st.params.theta;
  auto& N = st.N.values();

  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < S; ++s) {
        const std::size_t c = d.cell(i, k, s);
        const int* y = d.raw_counts().data() + c * T;
        const int max_y = d.max_count(i, k, s);
        const bool has_next = ar && k + 1 < K;
        const std::size_t next = has_next ? d.cell(i, k + 1, s) : 0;

        auto target = [&](int m) {
          if (m < max_y) return kNegInf;
          double v = latent_logpmf(m, st.log_lambda[c], st.lambda[c], theta, hurdle);
          const double lf_m = log_factorial(m);
          for (int t = 0; t < T; ++t) v += lf_m - log_factorial(m - y[t]);
          v += m * st.sum_log_1mp[c];
          if (has_next) {
            const double ll = st.base_eta(i, s) + st.params.phi(s) * std::log(m + 1.0);
            v += latent_term(N[next], ll, theta, hurdle);
          }
          return v;
        };

        const int n = N[c];
        int proposal = n;
        double log_ratio = kNegInf;
        const bool jump = hurdle && rng.uniform() < 0.5;
        if (jump) {
          // Occupancy move: 0 -> ZTP(lambda) draw, or any n > 0 -> 0.
          const double lam = st.lambda[c];
          if (std::isfinite(lam) && lam > 0.0) {
            if (n == 0) {
              proposal = sample_ztp(rng, lam);
              log_ratio = target(proposal) - target(0) - ztp_logpmf(proposal, lam);
            } else if (max_y == 0) {
              proposal = 0;
              log_ratio = target(0) - target(n) + ztp_logpmf(n, lam);
            }
          }
        } else {
          const int w = st.tuning.width_n[c];
          int step = w > 1 ? rng.uniform_int(1, w) : 1;
          if (rng.uniform() < 0.5) step = -step;
          proposal = n + step;
          ++st.tuning.tries_n[c];
          if (proposal >= max_y) log_ratio = target(proposal) - target(n);
        }
        const bool ok = proposal != n && metropolis_accept(log_ratio, rng);
        count(st, Block::LatentN, ok);
        if (!ok) continue;
        if (!jump) ++st.tuning.acc_n[c];
        N[c] = proposal;
        if (has_next) {
          st.log_lambda[next] = st.base_eta(i, s) + st.params.phi(s) * std::log(proposal + 1.0);
          st.lambda[next] = std::exp(st.log_lambda[next]);
        }
      }
    }
  }
}

Eigen::VectorXd gibbs_update_mu_a(const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma_a,
                                  const Eigen::VectorXd& mu0, const Eigen::MatrixXd& sigma0,
                                  RngStream& rng) {
  const Eigen::Index S = mu0.size();
  Eigen::LLT<Eigen::MatrixXd> llt_a(sigma_a);
  Eigen::LLT<Eigen::MatrixXd> llt_0(sigma0);
  if (llt_a.info() != Eigen::Success || llt_0.info() != Eigen::Success) {
    throw DomainError("mu_a update requires positive definite Sigma_a and Sigma0");
  }
  const Eigen::MatrixXd prec_a = llt_a.solve(Eigen::MatrixXd::Identity(S, S));
  const Eigen::MatrixXd prec_0 = llt_0.solve(Eigen::MatrixXd::Identity(S, S));
  const double R = static_cast<double>(a.rows());
  Eigen::MatrixXd precision = prec_0 + R * prec_a;
  Eigen::VectorXd shift = prec_0 * mu0;
  if (a.rows() > 0) shift += prec_a * a.colwise().sum().transpose();
  return sample_mvnormal_canonical(rng, shift, 0.5 * (precision + precision.transpose()));
}

Eigen::MatrixXd gibbs_update_sigma_a(const Eigen::MatrixXd& a, const Eigen::VectorXd& mu_a,
                                     const Eigen::MatrixXd& omega, double df, RngStream& rng) {
  Eigen::MatrixXd scale = omega;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Eigen::VectorXd r = a.row(i).transpose() - mu_a;
    scale.noalias() += r * r.transpose();
  }
  return sample_inverse_wishart(rng, scale, df + static_cast<double>(a.rows()));
}

void mh_update_block(Block block, ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const int T = d.occasions();
  switch (block) {
    case Block::RandomEffects:
      update_random_effects(st, model, rng);
      return;
    case Block::Beta:
      update_beta(st, model, rng);
      return;
    case Block::Phi:
      update_phi(st, model, rng);
      return;
    case Block::Detection: {
      const double sd = model.spec().hyper.detection_prior_sd;
      if (d.q_p() == 0) {
        // every occasion of a cell shares one logit, so the binomial terms reduce
        // to the detected and missed totals over the member cells
        for (int dc = 0; dc < model.detection_cells(); ++dc) {
          const auto& members = model.detection_members(dc);
          std::int64_t detected = 0, trials = 0;
          for (int c : members) {
            detected += d.sum_count_cell(c);
            trials += static_cast<std::int64_t>(T) * st.N.values()[c];
          }
          const double cur = st.params.detection(dc);
          const double prop = cur + st.tuning.scale_detection[dc] * rng.normal();
          const double lp = log_sigmoid(prop), l1mp = log_sigmoid(-prop);
          const double log_ratio = -(prop * prop - cur * cur) / (2.0 * sd * sd) +
                                   detected * (lp - log_sigmoid(cur)) +
                                   (trials - detected) * (l1mp - log_sigmoid(-cur));
          const bool ok = metropolis_accept(log_ratio, rng);
          count(st, Block::Detection, ok);
          if (!ok) continue;
          ++st.tuning.acc_detection[dc];
          st.params.detection(dc) = prop;
          for (int c : members) {
            for (int t = 0; t < T; ++t) {
              const std::size_t o = static_cast<std::size_t>(c) * T + t;
              st.eta_detection[o] = prop;
              st.log_p[o] = lp;
              st.log_1mp[o] = l1mp;
            }
            st.sum_log_1mp[c] = T * l1mp;
          }
        }
        return;
      }
      std::vector<std::size_t> cells;
      for (int dc = 0; dc < model.detection_cells(); ++dc) {
        const auto& members = model.detection_members(dc);
        cells.assign(members.begin(), members.end());
        st.params.detection(dc) += propose_detection_shift(
            st, model, rng, Block::Detection, st.tuning.scale_detection[dc],
            st.tuning.acc_detection[dc], st.params.detection(dc), sd, cells,
            [](std::size_t, int) { return 1.0; });
      }
      return;
    }
    case Block::DetectionCovariates: {
      const int S = d.species(), q = d.q_p(), K = d.years();
      const double sd = model.spec().hyper.gamma_prior_sd;
      std::vector<std::size_t> cells;
      for (int s = 0; s < S; ++s) {
        cells.clear();
        for (int i = 0; i < d.sites(); ++i) {
          for (int k = 0; k < K; ++k) cells.push_back(d.cell(i, k, s));
        }
        for (int j = 0; j < q; ++j) {
          const std::size_t e = static_cast<std::size_t>(s) * q + j;
          st.params.gamma(s, j) += propose_detection_shift(
              st, model, rng, Block::DetectionCovariates, st.tuning.scale_gamma[e],
              st.tuning.acc_gamma[e], st.params.gamma(s, j), sd, cells,
              [&d, T, K, S, j](std::size_t c, int t) {
                const auto i = static_cast<Eigen::Index>(c / (static_cast<std::size_t>(K) * S));
                return d.Z()(i * T + t, j);
              });
        }
      }
      return;
    }
    default:
      throw DomainError(std::string("block '") + block_name(block) +
                        "' is not a Metropolis block");
  }
}

double update_theta(const LatentAbundance& N, double shape1, double shape2, RngStream& rng) {
  std::int64_t zeros = 0;
  for (int v : N.values()) zeros += (v == 0);
  const auto nonzeros = static_cast<std::int64_t>(N.values().size()) - zeros;
  return rng.beta(shape1 + static_cast<double>(zeros), shape2 + static_cast<double>(nonzeros));
}

}  // namespace mnmix

namespace mnmix {

void sweep(ChainState& st, const Model& model, RngStream& rng) {
  const auto& d = model.data();
  const auto& spec = model.spec();
  std::array<std::int64_t, kBlockCount> proposed_before{}, accepted_before{};
  for (int b = 0; b < kBlockCount; ++b) {
    proposed_before[b] = st.stats[b].proposed;
    accepted_before[b] = st.stats[b].accepted;
  }

  update_latent_n(st, model, rng);
  mh_update_block(Block::RandomEffects, st, model, rng);

  const Eigen::MatrixXd sigma0 = spec.hyper.sigma0_diag.asDiagonal();
  st.params.mu_a = gibbs_update_mu_a(st.params.a, st.params.sigma_a, spec.hyper.mu0, sigma0, rng);
  count(st, Block::MuA, true);
  st.params.sigma_a =
      gibbs_update_sigma_a(st.params.a, st.params.mu_a, model.omega(), spec.hyper.df, rng);
  refresh_sigma_inverse(st);
  count(st, Block::SigmaA, true);

  mh_update_block(Block::Detection, st, model, rng);
  ++st.sweeps;
  if (st.collapse_interval > 0 && st.sweeps % st.collapse_interval == 0) {
    joint_detection_update(st, model, rng);
  }
  if (d.q_p() > 0) mh_update_block(Block::DetectionCovariates, st, model, rng);
  if (d.q_lambda() > 0) mh_update_block(Block::Beta, st, model, rng);
  if (spec.hurdle) {
    st.params.theta = update_theta(st.N, spec.hyper.theta_shape1, spec.hyper.theta_shape2, rng);
    count(st, Block::Theta, true);
  }
  if (spec.autoregressive) mh_update_block(Block::Phi, st, model, rng);

  for (int b = 0; b < kBlockCount; ++b) {
    auto& s = st.stats[b];
    if (s.proposed == proposed_before[b]) continue;
    if (s.accepted > accepted_before[b]) {
      s.zero_streak = 0;
    } else {
      ++s.zero_streak;
      s.longest_zero_streak = std::max(s.longest_zero_streak, s.zero_streak);
    }
  }
  ++st.batch_iterations;
}

void adapt_proposals(ChainState& st) {
  auto& tn = st.tuning;
  const int n = st.batch_iterations;
  if (n == 0) return;
  ++tn.batches;
  const double gain = std::max(0.25, 2.0 / std::sqrt(static_cast<double>(tn.batches)));
  auto adapt = [&](std::vector<double>& scale, std::vector<int>& acc) {
    for (std::size_t j = 0; j < scale.size(); ++j) {
      const double rate = static_cast<double>(acc[j]) / n;
      scale[j] = std::clamp(scale[j] * std::exp(gain * (rate - kTargetContinuous)), 1e-4, 50.0);
      acc[j] = 0;
    }
  };
  adapt(tn.scale_a, tn.acc_a);
  adapt(tn.scale_detection, tn.acc_detection);
  adapt(tn.scale_beta, tn.acc_beta);
  adapt(tn.scale_gamma, tn.acc_gamma);
  adapt(tn.scale_phi, tn.acc_phi);
  if (tn.tries_joint >= 3) {
    for (std::size_t j = 0; j < tn.scale_joint.size(); ++j) {
      const double rate = static_cast<double>(tn.acc_joint[j]) / tn.tries_joint;
      tn.scale_joint[j] =
          std::clamp(tn.scale_joint[j] * std::exp(gain * (rate - kTargetContinuous)), 1e-4, 50.0);
      tn.acc_joint[j] = 0;
    }
    tn.tries_joint = 0;
  }
  for (std::size_t c = 0; c < tn.width_n.size(); ++c) {
    if (tn.tries_n[c] >= 5) {
      const double rate = static_cast<double>(tn.acc_n[c]) / tn.tries_n[c];
      int& w = tn.width_n[c];
      const int step = std::max(1, w / 4);
      if (rate > kTargetLatent + 0.1) {
        w += step;
      } else if (rate < kTargetLatent - 0.1 && w > 1) {
        w = std::max(1, w - step);
      }
    }
    tn.acc_n[c] = 0;
    tn.tries_n[c] = 0;
  }
  st.batch_iterations = 0;
}

}  // namespace mnmix
