#include "mnmix/sampler.hpp"

#include "mnmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>

namespace mnmix {

namespace {

std::string idx(std::initializer_list<int> ids) {
  std::ostringstream out;
  out << '[';
  bool first = true;
  for (int v : ids) {
    if (!first) out << ',';
    out << v + 1;
    first = false;
  }
  out << ']';
  return out.str();
}

double quantile_type7(std::vector<double>& sorted, double prob) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ChainOutput {
  std::vector<double> draws;
  std::vector<IntHistogram> latent;
  Eigen::MatrixXd a_sum;
  Eigen::VectorXd detection_sum;
  int retained = 0;
  std::array<BlockStats, kBlockCount> post_burn{};
  std::array<int, kBlockCount> longest_streak{};
  std::array<std::int64_t, kBlockCount> proposed{};
};

ChainOutput run_chain(const Model& model, const SamplerConfig& cfg, int chain) {
  RngStream rng(cfg.seed, static_cast<std::uint64_t>(chain));
  ChainState st = initialize_state(model, cfg, rng);
  const std::size_t cells = model.data().cell_count();

  ChainOutput out;
  out.latent.resize(cells);
  out.a_sum = Eigen::MatrixXd::Zero(st.params.a.rows(), st.params.a.cols());
  out.detection_sum = Eigen::VectorXd::Zero(st.params.detection.size());
  out.draws.reserve(static_cast<std::size_t>(cfg.retained_per_chain()) *
                    flatten_parameters(st.params, model).size());

  std::array<BlockStats, kBlockCount> at_burn{};
  for (int iter = 1; iter <= cfg.n_iter; ++iter) {
    sweep(st, model, rng);
    if (iter <= cfg.n_burn && iter % cfg.adapt_interval == 0) adapt_proposals(st);
    if (iter == cfg.n_burn) at_burn = st.stats;
    if (iter > cfg.n_burn && (iter - cfg.n_burn) % cfg.thin == 0) {
      const auto flat = flatten_parameters(st.params, model);
      out.draws.insert(out.draws.end(), flat.begin(), flat.end());
      for (std::size_t c = 0; c < cells; ++c) out.latent[c].add(st.N.values()[c]);
      out.a_sum += st.params.a;
      out.detection_sum += st.params.detection;
      ++out.retained;
    }
  }
  for (int b = 0; b < kBlockCount; ++b) {
    out.post_burn[b].proposed = st.stats[b].proposed - at_burn[b].proposed;
    out.post_burn[b].accepted = st.stats[b].accepted - at_burn[b].accepted;
    out.longest_streak[b] = st.stats[b].longest_zero_streak;
    out.proposed[b] = st.stats[b].proposed;
  }
  return out;
}

}  // namespace

void IntHistogram::add(int value, std::uint32_t weight) {
  if (counts_.empty()) {
    offset_ = value;
    counts_.assign(1, 0);
  } else if (value < offset_) {
    counts_.insert(counts_.begin(), static_cast<std::size_t>(offset_ - value), 0);
    offset_ = value;
  } else if (value > max_value()) {
    counts_.resize(static_cast<std::size_t>(value - offset_) + 1, 0);
  }
  counts_[static_cast<std::size_t>(value - offset_)] += weight;
  total_ += weight;
}

void IntHistogram::merge(const IntHistogram& other) {
  for (std::size_t j = 0; j < other.counts_.size(); ++j) {
    if (other.counts_[j] == 0) continue;
    const int value = other.offset_ + static_cast<int>(j);
    if (counts_.empty()) {
      offset_ = value;
      counts_.assign(1, 0);
    } else if (value < offset_) {
      counts_.insert(counts_.begin(), static_cast<std::size_t>(offset_ - value), 0);
      offset_ = value;
    } else if (value > max_value()) {
      counts_.resize(static_cast<std::size_t>(value - offset_) + 1, 0);
    }
    counts_[static_cast<std::size_t>(value - offset_)] += other.counts_[j];
    total_ += other.counts_[j];
  }
}

double IntHistogram::mean() const {
  if (total_ == 0) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    sum += static_cast<double>(counts_[j]) * (offset_ + static_cast<double>(j));
  }
  return sum / static_cast<double>(total_);
}

double IntHistogram::sd() const {
  if (total_ < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    const double d = offset_ + static_cast<double>(j) - m;
    ss += static_cast<double>(counts_[j]) * d * d;
  }
  return std::sqrt(ss / static_cast<double>(total_ - 1));
}

int IntHistogram::quantile(double prob) const {
  if (total_ == 0) return 0;
  const double target = prob * static_cast<double>(total_);
  std::uint64_t cum = 0;
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    cum += counts_[j];
    if (static_cast<double>(cum) >= target && counts_[j] > 0) return offset_ + static_cast<int>(j);
  }
  return max_value();
}

double IntHistogram::mass_below(int value) const {
  if (total_ == 0) return 0.0;
  std::uint64_t cum = 0;
  for (std::size_t j = 0; j < counts_.size() && offset_ + static_cast<int>(j) < value; ++j) {
    cum += counts_[j];
  }
  return static_cast<double>(cum) / static_cast<double>(total_);
}

std::uint64_t IntHistogram::count(int value) const {
  if (counts_.empty() || value < offset_ || value > max_value()) return 0;
  return counts_[static_cast<std::size_t>(value - offset_)];
}

int PosteriorDraws::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DomainError("unknown parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

std::vector<std::vector<double>> PosteriorDraws::parameter_chains(int param) const {
  std::vector<std::vector<double>> out(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    out[c].reserve(n_retained);
    for (int d = 0; d < n_retained; ++d) out[c].push_back(value(c, d, param));
  }
  return out;
}

std::vector<double> PosteriorDraws::pooled(int param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_chains) * n_retained);
  for (int c = 0; c < n_chains; ++c) {
    for (int d = 0; d < n_retained; ++d) out.push_back(value(c, d, param));
  }
  return out;
}

const ParameterSummary& PosteriorSummary::get(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return p;
  }
  throw DomainError("unknown parameter '" + name + "'");
}

double rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw DomainError("R-hat requires at least two chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw DomainError("R-hat requires at least four draws per chain");
  const std::size_t half = n / 2;

  std::vector<double> means, vars;
  for (const auto& c : chains) {
    for (int part = 0; part < 2; ++part) {
      const std::size_t begin = part == 0 ? 0 : n - half;
      double m = 0.0;
      for (std::size_t j = 0; j < half; ++j) m += c[begin + j];
      m /= static_cast<double>(half);
      double ss = 0.0;
      for (std::size_t j = 0; j < half; ++j) ss += (c[begin + j] - m) * (c[begin + j] - m);
      means.push_back(m);
      vars.push_back(ss / static_cast<double>(half - 1));
    }
  }
  const double m_count = static_cast<double>(means.size());
  const double W = std::accumulate(vars.begin(), vars.end(), 0.0) / m_count;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m_count;
  double b_ss = 0.0;
  for (double m : means) b_ss += (m - grand) * (m - grand);
  const double B = static_cast<double>(half) * b_ss / (m_count - 1.0);
  if (W == 0.0) return B == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double h = static_cast<double>(half);
  const double var_plus = (h - 1.0) / h * W + B / h;
  return std::sqrt(var_plus / W);
}

std::vector<std::string> parameter_names(const Model& model) {
  const auto& d = model.data();
  const auto& spec = model.spec();
  const int R = d.sites(), K = d.years(), S = d.species();
  std::vector<std::string> names;
  for (int s = 0; s < S; ++s) names.push_back("mu_a" + idx({s}));
  for (int s = 0; s < S; ++s) {
    for (int r = s; r < S; ++r) names.push_back("Sigma_a" + idx({s, r}));
  }
  switch (spec.detection_dim) {
    case DetectionDim::A:
      for (int i = 0; i < R; ++i)
        for (int k = 0; k < K; ++k)
          for (int s = 0; s < S; ++s) names.push_back("p" + idx({i, k, s}));
      break;
    case DetectionDim::B:
      for (int i = 0; i < R; ++i)
        for (int s = 0; s < S; ++s) names.push_back("p" + idx({i, s}));
      break;
    case DetectionDim::C:
      for (int s = 0; s < S; ++s) names.push_back("p" + idx({s}));
      break;
  }
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < d.q_lambda(); ++j) names.push_back("beta" + idx({s, j}));
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < d.q_p(); ++j) names.push_back("gamma" + idx({s, j}));
  if (spec.hurdle) names.push_back("theta");
  if (spec.autoregressive) {
    for (int s = 0; s < S; ++s) names.push_back("phi" + idx({s}));
  }
  return names;
}

std::vector<double> flatten_parameters(const Parameters& p, const Model& model) {
  const auto& spec = model.spec();
  const auto S = p.mu_a.size();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(S + S * (S + 1) / 2 + p.detection.size() + p.beta.size() +
                                       p.gamma.size() + 1 + S));
  for (Eigen::Index s = 0; s < S; ++s) out.push_back(p.mu_a(s));
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index r = s; r < S; ++r) out.push_back(p.sigma_a(s, r));
  for (Eigen::Index c = 0; c < p.detection.size(); ++c) out.push_back(inv_logit(p.detection(c)));
  for (Eigen::Index s = 0; s < p.beta.rows(); ++s)
    for (Eigen::Index j = 0; j < p.beta.cols(); ++j) out.push_back(p.beta(s, j));
  for (Eigen::Index s = 0; s < p.gamma.rows(); ++s)
    for (Eigen::Index j = 0; j < p.gamma.cols(); ++j) out.push_back(p.gamma(s, j));
  if (spec.hurdle) out.push_back(p.theta);
  if (spec.autoregressive) {
    for (Eigen::Index s = 0; s < S; ++s) out.push_back(p.phi(s));
  }
  return out;
}

PosteriorSummary summarize(const PosteriorDraws& draws, const Model& model,
                           double rhat_threshold) {
  PosteriorSummary summary;
  summary.rhat_threshold = rhat_threshold;
  const bool can_rhat = draws.n_chains >= 2 && draws.n_retained >= 4;
  for (std::size_t j = 0; j < draws.names.size(); ++j) {
    const int param = static_cast<int>(j);
    ParameterSummary ps;
    ps.name = draws.names[j];
    auto pooled = draws.pooled(param);
    const double n = static_cast<double>(pooled.size());
    ps.mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : pooled) ss += (v - ps.mean) * (v - ps.mean);
    ps.sd = pooled.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    std::sort(pooled.begin(), pooled.end());
    ps.q025 = quantile_type7(pooled, 0.025);
    ps.q25 = quantile_type7(pooled, 0.25);
    ps.q50 = quantile_type7(pooled, 0.5);
    ps.q75 = quantile_type7(pooled, 0.75);
    ps.q975 = quantile_type7(pooled, 0.975);
    ps.rhat = can_rhat ? rhat(draws.parameter_chains(param))
                       : std::numeric_limits<double>::quiet_NaN();
    ps.flagged = can_rhat && !(ps.rhat < rhat_threshold);
    if (ps.flagged) summary.flagged.push_back(ps.name);
    summary.parameters.push_back(std::move(ps));
  }
  const auto& d = model.data();
  for (int i = 0; i < d.sites(); ++i) {
    for (int k = 0; k < d.years(); ++k) {
      for (int s = 0; s < d.species(); ++s) {
        const auto& h = draws.latent[d.cell(i, k, s)];
        LatentSummary ls;
        ls.site = i;
        ls.year = k;
        ls.species = s;
        ls.mean = h.mean();
        ls.sd = h.sd();
        ls.q025 = h.quantile(0.025);
        ls.q25 = h.quantile(0.25);
        ls.q50 = h.quantile(0.5);
        ls.q75 = h.quantile(0.75);
        ls.q975 = h.quantile(0.975);
        summary.latent.push_back(ls);
      }
    }
  }
  return summary;
}

FitResult fit(const Dataset& data, const ModelSpec& spec, const SamplerConfig& cfg) {
  cfg.validate();
  const Model model(data, spec);

  std::vector<ChainOutput> outputs(cfg.n_chains);
  if (cfg.parallel_chains && cfg.n_chains > 1) {
    std::vector<std::future<ChainOutput>> futures;
    for (int c = 0; c < cfg.n_chains; ++c) {
      futures.push_back(std::async(std::launch::async, run_chain, std::cref(model), std::cref(cfg), c));
    }
    for (int c = 0; c < cfg.n_chains; ++c) outputs[c] = futures[c].get();
  } else {
    for (int c = 0; c < cfg.n_chains; ++c) outputs[c] = run_chain(model, cfg, c);
  }

  for (int b = 0; b < kBlockCount; ++b) {
    bool all_stuck = true;
    for (const auto& o : outputs) {
      if (o.proposed[b] == 0 || o.longest_streak[b] < cfg.stuck_window) all_stuck = false;
    }
    if (all_stuck) {
      const char* name = block_name(static_cast<Block>(b));
      throw SamplerError(name, std::string("block '") + name + "' accepted no proposal for " +
                                   std::to_string(cfg.stuck_window) +
                                   " consecutive iterations in every chain");
    }
  }

  FitResult result;
  auto& draws = result.draws;
  draws.names = parameter_names(model);
  draws.n_chains = cfg.n_chains;
  draws.n_retained = outputs.front().retained;
  draws.latent.resize(data.cell_count());
  draws.a_mean = Eigen::MatrixXd::Zero(data.sites(), data.species());
  draws.detection_logit_mean = Eigen::VectorXd::Zero(outputs.front().detection_sum.size());
  const double total = static_cast<double>(cfg.n_chains) * draws.n_retained;
  for (auto& o : outputs) {
    for (std::size_t c = 0; c < o.latent.size(); ++c) draws.latent[c].merge(o.latent[c]);
    draws.a_mean += o.a_sum / total;
    draws.detection_logit_mean += o.detection_sum / total;
    std::map<std::string, double> rates;
    for (int b = 0; b < kBlockCount; ++b) {
      if (o.post_burn[b].proposed > 0) rates[block_name(static_cast<Block>(b))] = o.post_burn[b].rate();
    }
    draws.acceptance.push_back(std::move(rates));
    draws.chains.push_back(std::move(o.draws));
  }
  result.summary = summarize(draws, model, cfg.rhat_threshold);
  return result;
}

Parameters posterior_mean_parameters(const PosteriorDraws& draws, const Model& model) {
  const auto& d = model.data();
  const auto& spec = model.spec();
  const int S = d.species();
  Parameters p = Parameters::zeros(d, spec);
  auto mean_of = [&](const std::string& name) {
    const auto pooled = draws.pooled(draws.index_of(name));
    return std::accumulate(pooled.begin(), pooled.end(), 0.0) / static_cast<double>(pooled.size());
  };
  auto tag = [](int a) { return "[" + std::to_string(a + 1) + "]"; };
  auto tag2 = [](int a, int b) {
    return "[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]";
  };
  for (int s = 0; s < S; ++s) p.mu_a(s) = mean_of("mu_a" + tag(s));
  for (int s = 0; s < S; ++s) {
    for (int r = s; r < S; ++r) {
      p.sigma_a(s, r) = p.sigma_a(r, s) = mean_of("Sigma_a" + tag2(s, r));
    }
  }
  p.a = draws.a_mean;
  p.detection = draws.detection_logit_mean;
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < d.q_lambda(); ++j) p.beta(s, j) = mean_of("beta" + tag2(s, j));
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < d.q_p(); ++j) p.gamma(s, j) = mean_of("gamma" + tag2(s, j));
  if (spec.hurdle) p.theta = mean_of("theta");
  if (spec.autoregressive) {
    for (int s = 0; s < S; ++s) p.phi(s) = mean_of("phi" + tag(s));
  }
  return p;
}

std::vector<double> posterior_mean_latent(const PosteriorDraws& draws) {
  std::vector<double> out;
  out.reserve(draws.latent.size());
  for (const auto& h : draws.latent) out.push_back(h.mean());
  return out;
}

}  // namespace mnmix
