#include "mnmix/correlations.hpp"
#include "mnmix/errors.hpp"
#include "mnmix/io.hpp"
#include "mnmix/likelihood.hpp"
#include "mnmix/metrics.hpp"
#include "mnmix/sampler.hpp"
#include "mnmix/simulation.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mnmix;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;

struct Common {
  std::uint64_t seed = SamplerConfig{}.seed;
  int chains = SamplerConfig{}.n_chains;
  int iters = SamplerConfig{}.n_iter;
  int burn = SamplerConfig{}.n_burn;
  int thin = SamplerConfig{}.thin;
  double rhat_threshold = SamplerConfig{}.rhat_threshold;
  int collapse_interval = SamplerConfig{}.collapse_interval;
  std::string detection_dim = "C";
  bool hurdle = false;
  bool ar = false;
  std::vector<std::string> covariates;
  std::string out = "mnmix_out";
  bool strict = false;
  bool wide_stops = false;
  int workers = 0;

  SamplerConfig sampler() const {
    SamplerConfig c;
    c.seed = seed;
    c.n_chains = chains;
    c.n_iter = iters;
    c.n_burn = burn;
    c.thin = thin;
    c.rhat_threshold = rhat_threshold;
    c.collapse_interval = collapse_interval;
    try {
      c.validate();
    } catch (const DomainError& e) {
      throw ValidationError(std::string("sampler settings: ") + e.what());
    }
    return c;
  }
  ModelSpec spec(int S) const {
    return ModelSpec::make(S, hurdle, ar, detection_dim_from_string(detection_dim));
  }
  CountSchema schema() const { return {wide_stops, covariates}; }
};

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory '" + dir + "'");
  return dir;
}

void write_json(const fs::path& path, const json& doc) {
  const std::string text = doc.dump(2);
  write_atomic(path, [&](std::ostream& out) { out << text << '\n'; });
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
  Scenario scen;
  std::string p_regime = "large", lambda_regime = "large";
  std::optional<double> theta;
  int replicate = 0;
};

int run_simulate(const Common& c, SimulateArgs a) {
  a.scen.p_regime = regime_from_string(a.p_regime);
  a.scen.lambda_regime = regime_from_string(a.lambda_regime);
  a.scen.theta = a.theta;
  a.scen.seed = c.seed;
  const ModelSpec spec = c.spec(a.scen.S);
  try {
    a.scen.validate(spec);
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  RngStream rng(a.scen.seed, static_cast<std::uint64_t>(a.replicate));
  const SimulatedData sim = simulate_dataset(spec, a.scen, rng);
  const fs::path out = prepare_out(c.out);
  write_counts_csv(out / "counts.csv", sim.data);
  write_json(out / "truth.json", truth_to_json(sim.truth, sim.data, spec));
  std::printf("wrote %s and %s (%s, zero fraction %.4f)\n", (out / "counts.csv").c_str(),
              (out / "truth.json").c_str(), model_label(spec).c_str(), sim.data.zero_fraction());
  return 0;
}

// ---- corr ----------------------------------------------------------------------

struct PointReport {
  CorrelationReport report;
  Dataset shell;  // labels only
};

PointReport correlations_from_point(const Common& c, const json& doc) {
  if (!doc.contains("mu_a")) throw ValidationError("point document needs mu_a");
  const int S = static_cast<int>(doc["mu_a"].size());
  const Parameters point = parameters_from_json(doc, S);
  const json model = doc.value("model", json::object());
  CorrelationInputs in;
  in.mu_a = point.mu_a;
  in.sigma_a = point.sigma_a;
  in.hurdle = model.value("hurdle", c.hurdle);
  in.autoregressive = model.value("ar", c.ar);
  in.theta = point.theta;
  if (in.hurdle && !(in.theta > 0.0 && in.theta < 1.0)) {
    throw ValidationError("hurdle correlations need theta in (0, 1)");
  }
  DatasetLabels labels;
  labels.species = doc.value("species", std::vector<std::string>{});
  labels.sites = doc.value("sites", std::vector<std::string>{});
  labels.years = doc.value("years", std::vector<int>{});
  if (labels.sites.empty()) labels.sites.push_back("site1");
  if (labels.years.empty()) labels.years.push_back(1);
  if (labels.species.size() != static_cast<std::size_t>(S)) {
    labels.species.clear();
    for (int s = 0; s < S; ++s) labels.species.push_back("sp" + std::to_string(s + 1));
  }
  in.sites = static_cast<int>(labels.sites.size());
  in.years = static_cast<int>(labels.years.size());
  if (doc.contains("X") && point.beta.size() > 0) {
    Eigen::MatrixXd X(in.sites, point.beta.cols());
    for (int i = 0; i < in.sites; ++i) {
      for (Eigen::Index q = 0; q < X.cols(); ++q) X(i, q) = doc["X"].at(i).at(q).get<double>();
    }
    in.X = X;
    in.beta = point.beta;
  }
  if (in.autoregressive) {
    // phi at its posterior mean with no spread
    in.mu_phi = point.phi;
    in.sigma_phi = Eigen::MatrixXd::Zero(S, S);
    in.n_mean = doc.value("n_mean", std::vector<double>{});
  }
  PointReport out;
  try {
    out.report = build_correlation_report(in);
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  const int R = in.sites, K = in.years;
  out.shell = Dataset(R, 1, K, S, std::vector<int>(static_cast<std::size_t>(R) * K * S, 0), {}, {}, labels);
  return out;
}

int run_corr(const Common& c, const std::string& point_path) {
  const PointReport pr = correlations_from_point(c, read_json(point_path));
  ResultBundle bundle;
  bundle.data = &pr.shell;
  bundle.correlations = &pr.report;
  const auto files = emit_results(prepare_out(c.out), bundle);
  for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
  return 0;
}

// ---- fit -------------------------------------------------------------------------

json point_document(const Parameters& point, const Dataset& d, const ModelSpec& spec,
                    const std::vector<double>& n_mean) {
  json j = parameters_to_json(point, d);
  j["model"] = {{"hurdle", spec.hurdle},
                {"ar", spec.autoregressive},
                {"detection_dim", std::string(1, to_char(spec.detection_dim))}};
  j["sites"] = d.labels().sites;
  j["years"] = d.labels().years;
  if (d.q_lambda() > 0) {
    json rows = json::array();
    for (int i = 0; i < d.sites(); ++i) {
      std::vector<double> row;
      for (int q = 0; q < d.q_lambda(); ++q) row.push_back(d.X()(i, q));
      rows.push_back(row);
    }
    j["X"] = rows;
  }
  j["n_mean"] = n_mean;
  return j;
}

int run_fit(const Common& c, const std::string& data_path) {
  const ParsedCounts parsed = parse_counts_csv(data_path, c.schema());
  const Dataset& d = parsed.data;
  const ModelSpec spec = c.spec(d.species());
  try {
    spec.validate(d);
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  const SamplerConfig cfg = c.sampler();
  const fs::path out = prepare_out(c.out);
  std::printf("data: R=%d T=%d K=%d S=%d, %zu rows, zero fraction %.4f\n", d.sites(),
              d.occasions(), d.years(), d.species(), parsed.rows, parsed.zero_fraction);
  const FitResult fr = fit(d, spec, cfg);
  const Model model(d, spec);
  const Parameters point = posterior_mean_parameters(fr.draws, model);
  const std::vector<double> n_mean = posterior_mean_latent(fr.draws);

  const json point_doc = point_document(point, d, spec, n_mean);
  const PointReport corr = correlations_from_point(c, point_doc);
  ResultBundle bundle;
  bundle.data = &d;
  bundle.summary = &fr.summary;
  bundle.correlations = &corr.report;
  emit_results(out, bundle);
  write_draws_csv(out / "draws.csv", fr.draws, cfg);
  write_json(out / "posterior_point.json", point_doc);

  std::printf("%s: %zu parameters, %zu flagged (R-hat >= %.3g)\n", model_label(spec).c_str(),
              fr.summary.parameters.size(), fr.summary.flagged.size(), cfg.rhat_threshold);
  for (const auto& name : fr.summary.flagged) std::printf("  flagged %s\n", name.c_str());
  std::printf("results in %s\n", out.c_str());
  if (c.strict && !fr.summary.converged()) return kExitConvergence;
  return 0;
}

// ---- study -----------------------------------------------------------------------

int run_study_cmd(const Common& c, const std::string& manifest_path, SimulateArgs single) {
  StudyManifest m;
  if (!manifest_path.empty()) {
    m = manifest_from_json(read_json(manifest_path));
    if (c.workers > 0) m.options.workers = c.workers;
  } else {
    single.scen.p_regime = regime_from_string(single.p_regime);
    single.scen.lambda_regime = regime_from_string(single.lambda_regime);
    single.scen.theta = single.theta;
    single.scen.seed = c.seed;
    if (single.scen.id.empty()) single.scen.id = "scenario1";
    m.spec = c.spec(single.scen.S);
    m.sampler = c.sampler();
    m.scenarios = {single.scen};
    m.options.workers = c.workers;
    try {
      single.scen.validate(m.spec);
    } catch (const DomainError& e) {
      throw ValidationError(e.what());
    }
  }
  const auto results = run_study(m.spec, m.scenarios, m.sampler, m.options);
  std::vector<StudyMetricRow> rows;
  for (const auto& r : results) rows.push_back(r.row);
  ResultBundle bundle;
  bundle.study = &rows;
  const fs::path out = prepare_out(c.out);
  emit_results(out, bundle);
  write_json(out / "manifest.json", manifest_to_json(m));
  for (const auto& r : rows) {
    std::printf("%s %s: CCC %.4f CMD %.4f RB(p) %.4f RB(mu_a) %.4f failures %d flags [%s]\n",
                r.scenario.c_str(), r.model.c_str(), r.ccc, r.cmd, r.rb_p, r.rb_mu_a, r.failures,
                r.flags.c_str());
  }
  std::printf("wrote %s\n", (out / "study.csv").c_str());
  return 0;
}

// ---- compare ---------------------------------------------------------------------

int run_compare(const Common& c, const std::vector<std::string>& data_paths,
                std::vector<std::string> variants, const std::string& convention) {
  if (variants.empty()) variants = {"MNM", "Hurdle", "AR", "Hurdle-AR"};
  ParameterCount count = ParameterCount::Table;
  if (convention == "full") {
    count = ParameterCount::Full;
  } else if (convention != "table") {
    throw ValidationError("parameter count convention must be 'table' or 'full'");
  }
  const SamplerConfig cfg = c.sampler();
  std::vector<BicRow> rows;
  for (const auto& path : data_paths) {
    const ParsedCounts parsed = parse_counts_csv(path, c.schema());
    const Dataset& d = parsed.data;
    for (const auto& v : variants) {
      bool hurdle = false, ar = false;
      if (v == "MNM") {
      } else if (v == "Hurdle") {
        hurdle = true;
      } else if (v == "AR") {
        ar = true;
      } else if (v == "Hurdle-AR") {
        hurdle = ar = true;
      } else {
        throw ValidationError("unknown variant '" + v + "' (MNM, Hurdle, AR, Hurdle-AR)");
      }
      if (ar && d.years() < 2) {
        std::printf("%s: skipping %s (needs at least two years)\n", path.c_str(), v.c_str());
        continue;
      }
      const ModelSpec spec =
          ModelSpec::make(d.species(), hurdle, ar, detection_dim_from_string(c.detection_dim));
      const FitResult fr = fit(d, spec, cfg);
      const Parameters point = posterior_mean_parameters(fr.draws, Model(d, spec));
      BicRow row{fs::path(path).filename().string(), model_label(spec), model_bic(d, spec, point, count)};
      std::printf("%s %s: loglik %.3f, %lld parameters, BIC %.3f%s\n", row.dataset.c_str(),
                  row.model.c_str(), row.result.loglik, static_cast<long long>(row.result.n_params),
                  row.result.bic, fr.summary.converged() ? "" : " (not converged)");
      rows.push_back(std::move(row));
      if (c.strict && !fr.summary.converged()) {
        write_bic_csv(prepare_out(c.out) / "bic.csv", rows);
        return kExitConvergence;
      }
    }
  }
  write_bic_csv(prepare_out(c.out) / "bic.csv", rows);
  std::printf("wrote %s\n", (fs::path(c.out) / "bic.csv").c_str());
  return 0;
}

// ---- trend -----------------------------------------------------------------------

int run_trend(const Common& c, const std::string& series_path) {
  const auto series = read_trend_csv(series_path);
  const fs::path out = prepare_out(c.out);
  std::vector<std::string> lines;
  for (const auto& s : series) {
    if (s.values.size() < 3) throw ValidationError("series '" + s.name + "' has fewer than 3 points");
    const MannKendallResult r = mann_kendall(s.values);
    std::printf("%s: n=%zu S=%lld tau=%.4f p=%.5g (%s)\n", s.name.c_str(), s.values.size(),
                static_cast<long long>(r.S), r.tau, r.p_value, r.exact ? "exact" : "normal");
    lines.push_back(s.name + "," + std::to_string(s.values.size()) + "," + std::to_string(r.S) +
                    "," + format_number(r.tau) + "," + format_number(r.var_s) + "," +
                    format_number(r.z) + "," + format_number(r.p_value) + "," +
                    (r.exact ? "exact" : "normal"));
  }
  write_atomic(out / "trend.csv", [&](std::ostream& o) {
    o << "series,n,S,tau,var_S,z,p_value_upper,method\n";
    for (const auto& l : lines) o << l << '\n';
  });
  return 0;
}

void add_scenario_options(CLI::App* cmd, SimulateArgs& a) {
  cmd->add_option("--sites,-R", a.scen.R, "Number of sites")->capture_default_str();
  cmd->add_option("--occasions,-T", a.scen.T, "Occasions per site and year")->capture_default_str();
  cmd->add_option("--species,-S", a.scen.S, "Number of species")->capture_default_str();
  cmd->add_option("--years,-K", a.scen.K, "Number of years")->capture_default_str();
  cmd->add_option("--p-regime", a.p_regime, "Detection regime: small or large")->capture_default_str();
  cmd->add_option("--lambda-regime", a.lambda_regime, "Abundance regime: small or large")
      ->capture_default_str();
  cmd->add_option("--theta", a.theta, "Zero probability of the hurdle");
  cmd->add_option("--max-corr", a.scen.max_abs_correlation, "Bound on latent correlations")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-species N-mixture models: simulate, fit, correlate, compare"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key = value file; every key is a long option name");
  app.allow_config_extras(false);

  Common c;
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--chains", c.chains, "Number of chains")->capture_default_str();
  app.add_option("--iters", c.iters, "Iterations per chain, burn-in included")->capture_default_str();
  app.add_option("--burn", c.burn, "Burn-in iterations")->capture_default_str();
  app.add_option("--thin", c.thin, "Thinning interval")->capture_default_str();
  app.add_option("--rhat-threshold", c.rhat_threshold, "R-hat flag threshold")->capture_default_str();
  app.add_option("--collapse-interval", c.collapse_interval,
                 "Iterations between joint detection and abundance moves (0: off)")
      ->capture_default_str();
  app.add_option("--detection-dim", c.detection_dim, "Detection dimension: A, B or C")
      ->check(CLI::IsMember({"A", "B", "C", "a", "b", "c"}))
      ->capture_default_str();
  app.add_flag("--hurdle", c.hurdle, "Hurdle-Poisson latent abundance");
  app.add_flag("--ar", c.ar, "Autoregressive year-to-year dependence");
  app.add_option("--covariates", c.covariates, "Site covariate columns, e.g. lat,long,lat*long")
      ->delimiter(',');
  app.add_option("--out", c.out, "Output directory")->capture_default_str();
  app.add_flag("--strict", c.strict, "Exit with code 3 when any R-hat reaches the threshold");
  app.add_flag("--wide-stops", c.wide_stops, "Counts file uses one column per stop");
  app.add_option("--workers", c.workers, "Worker threads for study (0: all cores)");

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset and its ground truth");
  simulate->fallthrough();
  add_scenario_options(simulate, sim_args);
  simulate->add_option("--replicate", sim_args.replicate, "Replicate stream index")->capture_default_str();

  std::string data_path;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a counts file");
  fit_cmd->fallthrough();
  fit_cmd->add_option("--data", data_path, "Counts CSV")->required()->check(CLI::ExistingFile);

  std::string point_path;
  auto* corr = app.add_subcommand("corr", "Correlation report from a parameter point");
  corr->fallthrough();
  corr->add_option("--point", point_path, "posterior_point.json from fit, or a hand-written point")
      ->required()
      ->check(CLI::ExistingFile);

  std::string manifest_path;
  SimulateArgs study_args;
  study_args.scen.K = 5;
  auto* study = app.add_subcommand("study", "Simulation study over a scenario grid");
  study->fallthrough();
  study->add_option("--manifest", manifest_path, "Scenario manifest JSON")->check(CLI::ExistingFile);
  add_scenario_options(study, study_args);
  study->add_option("--replicates", study_args.scen.replicates, "Replicates per scenario")
      ->capture_default_str();
  study->add_option("--id", study_args.scen.id, "Scenario identifier");

  std::vector<std::string> compare_data, variants;
  std::string convention = "table";
  auto* compare = app.add_subcommand("compare", "BIC table over datasets and model variants");
  compare->fallthrough();
  compare->add_option("--data", compare_data, "Counts CSV files")->required()->check(CLI::ExistingFile);
  compare->add_option("--variants", variants, "Subset of MNM,Hurdle,AR,Hurdle-AR")->delimiter(',');
  compare->add_option("--param-count", convention, "Parameter count convention: table or full")
      ->capture_default_str();

  std::string series_path;
  auto* trend = app.add_subcommand("trend", "Mann-Kendall trend test on series");
  trend->fallthrough();
  trend->add_option("--series", series_path, "Series CSV")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*simulate) return run_simulate(c, sim_args);
    if (*fit_cmd) return run_fit(c, data_path);
    if (*corr) return run_corr(c, point_path);
    if (*study) return run_study_cmd(c, manifest_path, study_args);
    if (*compare) return run_compare(c, compare_data, variants, convention);
    if (*trend) return run_trend(c, series_path);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const SamplerError& e) {
    std::fprintf(stderr, "sampler failure in block %s: %s\n", e.block().c_str(), e.what());
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
