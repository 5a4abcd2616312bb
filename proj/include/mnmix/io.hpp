#pragma once

#include "mnmix/correlations.hpp"
#include "mnmix/likelihood.hpp"
#include "mnmix/metrics.hpp"
#include "mnmix/model.hpp"
#include "mnmix/sampler.hpp"
#include "mnmix/simulation.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mnmix {

// ---- ingestion -------------------------------------------------------------

struct CountSchema {
  // Wide layout: site,year,species,Stop1..StopT (any column named stop<digits>,
  // case-insensitive, is an occasion). Long layout: site,year,occasion,species,count.
  bool wide_stops = false;
  // Site-level abundance covariates, standardized across sites. A name is an
  // extra column of the file, or "a*b" for the product of columns a and b.
  std::vector<std::string> covariates;
};

struct ParsedCounts {
  Dataset data;
  double zero_fraction = 0.0;
  std::size_t rows = 0;
};

// Sites and species are indexed in lexicographic order of their labels, years
// in increasing order. Every (site, year) panel must be present with occasions
// exactly 1..T; a species absent from a present panel has zero counts there.
// Errors name the offending line (the header is line 1).
ParsedCounts parse_counts_csv(const std::filesystem::path& path, const CountSchema& schema = {});
ParsedCounts parse_counts(std::istream& in, const CountSchema& schema = {});

// Long layout with any abundance covariates as extra columns.
void write_counts_csv(const std::filesystem::path& path, const Dataset& data);

// ---- JSON documents --------------------------------------------------------

nlohmann::json truth_to_json(const GroundTruth& truth, const Dataset& data, const ModelSpec& spec);
nlohmann::json parameters_to_json(const Parameters& point, const Dataset& data);
// Reads mu_a, sigma_a and, when present, beta, theta and phi. Missing blocks are
// zero (beta, phi) or 0.5 (theta); dimensions are checked against S.
Parameters parameters_from_json(const nlohmann::json& doc, int S);

struct StudyManifest {
  ModelSpec spec;
  SamplerConfig sampler;
  std::vector<Scenario> scenarios;
  StudyOptions options;
};
// {"model": {"hurdle", "ar", "detection_dim"}, "sampler": {...},
//  "workers": n, "scenarios": [{"id", "R", "T", "S", "K", "p_regime",
//  "lambda_regime", "theta", "replicates", "seed"}]}
StudyManifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const StudyManifest& manifest);
nlohmann::json read_json(const std::filesystem::path& path);

// ---- results ---------------------------------------------------------------

struct MaxAbundanceRow {
  std::string species;
  int max_y = 0;
  long max_n = 0;  // rounded posterior mean N, maximised over sites and years
};
std::vector<MaxAbundanceRow> max_abundance_table(const Dataset& data,
                                                 const PosteriorSummary& summary);

struct SpeciesYearMean {
  std::string species;
  int year = 0;
  double mean = 0.0;  // posterior mean N averaged over sites
};
std::vector<SpeciesYearMean> species_year_means(const Dataset& data,
                                                const PosteriorSummary& summary);

struct BicRow {
  std::string dataset;
  std::string model;
  BicResult result;
};

// Writes to a temporary sibling and renames it over `path`.
void write_atomic(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);

void write_summary_csv(const std::filesystem::path& path, const PosteriorSummary& summary);
void write_latent_csv(const std::filesystem::path& path, const PosteriorSummary& summary,
                      const Dataset& data);
// Columns chain, iteration, parameter, value; iteration counts from 1 including burn-in.
void write_draws_csv(const std::filesystem::path& path, const PosteriorDraws& draws,
                     const SamplerConfig& cfg);
void write_correlation_csv(const std::filesystem::path& path, const CorrelationReport& report,
                           const Dataset& data);
nlohmann::json correlation_to_json(const CorrelationReport& report, const Dataset& data);
void write_study_csv(const std::filesystem::path& path, const std::vector<StudyMetricRow>& rows);
std::vector<StudyMetricRow> read_study_csv(const std::filesystem::path& path);
void write_max_abundance_csv(const std::filesystem::path& path,
                             const std::vector<MaxAbundanceRow>& rows);
void write_species_year_csv(const std::filesystem::path& path,
                            const std::vector<SpeciesYearMean>& rows);
void write_bic_csv(const std::filesystem::path& path, const std::vector<BicRow>& rows);

struct ResultBundle {
  const Dataset* data = nullptr;
  const PosteriorSummary* summary = nullptr;
  const CorrelationReport* correlations = nullptr;
  const std::vector<StudyMetricRow>* study = nullptr;
};

// Writes whichever parts are present: summary.csv, latent.csv, max_abundance.csv
// and species_year_means.csv (summary with data), correlations.csv/.json,
// study.csv. Throws ValidationError when out_dir cannot be created.
std::vector<std::filesystem::path> emit_results(const std::filesystem::path& out_dir,
                                                const ResultBundle& bundle);

// %.17g, or NA for a missing value.
std::string format_number(double value);
std::string format_number(const std::optional<double>& value);

// Series file for the trend command: either "year,value" or "series,year,value"
// (the species-year output is accepted as is). Series are returned by name in
// order of first appearance, each sorted by year.
struct TrendSeries {
  std::string name;
  std::vector<int> years;
  std::vector<double> values;
};
std::vector<TrendSeries> read_trend_csv(const std::filesystem::path& path);

// Minimal CSV record splitter with double-quote support.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace mnmix
