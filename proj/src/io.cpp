#include "mnmix/io.hpp"

#include "mnmix/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mnmix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string line_ref(std::size_t line) { return "line " + std::to_string(line) + ": "; }

bool parse_long(const std::string& text, long& out) {
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && !text.empty();
}

bool parse_double(const std::string& text, double& out) {
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && !text.empty();
}

// Counts must be non-negative integers; "3.0" is accepted, "3.5" is not.
int parse_count(const std::string& text, std::size_t line) {
  long v = 0;
  if (!parse_long(text, v)) {
    double d = 0.0;
    if (!parse_double(text, d) || !std::isfinite(d)) {
      throw ValidationError(line_ref(line) + "count '" + text + "' is not a number");
    }
    if (d != std::floor(d)) throw ValidationError(line_ref(line) + "count '" + text + "' is not an integer");
    if (d < 0) throw ValidationError(line_ref(line) + "negative count " + text);
    if (d > 1e9) throw ValidationError(line_ref(line) + "count " + text + " is too large");
    return static_cast<int>(d);
  }
  if (v < 0) throw ValidationError(line_ref(line) + "negative count " + text);
  if (v > 1000000000L) throw ValidationError(line_ref(line) + "count " + text + " is too large");
  return static_cast<int>(v);
}

int parse_int_field(const std::string& text, const char* what, std::size_t line) {
  long v = 0;
  if (!parse_long(text, v)) {
    throw ValidationError(line_ref(line) + what + " '" + text + "' is not an integer");
  }
  return static_cast<int>(v);
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string site_label(const Dataset& d, int i) {
  const auto& l = d.labels().sites;
  return i < static_cast<int>(l.size()) ? l[i] : "site" + std::to_string(i + 1);
}
std::string species_label(const Dataset& d, int s) {
  const auto& l = d.labels().species;
  return s < static_cast<int>(l.size()) ? l[s] : "sp" + std::to_string(s + 1);
}
int year_label(const Dataset& d, int k) {
  const auto& l = d.labels().years;
  return k < static_cast<int>(l.size()) ? l[k] : k + 1;
}

struct RawRecord {
  std::string site, species;
  int year = 0, occasion = 0, count = 0;
  std::size_t line = 0;
};

using Table = std::map<std::string, std::map<std::string, double>>;  // site -> column -> value

Eigen::MatrixXd build_covariates(const std::vector<std::string>& sites, const Table& columns,
                                 const std::vector<std::string>& names) {
  const int R = static_cast<int>(sites.size());
  Eigen::MatrixXd X(R, static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto& name = names[j];
    std::vector<std::string> parts;
    std::stringstream ss(name);
    for (std::string p; std::getline(ss, p, '*');) parts.push_back(trim(p));
    for (int i = 0; i < R; ++i) {
      double v = 1.0;
      const auto& row = columns.at(sites[i]);
      for (const auto& p : parts) {
        const auto it = row.find(p);
        if (it == row.end()) throw ValidationError("unknown covariate column '" + p + "'");
        v *= it->second;
      }
      X(i, static_cast<Eigen::Index>(j)) = v;
    }
    if (R < 2) throw ValidationError("covariates need at least two sites to standardize");
    const double mean = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - mean).square().sum() / (R - 1));
    if (!(sd > 0.0)) throw ValidationError("covariate '" + name + "' is constant across sites");
    X.col(j) = (X.col(j).array() - mean) / sd;
  }
  return X;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t j = 0; j < line.size(); ++j) {
    const char c = line[j];
    if (quoted) {
      if (c == '"') {
        if (j + 1 < line.size() && line[j + 1] == '"') {
          cur += '"';
          ++j;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

ParsedCounts parse_counts(std::istream& in, const CountSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw ValidationError("empty counts file");
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string name = lower(header[j]);
    if (!col.emplace(name, j).second) throw ValidationError("duplicate column '" + header[j] + "'");
  }
  auto need = [&](const char* name) {
    const auto it = col.find(name);
    if (it == col.end()) throw ValidationError(std::string("missing column '") + name + "'");
    return it->second;
  };
  const std::size_t c_site = need("site"), c_year = need("year"), c_species = need("species");
  std::size_t c_occ = 0, c_count = 0;
  std::vector<std::pair<int, std::size_t>> stops;  // occasion -> column
  if (schema.wide_stops) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      const std::string name = lower(header[j]);
      if (name.size() > 4 && name.compare(0, 4, "stop") == 0 &&
          std::all_of(name.begin() + 4, name.end(), [](unsigned char c) { return std::isdigit(c); })) {
        stops.emplace_back(std::stoi(name.substr(4)), j);
      }
    }
    if (stops.empty()) throw ValidationError("wide layout needs stop columns (Stop1..StopT)");
    std::sort(stops.begin(), stops.end());
    for (std::size_t t = 0; t < stops.size(); ++t) {
      if (stops[t].first != static_cast<int>(t) + 1) {
        throw ValidationError("stop columns must be numbered 1..T without gaps");
      }
    }
  } else {
    c_occ = need("occasion");
    c_count = need("count");
  }
  std::set<std::size_t> fixed = {c_site, c_year, c_species};
  if (schema.wide_stops) {
    for (const auto& s : stops) fixed.insert(s.second);
  } else {
    fixed.insert(c_occ);
    fixed.insert(c_count);
  }
  std::vector<std::size_t> extra;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!fixed.count(j)) extra.push_back(j);
  }
  std::set<std::string> wanted;
  for (const auto& name : schema.covariates) {
    std::stringstream ss(name);
    for (std::string p; std::getline(ss, p, '*');) wanted.insert(lower(trim(p)));
  }

  std::vector<RawRecord> records;
  Table site_columns;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ValidationError(line_ref(line_no) + "expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(f.size()));
    }
    ++rows;
    RawRecord base;
    base.line = line_no;
    base.site = f[c_site];
    base.species = f[c_species];
    if (base.site.empty()) throw ValidationError(line_ref(line_no) + "empty site");
    if (base.species.empty()) throw ValidationError(line_ref(line_no) + "empty species");
    base.year = parse_int_field(f[c_year], "year", line_no);
    for (std::size_t j : extra) {
      const std::string name = lower(header[j]);
      if (!wanted.count(name)) continue;
      double v = 0.0;
      if (!parse_double(f[j], v) || !std::isfinite(v)) {
        throw ValidationError(line_ref(line_no) + "covariate " + header[j] + " value '" + f[j] +
                              "' is not a number");
      }
      auto& row = site_columns[base.site];
      const auto [it, fresh] = row.emplace(name, v);
      if (!fresh && it->second != v) {
        throw ValidationError(line_ref(line_no) + "covariate " + header[j] +
                              " changes within site '" + base.site + "'");
      }
    }
    if (schema.wide_stops) {
      for (const auto& [t, j] : stops) {
        RawRecord r = base;
        r.occasion = t;
        r.count = parse_count(f[j], line_no);
        records.push_back(std::move(r));
      }
    } else {
      base.occasion = parse_int_field(f[c_occ], "occasion", line_no);
      if (base.occasion < 1) throw ValidationError(line_ref(line_no) + "occasion must be >= 1");
      base.count = parse_count(f[c_count], line_no);
      records.push_back(std::move(base));
    }
  }
  if (records.empty()) throw ValidationError("counts file has no data rows");

  std::set<std::string> site_set, species_set;
  std::set<int> year_set;
  for (const auto& r : records) {
    site_set.insert(r.site);
    species_set.insert(r.species);
    year_set.insert(r.year);
  }
  const std::vector<std::string> sites(site_set.begin(), site_set.end());
  const std::vector<std::string> species(species_set.begin(), species_set.end());
  const std::vector<int> years(year_set.begin(), year_set.end());
  auto index_of = [](const auto& v, const auto& x) {
    return static_cast<int>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  const int R = static_cast<int>(sites.size()), S = static_cast<int>(species.size()),
            K = static_cast<int>(years.size());

  // occasions seen per (site, year) panel, and per (site, year, species)
  std::map<std::pair<int, int>, std::set<int>> panel_occasions;
  std::map<std::tuple<int, int, int>, std::set<int>> cell_occasions;
  std::map<std::tuple<int, int, int, int>, std::size_t> seen;
  int T = 0;
  for (const auto& r : records) {
    const int i = index_of(sites, r.site), k = index_of(years, r.year), s = index_of(species, r.species);
    const auto key = std::make_tuple(i, k, s, r.occasion);
    const auto [it, fresh] = seen.emplace(key, r.line);
    if (!fresh) {
      throw ValidationError(line_ref(r.line) + "duplicate row for site '" + r.site + "', year " +
                            std::to_string(r.year) + ", occasion " + std::to_string(r.occasion) +
                            ", species '" + r.species + "' (first seen on line " +
                            std::to_string(it->second) + ")");
    }
    panel_occasions[{i, k}].insert(r.occasion);
    cell_occasions[{i, k, s}].insert(r.occasion);
    T = std::max(T, r.occasion);
  }
  for (int i = 0; i < R; ++i) {
    for (int k = 0; k < K; ++k) {
      const auto it = panel_occasions.find({i, k});
      if (it == panel_occasions.end()) {
        throw ValidationError("missing panel: site '" + sites[i] + "' has no rows for year " +
                              std::to_string(years[k]) + " (complete panels are required)");
      }
      if (static_cast<int>(it->second.size()) != T) {
        throw ValidationError("ragged occasions: site '" + sites[i] + "', year " +
                              std::to_string(years[k]) + " has " +
                              std::to_string(it->second.size()) + " of " + std::to_string(T) +
                              " occasions");
      }
    }
  }
  for (const auto& [key, occ] : cell_occasions) {
    if (static_cast<int>(occ.size()) != T) {
      const auto [i, k, s] = key;
      std::size_t first_line = 0;
      for (const auto& r : records) {
        if (r.site == sites[i] && r.year == years[k] && r.species == species[s]) {
          first_line = r.line;
          break;
        }
      }
      throw ValidationError(line_ref(first_line) + "ragged occasions: site '" + sites[i] +
                            "', year " + std::to_string(years[k]) + ", species '" + species[s] +
                            "' has " + std::to_string(occ.size()) + " of " + std::to_string(T) +
                            " occasions");
    }
  }

  std::vector<int> counts(static_cast<std::size_t>(R) * K * S * T, 0);
  std::size_t zeros = counts.size();
  for (const auto& r : records) {
    const int i = index_of(sites, r.site), k = index_of(years, r.year), s = index_of(species, r.species);
    const std::size_t c = (static_cast<std::size_t>(i) * K + k) * S + s;
    counts[c * T + (r.occasion - 1)] = r.count;
    if (r.count != 0) --zeros;
  }

  Eigen::MatrixXd X;
  DatasetLabels labels;
  labels.sites = sites;
  labels.years = years;
  labels.species = species;
  if (!schema.covariates.empty()) {
    for (const auto& s : sites) {
      if (!site_columns.count(s)) throw ValidationError("site '" + s + "' has no covariate values");
    }
    std::vector<std::string> names;
    for (const auto& n : schema.covariates) {
      std::string low;
      for (char ch : n) {
        if (ch != ' ') low += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      }
      names.push_back(low);
    }
    X = build_covariates(sites, site_columns, names);
    labels.abundance_covariates = schema.covariates;
  }

  ParsedCounts out;
  out.rows = rows;
  out.zero_fraction = static_cast<double>(zeros) / static_cast<double>(counts.size());
  out.data = Dataset(R, T, K, S, std::move(counts), std::move(X), {}, std::move(labels));
  return out;
}

ParsedCounts parse_counts_csv(const fs::path& path, const CountSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open counts file '" + path.string() + "'");
  return parse_counts(in, schema);
}

void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    writer(out);
    out.flush();
    if (!out) throw ValidationError("write to '" + path.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ValidationError("cannot write '" + path.string() + "'");
  }
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_number(const std::optional<double>& value) {
  return value ? format_number(*value) : "NA";
}

void write_counts_csv(const fs::path& path, const Dataset& d) {
  const auto& cov = d.labels().abundance_covariates;
  write_atomic(path, [&](std::ostream& out) {
    out << "site,year,occasion,species,count";
    for (int j = 0; j < d.q_lambda(); ++j) {
      out << ',' << quote_csv(j < static_cast<int>(cov.size()) ? cov[j] : "x" + std::to_string(j + 1));
    }
    out << '\n';
    for (int i = 0; i < d.sites(); ++i) {
      for (int k = 0; k < d.years(); ++k) {
        for (int t = 0; t < d.occasions(); ++t) {
          for (int s = 0; s < d.species(); ++s) {
            out << quote_csv(site_label(d, i)) << ',' << year_label(d, k) << ',' << t + 1 << ','
                << quote_csv(species_label(d, s)) << ',' << d.y(i, t, k, s);
            for (int j = 0; j < d.q_lambda(); ++j) out << ',' << format_number(d.X()(i, j));
            out << '\n';
          }
        }
      }
    }
  });
}

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::VectorXd json_vec(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t q = 0; q < j.size(); ++q) v(static_cast<Eigen::Index>(q)) = j[q].get<double>();
  return v;
}

Eigen::MatrixXd json_mat(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw ValidationError(std::string(what) + " has rows of different lengths");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

std::vector<std::string> species_labels(const Dataset& d) {
  std::vector<std::string> v;
  for (int s = 0; s < d.species(); ++s) v.push_back(species_label(d, s));
  return v;
}

}  // namespace

json truth_to_json(const GroundTruth& truth, const Dataset& data, const ModelSpec& spec) {
  json j;
  j["model"] = model_label(spec);
  j["species"] = species_labels(data);
  j["mu_a"] = vec_json(truth.mu_a);
  j["sigma_a"] = mat_json(truth.sigma_a);
  j["a"] = mat_json(truth.a);
  j["detection_logit"] = vec_json(truth.detection);
  j["p"] = vec_json(truth.p);
  if (spec.hurdle) j["theta"] = truth.theta;
  if (spec.autoregressive) j["phi"] = vec_json(truth.phi);
  j["N"] = truth.N.values();
  j["lambda"] = truth.lambda;
  j["layout"] = "site-year-species";
  return j;
}

json parameters_to_json(const Parameters& point, const Dataset& data) {
  json j;
  j["species"] = species_labels(data);
  j["mu_a"] = vec_json(point.mu_a);
  j["sigma_a"] = mat_json(point.sigma_a);
  if (point.beta.size() > 0) j["beta"] = mat_json(point.beta);
  j["detection_logit"] = vec_json(point.detection);
  j["theta"] = point.theta;
  j["phi"] = vec_json(point.phi);
  return j;
}

Parameters parameters_from_json(const json& doc, int S) {
  Parameters p;
  try {
    p.mu_a = json_vec(doc.at("mu_a"), "mu_a");
    p.sigma_a = json_mat(doc.at("sigma_a"), "sigma_a");
    p.beta = doc.contains("beta") ? json_mat(doc["beta"], "beta") : Eigen::MatrixXd(S, 0);
    p.theta = doc.value("theta", 0.5);
    p.phi = doc.contains("phi") ? json_vec(doc["phi"], "phi") : Eigen::VectorXd::Zero(S);
    if (doc.contains("detection_logit")) p.detection = json_vec(doc["detection_logit"], "detection_logit");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("parameter document: ") + e.what());
  }
  if (p.mu_a.size() != S || p.sigma_a.rows() != S || p.sigma_a.cols() != S || p.phi.size() != S ||
      (p.beta.size() > 0 && p.beta.rows() != S)) {
    throw ValidationError("parameter document does not match " + std::to_string(S) + " species");
  }
  p.a = Eigen::MatrixXd::Zero(0, S);
  p.gamma = Eigen::MatrixXd(S, 0);
  return p;
}

namespace {

SamplerConfig sampler_from_json(const json& j, SamplerConfig cfg) {
  cfg.n_chains = j.value("chains", cfg.n_chains);
  cfg.n_iter = j.value("iters", cfg.n_iter);
  cfg.n_burn = j.value("burn", cfg.n_burn);
  cfg.thin = j.value("thin", cfg.thin);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.rhat_threshold = j.value("rhat_threshold", cfg.rhat_threshold);
  cfg.collapse_interval = j.value("collapse_interval", cfg.collapse_interval);
  return cfg;
}

json sampler_to_json(const SamplerConfig& cfg) {
  return {{"chains", cfg.n_chains}, {"iters", cfg.n_iter}, {"burn", cfg.n_burn},
          {"thin", cfg.thin},       {"seed", cfg.seed},    {"rhat_threshold", cfg.rhat_threshold},
          {"collapse_interval", cfg.collapse_interval}};
}

}  // namespace

StudyManifest manifest_from_json(const json& doc) {
  StudyManifest m;
  try {
    const json model = doc.value("model", json::object());
    const bool hurdle = model.value("hurdle", false);
    const bool ar = model.value("ar", false);
    const DetectionDim dim = detection_dim_from_string(model.value("detection_dim", std::string("C")));
    m.sampler = sampler_from_json(doc.value("sampler", json::object()), SamplerConfig{});
    m.options.workers = doc.value("workers", 0);
    const json& scenarios = doc.at("scenarios");
    if (!scenarios.is_array() || scenarios.empty()) {
      throw ValidationError("manifest needs a non-empty scenarios array");
    }
    int S = 0;
    for (std::size_t q = 0; q < scenarios.size(); ++q) {
      const json& s = scenarios[q];
      Scenario sc;
      sc.id = s.value("id", "scenario" + std::to_string(q + 1));
      sc.R = s.value("R", sc.R);
      sc.T = s.value("T", sc.T);
      sc.S = s.value("S", sc.S);
      sc.K = s.value("K", sc.K);
      sc.p_regime = regime_from_string(s.value("p_regime", std::string("large")));
      sc.lambda_regime = regime_from_string(s.value("lambda_regime", std::string("large")));
      if (s.contains("theta") && !s["theta"].is_null()) sc.theta = s["theta"].get<double>();
      sc.replicates = s.value("replicates", sc.replicates);
      sc.seed = s.value("seed", static_cast<std::uint64_t>(q + 1));
      sc.max_abs_correlation = s.value("max_abs_correlation", sc.max_abs_correlation);
      S = sc.S;
      m.scenarios.push_back(sc);
    }
    m.spec = ModelSpec::make(S, hurdle, ar, dim);
    for (const auto& sc : m.scenarios) {
      try {
        sc.validate(ModelSpec::make(sc.S, hurdle, ar, dim));
      } catch (const DomainError& e) {
        throw ValidationError("scenario '" + sc.id + "': " + e.what());
      }
    }
    m.sampler.validate();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  } catch (const DomainError& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

json manifest_to_json(const StudyManifest& m) {
  json doc;
  doc["model"] = {{"hurdle", m.spec.hurdle},
                  {"ar", m.spec.autoregressive},
                  {"detection_dim", std::string(1, to_char(m.spec.detection_dim))}};
  doc["sampler"] = sampler_to_json(m.sampler);
  doc["workers"] = m.options.workers;
  json list = json::array();
  for (const auto& s : m.scenarios) {
    json j = {{"id", s.id},
              {"R", s.R},
              {"T", s.T},
              {"S", s.S},
              {"K", s.K},
              {"p_regime", to_string(s.p_regime)},
              {"lambda_regime", to_string(s.lambda_regime)},
              {"replicates", s.replicates},
              {"seed", s.seed},
              {"max_abs_correlation", s.max_abs_correlation}};
    if (s.theta) j["theta"] = *s.theta;
    list.push_back(j);
  }
  doc["scenarios"] = list;
  return doc;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<MaxAbundanceRow> max_abundance_table(const Dataset& d, const PosteriorSummary& summary) {
  const int S = d.species();
  std::vector<MaxAbundanceRow> rows(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    rows[s].species = species_label(d, s);
    for (int i = 0; i < d.sites(); ++i) {
      for (int k = 0; k < d.years(); ++k) rows[s].max_y = std::max(rows[s].max_y, d.max_count(i, k, s));
    }
  }
  for (const auto& l : summary.latent) {
    auto& r = rows.at(static_cast<std::size_t>(l.species));
    r.max_n = std::max(r.max_n, std::lround(l.mean));
  }
  return rows;
}

std::vector<SpeciesYearMean> species_year_means(const Dataset& d, const PosteriorSummary& summary) {
  const int S = d.species(), K = d.years();
  std::vector<double> sum(static_cast<std::size_t>(S) * K, 0.0);
  std::vector<int> n(sum.size(), 0);
  for (const auto& l : summary.latent) {
    const std::size_t e = static_cast<std::size_t>(l.species) * K + l.year;
    sum.at(e) += l.mean;
    ++n[e];
  }
  std::vector<SpeciesYearMean> rows;
  for (int s = 0; s < S; ++s) {
    for (int k = 0; k < K; ++k) {
      const std::size_t e = static_cast<std::size_t>(s) * K + k;
      rows.push_back({species_label(d, s), year_label(d, k),
                      n[e] > 0 ? sum[e] / n[e] : std::numeric_limits<double>::quiet_NaN()});
    }
  }
  return rows;
}

void write_summary_csv(const fs::path& path, const PosteriorSummary& summary) {
  write_atomic(path, [&](std::ostream& out) {
    out << "parameter,mean,sd,q2.5,q25,q50,q75,q97.5,rhat,flagged\n";
    for (const auto& p : summary.parameters) {
      out << quote_csv(p.name) << ',' << format_number(p.mean) << ',' << format_number(p.sd) << ','
          << format_number(p.q025) << ',' << format_number(p.q25) << ',' << format_number(p.q50)
          << ',' << format_number(p.q75) << ',' << format_number(p.q975) << ','
          << format_number(p.rhat) << ',' << (p.flagged ? 1 : 0) << '\n';
    }
  });
}

void write_latent_csv(const fs::path& path, const PosteriorSummary& summary, const Dataset& d) {
  write_atomic(path, [&](std::ostream& out) {
    out << "site,year,species,mean,sd,q2.5,q25,q50,q75,q97.5\n";
    for (const auto& l : summary.latent) {
      out << quote_csv(site_label(d, l.site)) << ',' << year_label(d, l.year) << ','
          << quote_csv(species_label(d, l.species)) << ',' << format_number(l.mean) << ','
          << format_number(l.sd) << ',' << l.q025 << ',' << l.q25 << ',' << l.q50 << ',' << l.q75
          << ',' << l.q975 << '\n';
    }
  });
}

void write_draws_csv(const fs::path& path, const PosteriorDraws& draws, const SamplerConfig& cfg) {
  write_atomic(path, [&](std::ostream& out) {
    out << "chain,iteration,parameter,value\n";
    for (int c = 0; c < draws.n_chains; ++c) {
      for (int r = 0; r < draws.n_retained; ++r) {
        const long iteration = static_cast<long>(cfg.n_burn) + static_cast<long>(r + 1) * cfg.thin;
        for (std::size_t q = 0; q < draws.names.size(); ++q) {
          out << c + 1 << ',' << iteration << ',' << quote_csv(draws.names[q]) << ','
              << format_number(draws.value(c, r, static_cast<int>(q))) << '\n';
        }
      }
    }
  });
}

void write_correlation_csv(const fs::path& path, const CorrelationReport& report, const Dataset& d) {
  write_atomic(path, [&](std::ostream& out) {
    out << "kind,site,year,species_row,species_col,value\n";
    const auto S = report.latent.rows();
    for (Eigen::Index r = 0; r < S; ++r) {
      for (Eigen::Index c = 0; c < S; ++c) {
        out << "latent,NA,NA," << quote_csv(species_label(d, static_cast<int>(r))) << ','
            << quote_csv(species_label(d, static_cast<int>(c))) << ','
            << format_number(report.latent(r, c)) << '\n';
      }
    }
    for (const auto& m : report.abundance) {
      const std::string site = m.site < d.sites() ? site_label(d, m.site) : std::to_string(m.site + 1);
      const std::string year = m.year < 0 ? "NA" : std::to_string(year_label(d, m.year));
      for (Eigen::Index r = 0; r < m.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.value.cols(); ++c) {
          out << "abundance-" << report.method << ',' << quote_csv(site) << ',' << year << ','
              << quote_csv(species_label(d, static_cast<int>(r))) << ','
              << quote_csv(species_label(d, static_cast<int>(c))) << ','
              << format_number(m.value(r, c)) << '\n';
        }
      }
    }
  });
}

json correlation_to_json(const CorrelationReport& report, const Dataset& d) {
  json j;
  j["species"] = species_labels(d);
  j["method"] = report.method;
  j["latent"] = mat_json(report.latent);
  json list = json::array();
  for (const auto& m : report.abundance) {
    json e;
    e["site"] = m.site < d.sites() ? site_label(d, m.site) : std::to_string(m.site + 1);
    if (m.year >= 0) {
      e["year"] = year_label(d, m.year);
    } else {
      e["year"] = nullptr;
    }
    e["value"] = mat_json(m.value);
    list.push_back(e);
  }
  j["abundance"] = list;
  return j;
}

namespace {

const char* const kStudyHeader =
    "scenario,model,median_p,median_lambda,theta,ccc,cmd,rb_p,rb_mu_a,rb_theta,rb_phi,"
    "coverage_N,coverage_Sigma,coverage_p,coverage_mu_a,coverage_theta,coverage_phi,"
    "replicates,failures,flags";

std::optional<double> read_optional(const std::string& s, std::size_t line) {
  if (s == "NA") return std::nullopt;
  double v = 0.0;
  if (!parse_double(s, v)) throw ValidationError(line_ref(line) + "'" + s + "' is not a number");
  return v;
}

double read_number(const std::string& s, std::size_t line) {
  const auto v = read_optional(s, line);
  return v ? *v : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void write_study_csv(const fs::path& path, const std::vector<StudyMetricRow>& rows) {
  write_atomic(path, [&](std::ostream& out) {
    out << kStudyHeader << '\n';
    for (const auto& r : rows) {
      out << quote_csv(r.scenario) << ',' << quote_csv(r.model) << ',' << format_number(r.median_p)
          << ',' << format_number(r.median_lambda) << ',' << format_number(r.theta) << ','
          << format_number(r.ccc) << ',' << format_number(r.cmd) << ',' << format_number(r.rb_p)
          << ',' << format_number(r.rb_mu_a) << ',' << format_number(r.rb_theta) << ','
          << format_number(r.rb_phi) << ',' << format_number(r.coverage_N) << ','
          << format_number(r.coverage_Sigma) << ',' << format_number(r.coverage_p) << ','
          << format_number(r.coverage_mu_a) << ',' << format_number(r.coverage_theta) << ','
          << format_number(r.coverage_phi) << ',' << r.replicates << ',' << r.failures << ','
          << quote_csv(r.flags) << '\n';
    }
  });
}

std::vector<StudyMetricRow> read_study_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open study file '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (trim(line) != kStudyHeader) throw ValidationError("'" + path.string() + "' is not a study CSV");
  std::vector<StudyMetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 20) throw ValidationError(line_ref(line_no) + "expected 20 fields");
    StudyMetricRow r;
    r.scenario = f[0];
    r.model = f[1];
    r.median_p = read_number(f[2], line_no);
    r.median_lambda = read_number(f[3], line_no);
    r.theta = read_optional(f[4], line_no);
    r.ccc = read_number(f[5], line_no);
    r.cmd = read_number(f[6], line_no);
    r.rb_p = read_number(f[7], line_no);
    r.rb_mu_a = read_number(f[8], line_no);
    r.rb_theta = read_optional(f[9], line_no);
    r.rb_phi = read_optional(f[10], line_no);
    r.coverage_N = read_number(f[11], line_no);
    r.coverage_Sigma = read_number(f[12], line_no);
    r.coverage_p = read_number(f[13], line_no);
    r.coverage_mu_a = read_number(f[14], line_no);
    r.coverage_theta = read_optional(f[15], line_no);
    r.coverage_phi = read_optional(f[16], line_no);
    r.replicates = parse_int_field(f[17], "replicates", line_no);
    r.failures = parse_int_field(f[18], "failures", line_no);
    r.flags = f[19];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_max_abundance_csv(const fs::path& path, const std::vector<MaxAbundanceRow>& rows) {
  write_atomic(path, [&](std::ostream& out) {
    out << "species,max_Y,max_N_hat\n";
    for (const auto& r : rows) out << quote_csv(r.species) << ',' << r.max_y << ',' << r.max_n << '\n';
  });
}

void write_species_year_csv(const fs::path& path, const std::vector<SpeciesYearMean>& rows) {
  write_atomic(path, [&](std::ostream& out) {
    out << "species,year,mean_N_hat\n";
    for (const auto& r : rows) {
      out << quote_csv(r.species) << ',' << r.year << ',' << format_number(r.mean) << '\n';
    }
  });
}

void write_bic_csv(const fs::path& path, const std::vector<BicRow>& rows) {
  write_atomic(path, [&](std::ostream& out) {
    out << "dataset,model,n_params,n_obs,loglik,bic\n";
    for (const auto& r : rows) {
      out << quote_csv(r.dataset) << ',' << quote_csv(r.model) << ',' << r.result.n_params << ','
          << format_number(r.result.n_obs) << ',' << format_number(r.result.loglik) << ','
          << format_number(r.result.bic) << '\n';
    }
  });
}

std::vector<fs::path> emit_results(const fs::path& out_dir, const ResultBundle& b) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw ValidationError("cannot create output directory '" + out_dir.string() + "'");
  }
  std::vector<fs::path> written;
  if (b.summary) {
    written.push_back(out_dir / "summary.csv");
    write_summary_csv(written.back(), *b.summary);
    if (b.data) {
      written.push_back(out_dir / "latent.csv");
      write_latent_csv(written.back(), *b.summary, *b.data);
      written.push_back(out_dir / "max_abundance.csv");
      write_max_abundance_csv(written.back(), max_abundance_table(*b.data, *b.summary));
      written.push_back(out_dir / "species_year_means.csv");
      write_species_year_csv(written.back(), species_year_means(*b.data, *b.summary));
    }
  }
  if (b.correlations) {
    if (!b.data) throw ValidationError("correlation output needs the dataset labels");
    written.push_back(out_dir / "correlations.csv");
    write_correlation_csv(written.back(), *b.correlations, *b.data);
    written.push_back(out_dir / "correlations.json");
    const std::string text = correlation_to_json(*b.correlations, *b.data).dump(2);
    write_atomic(written.back(), [&](std::ostream& out) { out << text << '\n'; });
  }
  if (b.study) {
    written.push_back(out_dir / "study.csv");
    write_study_csv(written.back(), *b.study);
  }
  return written;
}

std::vector<TrendSeries> read_trend_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open series file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty series file");
  const auto header = split_csv_line(line);
  if (header.size() != 2 && header.size() != 3) {
    throw ValidationError("series file needs columns year,value or series,year,value");
  }
  const bool named = header.size() == 3;
  std::vector<TrendSeries> out;
  std::map<std::string, std::size_t> where;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ValidationError(line_ref(line_no) + "wrong number of fields");
    const std::string name = named ? f[0] : "series";
    const int year = parse_int_field(f[named ? 1 : 0], "year", line_no);
    double v = 0.0;
    if (!parse_double(f[named ? 2 : 1], v) || !std::isfinite(v)) {
      throw ValidationError(line_ref(line_no) + "value is not a finite number");
    }
    auto [it, fresh] = where.emplace(name, out.size());
    if (fresh) out.push_back({name, {}, {}});
    auto& s = out[it->second];
    s.years.push_back(year);
    s.values.push_back(v);
  }
  for (auto& s : out) {
    std::vector<std::size_t> order(s.years.size());
    for (std::size_t q = 0; q < order.size(); ++q) order[q] = q;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return s.years[x] < s.years[y]; });
    for (std::size_t q = 1; q < order.size(); ++q) {
      if (s.years[order[q]] == s.years[order[q - 1]]) {
        throw ValidationError("series '" + s.name + "' repeats year " + std::to_string(s.years[order[q]]));
      }
    }
    TrendSeries sorted{s.name, {}, {}};
    for (auto q : order) {
      sorted.years.push_back(s.years[q]);
      sorted.values.push_back(s.values[q]);
    }
    s = std::move(sorted);
  }
  return out;
}

}  // namespace mnmix
