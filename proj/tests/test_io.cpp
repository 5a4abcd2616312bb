#include "mnmix/errors.hpp"
#include "mnmix/io.hpp"

#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace mnmix;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mnmix_io_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ParsedCounts parse(const std::string& text, const CountSchema& schema = {}) {
  std::istringstream in(text);
  return parse_counts(in, schema);
}

std::string error_of(const std::string& text, const CountSchema& schema = {}) {
  try {
    parse(text, schema);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("long layout parsing and ordering") {
  const std::string csv =
      "site,year,occasion,species,count\n"
      "b,2001,1,wren,3\n"
      "b,2001,2,wren,0\n"
      "a,2001,1,wren,1\n"
      "a,2001,2,wren,2\n"
      "a,2001,1,crow,4\n"
      "a,2001,2,crow,5\n"
      "b,2001,1,crow,0\n"
      "b,2001,2,crow,0\n";
  const ParsedCounts p = parse(csv);
  const Dataset& d = p.data;
  CHECK(d.sites() == 2);
  CHECK(d.occasions() == 2);
  CHECK(d.years() == 1);
  CHECK(d.species() == 2);
  CHECK(d.labels().sites == std::vector<std::string>{"a", "b"});
  CHECK(d.labels().species == std::vector<std::string>{"crow", "wren"});
  CHECK(d.y(0, 1, 0, 0) == 5);
  CHECK(d.y(1, 0, 0, 1) == 3);
  CHECK(p.rows == 8);
  CHECK(p.zero_fraction == doctest::Approx(3.0 / 8.0));
}

TEST_CASE("species absent from a panel are zero filled") {
  const std::string csv =
      "site,year,occasion,species,count\n"
      "a,1,1,x,2\n"
      "a,1,2,x,1\n"
      "a,2,1,y,3\n"
      "a,2,2,y,0\n";
  const Dataset d = parse(csv).data;
  CHECK(d.years() == 2);
  CHECK(d.y(0, 0, 0, 1) == 0);
  CHECK(d.y(0, 1, 1, 0) == 0);
  CHECK(d.y(0, 0, 1, 1) == 3);
}

TEST_CASE("ingestion errors name the offending row") {
  const std::string head = "site,year,occasion,species,count\n";
  const std::string dup = error_of(head + "a,1,1,x,2\na,1,2,x,1\na,1,1,x,4\n");
  CHECK(dup.find("line 4") != std::string::npos);
  CHECK(dup.find("duplicate") != std::string::npos);
  CHECK(dup.find("line 2") != std::string::npos);

  CHECK(error_of(head + "a,1,1,x,-2\n").find("line 2") != std::string::npos);
  CHECK(error_of(head + "a,1,1,x,2.5\n").find("not an integer") != std::string::npos);
  CHECK(error_of(head + "a,1,1,x,two\n").find("line 2") != std::string::npos);
  CHECK(error_of(head + "a,1,1,x\n").find("line 2") != std::string::npos);
  CHECK(error_of("site,year,species,count\na,1,x,1\n").find("occasion") != std::string::npos);
  CHECK(error_of(head + "a,1,1,x,2\na,1,2,x,1\na,1,1,y,2\n").find("ragged") != std::string::npos);
  CHECK(error_of(head + "a,1,1,x,2\nb,2,1,x,1\n").find("missing panel") != std::string::npos);
  CHECK(error_of("").find("empty") != std::string::npos);
}

TEST_CASE("wide stop layout at case-study scale") {
  std::ostringstream out;
  out << "Site,Year,Species";
  for (int t = 1; t <= 50; ++t) out << ",Stop" << t;
  out << '\n';
  for (int i = 0; i < 94; ++i) {
    for (int k = 0; k < 10; ++k) {
      for (int s = 0; s < 10; ++s) {
        out << "route" << i << ',' << 2000 + k << ",sp" << s;
        for (int t = 0; t < 50; ++t) out << ',' << (i + k + s + t) % 4;
        out << '\n';
      }
    }
  }
  CountSchema schema;
  schema.wide_stops = true;
  const Dataset d = parse(out.str(), schema).data;
  CHECK(d.count_cells() == 470000);
  CHECK(d.sites() == 94);
  CHECK(d.occasions() == 50);

  std::ostringstream one;
  one << "site,year,species";
  for (int t = 1; t <= 50; ++t) one << ",stop" << t;
  one << '\n';
  for (int i = 0; i < 94; ++i) {
    for (int s = 0; s < 10; ++s) {
      one << "r" << i << ",2010,sp" << s;
      for (int t = 0; t < 50; ++t) one << ",1";
      one << '\n';
    }
  }
  const Dataset single = parse(one.str(), schema).data;
  CHECK(single.count_cells() / single.species() == 4700);
}

TEST_CASE("site covariates are standardised") {
  const std::string csv =
      "site,year,occasion,species,count,elev,forest\n"
      "a,1,1,x,2,100,0.2\n"
      "b,1,1,x,1,200,0.4\n"
      "c,1,1,x,0,600,0.9\n";
  CountSchema schema;
  schema.covariates = {"elev", "elev*forest"};
  const Dataset d = parse(csv, schema).data;
  REQUIRE(d.q_lambda() == 2);
  const Eigen::VectorXd e = d.X().col(0);
  CHECK(std::abs(e.mean()) < 1e-12);
  CHECK(std::sqrt((e.array() - e.mean()).square().sum() / 2.0) == doctest::Approx(1.0));
  CHECK(e(0) < e(1));
  CHECK(e(2) > e(1));
  const Eigen::VectorXd prod = d.X().col(1);
  CHECK(std::abs(prod.mean()) < 1e-12);
  CHECK(prod(2) > prod(1));

  const std::string changing =
      "site,year,occasion,species,count,elev\n"
      "a,1,1,x,2,100\n"
      "a,2,1,x,1,150\n";
  schema.covariates = {"elev"};
  CHECK(error_of(changing, schema).find("changes within site") != std::string::npos);
}

TEST_CASE("counts CSV round trip") {
  TempDir tmp;
  const std::string csv =
      "site,year,occasion,species,count\n"
      "s1,3,1,x,2\n"
      "s1,3,2,x,1\n"
      "s1,5,1,x,0\n"
      "s1,5,2,x,7\n";
  const Dataset d = parse(csv).data;
  write_counts_csv(tmp.path / "c.csv", d);
  const Dataset back = parse_counts_csv(tmp.path / "c.csv").data;
  CHECK(back.raw_counts() == d.raw_counts());
  CHECK(back.labels().years == std::vector<int>{3, 5});
  CHECK_THROWS_AS(parse_counts_csv(tmp.path / "missing.csv"), ValidationError);
}

TEST_CASE("study CSV round trip") {
  TempDir tmp;
  StudyMetricRow r;
  r.scenario = "cell,1";
  r.model = "MNM-Hurdle(C)";
  r.median_p = 0.1 + 0.2;
  r.median_lambda = 55.0 / 3.0;
  r.theta = 0.7;
  r.ccc = 0.987654321;
  r.cmd = 1.0 / 7.0;
  r.rb_p = 0.0579;
  r.rb_mu_a = 1e-17;
  r.rb_theta = 0.123;
  r.coverage_N = 0.5;
  r.coverage_Sigma = 0.53;
  r.coverage_p = 0.45;
  r.coverage_mu_a = 0.58;
  r.coverage_theta = 0.6;
  r.replicates = 20;
  r.failures = 1;
  r.flags = "phi;theta";
  StudyMetricRow plain;
  plain.scenario = "b";
  plain.model = "MNM(C)";
  plain.ccc = 0.5;
  write_study_csv(tmp.path / "study.csv", {r, plain});
  const auto rows = read_study_csv(tmp.path / "study.csv");
  REQUIRE(rows.size() == 2);
  const auto& b = rows[0];
  CHECK(b.scenario == r.scenario);
  CHECK(b.model == r.model);
  CHECK(b.median_p == r.median_p);
  CHECK(b.median_lambda == r.median_lambda);
  CHECK(b.theta == r.theta);
  CHECK(b.ccc == r.ccc);
  CHECK(b.cmd == r.cmd);
  CHECK(b.rb_mu_a == r.rb_mu_a);
  CHECK(b.rb_theta == r.rb_theta);
  CHECK_FALSE(b.rb_phi);
  CHECK(b.coverage_theta == r.coverage_theta);
  CHECK(b.replicates == 20);
  CHECK(b.failures == 1);
  CHECK(b.flags == r.flags);
  CHECK_FALSE(rows[1].theta);
  write_study_csv(tmp.path / "again.csv", rows);
  CHECK(read_file(tmp.path / "again.csv") == read_file(tmp.path / "study.csv"));
}

TEST_CASE("max abundance table") {
  std::vector<int> counts(2 * 1 * 2 * 10, 0);
  DatasetLabels labels;
  labels.sites = {"r1", "r2"};
  labels.years = {2000, 2001};
  for (int s = 0; s < 10; ++s) labels.species.push_back("sp" + std::to_string(s));
  const Dataset d(2, 1, 2, 10, counts, {}, {}, labels);
  PosteriorSummary summary;
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      for (int s = 0; s < 10; ++s) {
        LatentSummary l;
        l.site = i;
        l.year = k;
        l.species = s;
        l.mean = s + i + 0.6 * k;
        summary.latent.push_back(l);
      }
    }
  }
  const auto rows = max_abundance_table(d, summary);
  REQUIRE(rows.size() == 10);
  CHECK(rows[3].species == "sp3");
  CHECK(rows[3].max_n == std::lround(3 + 1 + 0.6));
  CHECK(rows[3].max_y == 0);
  TempDir tmp;
  write_max_abundance_csv(tmp.path / "m.csv", rows);
  const std::string text = read_file(tmp.path / "m.csv");
  CHECK(text.rfind("species,max_Y,max_N_hat\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);

  const auto means = species_year_means(d, summary);
  REQUIRE(means.size() == 20);
  CHECK(means[1].year == 2001);
  CHECK(means[1].mean == doctest::Approx(0.5 + 0.6));
}

TEST_CASE("manifest round trip and validation") {
  const auto doc = nlohmann::json::parse(R"({
    "model": {"hurdle": true, "ar": false, "detection_dim": "C"},
    "sampler": {"chains": 2, "iters": 400, "burn": 100, "thin": 1, "seed": 9},
    "workers": 1,
    "scenarios": [{"id": "a", "R": 3, "T": 2, "S": 2, "K": 1, "p_regime": "small",
                   "lambda_regime": "large", "theta": 0.7, "replicates": 2, "seed": 4}]
  })");
  const StudyManifest m = manifest_from_json(doc);
  CHECK(m.spec.hurdle);
  CHECK(m.sampler.n_iter == 400);
  CHECK(m.scenarios[0].p_regime == Regime::Small);
  CHECK(*m.scenarios[0].theta == 0.7);
  CHECK(manifest_from_json(manifest_to_json(m)).scenarios[0].seed == 4);
  CHECK(manifest_to_json(manifest_from_json(manifest_to_json(m))) == manifest_to_json(m));

  auto bad = doc;
  bad["scenarios"][0].erase("theta");
  CHECK_THROWS_AS(manifest_from_json(bad), ValidationError);
  bad = doc;
  bad["sampler"]["burn"] = 500;
  CHECK_THROWS_AS(manifest_from_json(bad), ValidationError);
}

TEST_CASE("parameter JSON round trip") {
  const Dataset d(1, 1, 1, 2, std::vector<int>{0, 0});
  const ModelSpec spec = ModelSpec::make(2, true, true, DetectionDim::C);
  Parameters p = Parameters::zeros(d, spec);
  p.mu_a << 1.5, -0.25;
  p.sigma_a << 1.0, 0.3, 0.3, 2.0;
  p.theta = 0.4;
  p.phi << 0.1, 0.2;
  const Parameters back = parameters_from_json(parameters_to_json(p, d), 2);
  CHECK(back.mu_a == p.mu_a);
  CHECK(back.sigma_a == p.sigma_a);
  CHECK(back.theta == p.theta);
  CHECK(back.phi == p.phi);
  CHECK_THROWS_AS(parameters_from_json(parameters_to_json(p, d), 3), ValidationError);
}

TEST_CASE("number formatting and CSV splitting") {
  CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "NA");
  CHECK(format_number(std::optional<double>{}) == "NA");
  CHECK(std::stod(format_number(0.1)) == 0.1);
  CHECK(split_csv_line("a,\"b,c\",\"d\"\"e\",") == std::vector<std::string>{"a", "b,c", "d\"e", ""});
}

TEST_CASE("trend series file") {
  TempDir tmp;
  {
    std::ofstream out(tmp.path / "t.csv");
    out << "series,year,value\nx,2002,3\nx,2001,1\ny,2001,5\nx,2003,4\n";
  }
  const auto series = read_trend_csv(tmp.path / "t.csv");
  REQUIRE(series.size() == 2);
  CHECK(series[0].name == "x");
  CHECK(series[0].years == std::vector<int>{2001, 2002, 2003});
  CHECK(series[0].values == std::vector<double>{1, 3, 4});
}
