#include "mnmix/correlations.hpp"
#include "mnmix/errors.hpp"
#include "mnmix/io.hpp"
#include "mnmix/likelihood.hpp"
#include "mnmix/metrics.hpp"
#include "mnmix/sampler.hpp"
#include "mnmix/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace mnmix;

namespace {

Dataset make_dataset(int R, int T, int K, int S, std::vector<int> counts, Eigen::MatrixXd X) {
  return Dataset(R, T, K, S, std::move(counts), std::move(X));
}

py::dict summary_dict(const PosteriorSummary& s) {
  py::dict params;
  for (const auto& p : s.parameters) {
    py::dict d;
    d["mean"] = p.mean;
    d["sd"] = p.sd;
    d["q2.5"] = p.q025;
    d["q25"] = p.q25;
    d["q50"] = p.q50;
    d["q75"] = p.q75;
    d["q97.5"] = p.q975;
    d["rhat"] = p.rhat;
    params[py::str(p.name)] = d;
  }
  std::vector<double> n_mean;
  for (const auto& l : s.latent) n_mean.push_back(l.mean);
  py::dict out;
  out["parameters"] = params;
  out["n_mean"] = n_mean;
  out["flagged"] = s.flagged;
  return out;
}

}  // namespace

PYBIND11_MODULE(_mnmix, m) {
  m.doc() = "Multi-species N-mixture models";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<InvalidStateError>(m, "InvalidStateError", PyExc_RuntimeError);
  py::register_exception<SamplerError>(m, "SamplerError", PyExc_RuntimeError);

  py::enum_<DetectionDim>(m, "DetectionDim")
      .value("A", DetectionDim::A)
      .value("B", DetectionDim::B)
      .value("C", DetectionDim::C);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("R"), py::arg("T"), py::arg("K"), py::arg("S"),
           py::arg("counts"), py::arg("X") = Eigen::MatrixXd())
      .def_property_readonly("sites", &Dataset::sites)
      .def_property_readonly("occasions", [](const Dataset& d) { return d.occasions(); })
      .def_property_readonly("years", &Dataset::years)
      .def_property_readonly("species", &Dataset::species)
      .def_property_readonly("counts", &Dataset::raw_counts)
      .def("y", &Dataset::y)
      .def("zero_fraction", &Dataset::zero_fraction);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init(&ModelSpec::make), py::arg("S"), py::arg("hurdle") = false,
           py::arg("ar") = false, py::arg("detection_dim") = DetectionDim::C)
      .def_readonly("hurdle", &ModelSpec::hurdle)
      .def_readonly("autoregressive", &ModelSpec::autoregressive)
      .def_property_readonly("name", &ModelSpec::variant_name);

  py::class_<SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("n_chains", &SamplerConfig::n_chains)
      .def_readwrite("n_iter", &SamplerConfig::n_iter)
      .def_readwrite("n_burn", &SamplerConfig::n_burn)
      .def_readwrite("thin", &SamplerConfig::thin)
      .def_readwrite("seed", &SamplerConfig::seed)
      .def_readwrite("rhat_threshold", &SamplerConfig::rhat_threshold)
      .def_readwrite("collapse_interval", &SamplerConfig::collapse_interval);

  m.def(
      "simulate",
      [](const ModelSpec& spec, int R, int T, int S, int K, const std::string& p_regime,
         const std::string& lambda_regime, std::optional<double> theta, std::uint64_t seed,
         int replicate) {
        Scenario sc;
        sc.R = R;
        sc.T = T;
        sc.S = S;
        sc.K = K;
        sc.p_regime = regime_from_string(p_regime);
        sc.lambda_regime = regime_from_string(lambda_regime);
        sc.theta = theta;
        sc.seed = seed;
        RngStream rng(seed, static_cast<std::uint64_t>(replicate));
        SimulatedData sim = simulate_dataset(spec, sc, rng);
        py::dict truth;
        truth["N"] = sim.truth.N.values();
        truth["mu_a"] = sim.truth.mu_a;
        truth["sigma_a"] = sim.truth.sigma_a;
        truth["p"] = sim.truth.p;
        truth["theta"] = sim.truth.theta;
        truth["phi"] = sim.truth.phi;
        return py::make_tuple(sim.data, truth);
      },
      py::arg("spec"), py::arg("R") = 10, py::arg("T") = 5, py::arg("S") = 5, py::arg("K") = 1,
      py::arg("p_regime") = "large", py::arg("lambda_regime") = "large",
      py::arg("theta") = std::nullopt, py::arg("seed") = 1, py::arg("replicate") = 0);

  m.def(
      "fit",
      [](const Dataset& d, const ModelSpec& spec, const SamplerConfig& cfg) {
        FitResult fr;
        {
          py::gil_scoped_release release;
          fr = fit(d, spec, cfg);
        }
        return summary_dict(fr.summary);
      },
      py::arg("data"), py::arg("spec"), py::arg("cfg"));

  m.def(
      "parse_counts_csv",
      [](const std::filesystem::path& path, bool wide_stops, std::vector<std::string> covariates) {
        return parse_counts_csv(path, CountSchema{wide_stops, std::move(covariates)}).data;
      },
      py::arg("path"), py::arg("wide_stops") = false,
      py::arg("covariates") = std::vector<std::string>{});

  m.def("corr_from_sigma", &corr_from_sigma);
  m.def("corr_mnm", &corr_mnm);
  m.def("corr_hurdle", &corr_hurdle);
  m.def("ccc", &ccc);
  m.def("cmd", &cmd);
  m.def("bic", &bic);
  m.def("relative_bias",
        py::overload_cast<const std::vector<double>&, const std::vector<double>&>(&relative_bias));
  m.def("mann_kendall", [](const std::vector<double>& x) {
    const MannKendallResult r = mann_kendall(x);
    py::dict d;
    d["S"] = r.S;
    d["tau"] = r.tau;
    d["var_s"] = r.var_s;
    d["z"] = r.z;
    d["p_value"] = r.p_value;
    d["exact"] = r.exact;
    return d;
  });
  m.def(
      "logpmf_latent",
      [](int n, double lambda, double theta, bool hurdle) {
        ModelSpec spec;
        spec.hurdle = hurdle;
        return logpmf_latent(n, lambda, theta, spec);
      },
      py::arg("n"), py::arg("lam"), py::arg("theta") = 0.5, py::arg("hurdle") = false);
}
