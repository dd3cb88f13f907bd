#include "bicomp/config.hpp"
#include "bicomp/validation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace bicomp;

namespace {

py::dict bounds_dict(const GammaBounds& b) {
  py::dict d;
  d["gamma_up"] = b.up;
  d["gamma_dwn"] = b.dwn;
  d["gamma_upsilon"] = b.upsilon;
  d["gamma_degraded"] = b.degraded;
  d["gamma_max"] = b.gamma_max;
  d["L_tilde"] = l_tilde(b.gamma_max);
  return d;
}

py::dict report_dict(const CheckReport& r) {
  py::dict d;
  d["check"] = r.check;
  d["status"] = std::string(to_string(r.status));
  d["statistic"] = r.statistic;
  d["bound"] = r.bound;
  d["stderr"] = r.std_error;
  d["detail"] = r.detail;
  return d;
}

template <typename T, typename F>
py::array_t<T> column(const std::vector<IterRecord>& rs, F get) {
  py::array_t<T> out(static_cast<py::ssize_t>(rs.size()));
  auto view = out.template mutable_unchecked<1>();
  for (std::size_t i = 0; i < rs.size(); ++i) view(static_cast<py::ssize_t>(i)) = get(rs[i]);
  return out;
}

py::dict trace_dict(const RunTrace& t) {
  const auto& rs = t.records;
  py::dict d;
  d["algorithm"] = t.algorithm;
  d["seed"] = t.seed;
  d["status"] = std::string(to_string(t.status));
  d["warnings"] = t.warnings;
  d["k"] = column<long>(rs, [](const IterRecord& r) { return r.k; });
  d["gamma_k"] = column<double>(rs, [](const IterRecord& r) { return r.gamma_k; });
  d["excess_loss"] = column<double>(rs, [](const IterRecord& r) { return r.excess_loss; });
  d["grad_norm_sq"] = column<double>(rs, [](const IterRecord& r) { return r.grad_norm_sq; });
  d["upsilon"] = column<double>(rs, [](const IterRecord& r) { return r.upsilon; });
  d["xi"] = column<double>(rs, [](const IterRecord& r) { return r.xi; });
  d["lyapunov"] = column<double>(rs, [](const IterRecord& r) { return r.lyapunov; });
  d["bits_up_cum"] = column<std::uint64_t>(rs, [](const IterRecord& r) { return r.bits_up_cum; });
  d["bits_dwn_cum"] = column<std::uint64_t>(rs, [](const IterRecord& r) { return r.bits_dwn_cum; });
  if (!t.iterates.empty()) {
    Matrix w(static_cast<Eigen::Index>(t.iterates.size()), t.iterates.front().size());
    for (std::size_t i = 0; i < t.iterates.size(); ++i) w.row(static_cast<Eigen::Index>(i)) = t.iterates[i];
    d["iterates"] = w;
  }
  return d;
}

BatchSpec batch_of(std::optional<int> b) {
  return b ? BatchSpec::minibatch(*b) : BatchSpec::full();
}

}  // namespace

PYBIND11_MODULE(_bicomp, m) {
  m.doc() = "Simulator of distributed SGD with bidirectional compression";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  py::class_<Problem>(m, "Problem")
      .def_property_readonly("family", [](const Problem& p) { return std::string(to_string(p.family())); })
      .def_property_readonly("dim", &Problem::dim)
      .def_property_readonly("workers", &Problem::workers)
      .def_property_readonly("L", &Problem::smoothness)
      .def_property_readonly("mu", &Problem::strong_convexity)
      .def_property_readonly("L_local", &Problem::local_smoothness)
      .def_property_readonly("w_star", &Problem::w_star)
      .def_property_readonly("f_star", &Problem::f_star)
      .def_property_readonly("sigma_sq_at_opt", &Problem::sigma_sq_at_opt)
      .def_property_readonly("hetero_B_sq", &Problem::hetero_B_sq)
      .def("loss", &Problem::loss, py::arg("w"))
      .def("grad_full", &Problem::grad_full, py::arg("w"))
      .def("grad_worker", &Problem::grad_worker, py::arg("worker"), py::arg("w"))
      .def("hessian", &Problem::hessian)
      .def("features", [](const Problem& p, int i) { return p.shard(i).features; }, py::arg("worker"))
      .def("targets", [](const Problem& p, int i) { return p.shard(i).targets; }, py::arg("worker"))
      .def("to_json", [](const Problem& p) { return p.to_json().dump(); })
      .def_static("from_json", [](const std::string& s) { return Problem::from_json(nlohmann::json::parse(s)); })
      .def_static("quadratic", &Problem::quadratic, py::arg("hessian"), py::arg("center"));

  m.def(
      "synth_problem",
      [](const std::string& family, int d, int n_per_worker, int N, double delta, std::uint64_t seed,
         double label_noise, double spectrum_decay, double response_offset) {
        SynthOptions o;
        o.family = parse_family(family);
        o.dim = d;
        o.samples_per_worker = n_per_worker;
        o.workers = N;
        if (delta != 0.0) o.hetero = Heterogeneity::shifted_means(delta);
        o.seed = seed;
        o.label_noise = label_noise;
        o.spectrum_decay = spectrum_decay;
        o.response_offset = response_offset;
        return synth_problem(o);
      },
      py::arg("family") = "lsr", py::arg("d") = 20, py::arg("n_per_worker") = 200, py::arg("N") = 20,
      py::arg("delta") = 0.0, py::arg("seed") = 0, py::arg("label_noise") = 0.5,
      py::arg("spectrum_decay") = 0.0, py::arg("response_offset") = 1.0,
      "Deterministic synthetic problem; delta > 0 shifts per-worker feature means.");

  py::class_<CompressorSpec>(m, "Compressor")
      .def_static("identity", &CompressorSpec::identity)
      .def_static("quantize", &CompressorSpec::quantize, py::arg("s"))
      .def_static("sparsify", &CompressorSpec::sparsify, py::arg("p"))
      .def("omega", &CompressorSpec::omega, py::arg("d"))
      .def("__repr__", &CompressorSpec::describe)
      .def("__eq__", [](const CompressorSpec& a, const CompressorSpec& b) { return a == b; });

  m.def("bit_cost", &bit_cost, py::arg("compressor"), py::arg("d"));
  m.def(
      "compress",
      [](const CompressorSpec& c, const ParamVector& v, std::uint64_t seed) {
        Stream rng(seed);
        const Compressed out = compress(c, v, rng);
        return py::make_tuple(out.value, out.bits);
      },
      py::arg("compressor"), py::arg("v"), py::arg("seed") = 0,
      "Returns (compressed vector, bits).");

  m.def(
      "gamma_bounds",
      [](double L, double wu, double wd, int N, bool degraded) {
        return bounds_dict(gamma_bounds(L, wu, wd, N, degraded));
      },
      py::arg("L"), py::arg("omega_up"), py::arg("omega_dwn"), py::arg("N"), py::arg("degraded") = false);

  m.def(
      "phi",
      [](const std::string& variant, double gamma, double L, double wu, double wd, int N, int b,
         double alpha_dwn, double C, double K) {
        PhiParams p{gamma, L, wu, wd, N, b, alpha_dwn, C, K};
        return phi(parse_phi_variant(variant), p);
      },
      py::arg("variant"), py::arg("gamma"), py::arg("L"), py::arg("omega_up"), py::arg("omega_dwn"),
      py::arg("N") = 1, py::arg("b") = 1, py::arg("alpha_dwn") = 1.0, py::arg("C") = 1.0,
      py::arg("K") = 1.0);

  m.def(
      "run",
      [](const Problem& p, const std::string& algorithm, long iterations, std::uint64_t seed,
         std::optional<double> gamma, const CompressorSpec& up, const CompressorSpec& dwn,
         std::optional<int> batch, double participation, std::optional<double> alpha_up,
         std::optional<double> alpha_dwn, int groups, bool keep_iterates) {
        AlgoConfig cfg = make_preset(parse_algo(algorithm), up, dwn, p.dim(), p.workers(), groups);
        if (alpha_up) cfg.alpha_up = *alpha_up;
        if (alpha_dwn) cfg.alpha_dwn = *alpha_dwn;
        cfg.participation = participation;
        cfg.batch = batch_of(batch);
        validate_config(cfg, p.workers());
        cfg.gamma = GammaPolicy::constant(gamma ? *gamma : gamma_max(cfg, p));
        RunOptions o;
        o.iterations = iterations;
        o.seed = seed;
        o.keep_iterates = keep_iterates;
        RunTrace t;
        {
          py::gil_scoped_release release;
          t = run_algorithm(cfg, p, o, algorithm);
        }
        return trace_dict(t);
      },
      py::arg("problem"), py::arg("algorithm") = "mcm", py::arg("iterations") = 100, py::arg("seed") = 0,
      py::arg("gamma") = py::none(), py::arg("up") = CompressorSpec::quantize(1),
      py::arg("dwn") = CompressorSpec::quantize(1), py::arg("batch") = py::none(),
      py::arg("participation") = 1.0, py::arg("alpha_up") = py::none(), py::arg("alpha_dwn") = py::none(),
      py::arg("groups") = 1, py::arg("keep_iterates") = false,
      "One run; gamma defaults to the algorithm's gamma_max, batch to the full local dataset.");

  m.def(
      "run_config",
      [](const std::string& yaml, int jobs) {
        const LoadedConfig loaded = parse_config(yaml);
        const Problem p = synth_problem(loaded.experiment.problem);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(loaded.experiment, p, jobs);
        }
        py::dict out;
        for (std::size_t a = 0; a < r.algorithms.size(); ++a) {
          py::dict entry;
          const RunSummary& s = r.summaries[a];
          entry["saturation_level"] = s.saturation_level;
          entry["gamma_max"] = r.algorithms[a].gamma_max;
          entry["mean_log10"] = s.mean_log10;
          entry["std_log10"] = s.std_log10;
          py::list status;
          for (auto st : s.status) status.append(std::string(to_string(st)));
          entry["status"] = status;
          py::list traces;
          for (const auto& t : r.traces[a]) traces.append(trace_dict(t));
          entry["traces"] = traces;
          out[py::str(r.algorithms[a].label)] = entry;
        }
        return out;
      },
      py::arg("yaml"), py::arg("jobs") = 1, "Runs an experiment given as YAML text.");

  m.def(
      "validate",
      [](const std::string& only, long trials, std::uint64_t seed) {
        SuiteOptions o;
        o.only = only;
        o.trials = trials;
        o.seed = seed;
        std::vector<CheckReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_validation_suite(o);
        }
        py::list out;
        for (const auto& r : reports) out.append(report_dict(r));
        return out;
      },
      py::arg("only") = "", py::arg("trials") = 10'000, py::arg("seed") = 0);

  m.def(
      "check_compressor_moments",
      [](const CompressorSpec& c, int d, long trials, std::uint64_t seed) {
        return report_dict(check_compressor_moments(c, d, trials, seed));
      },
      py::arg("compressor"), py::arg("d"), py::arg("trials") = 10'000, py::arg("seed") = 0);
}
