#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "georesidual/cli.hpp"
#include "georesidual/datasets.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"
#include "georesidual/models.hpp"
#include "georesidual/trainer.hpp"
#include "georesidual/verify.hpp"

namespace py = pybind11;
namespace gr = georesidual;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

gr::numkit::Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw gr::ShapeMismatch("expected a 2-d array");
  const auto* p = a.data();
  return gr::numkit::Matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                            std::vector<double>(p, p + a.size()));
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw gr::ShapeMismatch("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

Array from_matrix(const gr::numkit::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array sequences(const std::vector<double>& v, std::size_t n, std::size_t t, std::size_t d) {
  Array out({n, t, d});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict dataset_dict(const gr::datasets::Dataset& ds) {
  py::dict d;
  d["name"] = ds.name;
  d["seed"] = ds.seed;
  d["inputs"] = sequences(ds.inputs, ds.N, ds.T, ds.d);
  d["targets"] = sequences(ds.targets, ds.N, ds.T, ds.d);
  return d;
}

gr::models::ModelConfig config_for(const std::string& kind, std::size_t task_dim, std::size_t seq_len,
                                   const std::map<std::string, std::string>& overrides) {
  auto cfg = gr::models::matched_config(gr::models::model_kind_from_string(kind), task_dim, seq_len);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

py::object opt(const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Orthogonal residual operators, models and benchmarks";

  static py::exception<gr::Error> base(m, "GeoResidualError");
  static py::exception<gr::InvalidConfig> invalid_config(m, "InvalidConfig", base.ptr());
  static py::exception<gr::InvalidInput> invalid_input(m, "InvalidInput", base.ptr());
  static py::exception<gr::ShapeMismatch> shape(m, "ShapeMismatch", base.ptr());
  static py::exception<gr::ZeroDirection> zero(m, "ZeroDirection", base.ptr());
  static py::exception<gr::DomainError> domain(m, "DomainError", base.ptr());
  static py::exception<gr::IoError> io(m, "IoError", base.ptr());
  static py::exception<gr::FormatError> format(m, "FormatError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const gr::InvalidConfig& e) {
      py::set_error(invalid_config, e.what());
    } catch (const gr::InvalidInput& e) {
      py::set_error(invalid_input, e.what());
    } catch (const gr::ShapeMismatch& e) {
      py::set_error(shape, e.what());
    } catch (const gr::ZeroDirection& e) {
      py::set_error(zero, e.what());
    } catch (const gr::DomainError& e) {
      py::set_error(domain, e.what());
    } catch (const gr::IoError& e) {
      py::set_error(io, e.what());
    } catch (const gr::FormatError& e) {
      py::set_error(format, e.what());
    } catch (const gr::Error& e) {
      py::set_error(base, e.what());
    }
  });

  // geometry
  m.def("cayley", [](const Array& u, const Array& v, double beta) {
        return from_matrix(gr::geometry::cayley(gr::geometry::SkewGenerator(to_vector(u), to_vector(v)), beta));
      }, py::arg("u"), py::arg("v"), py::arg("beta"));
  m.def("cayley_from_skew", [](const Array& a, double beta) {
        return from_matrix(gr::geometry::cayley_from_skew(to_matrix(a), beta));
      }, py::arg("skew"), py::arg("beta"));
  m.def("householder", [](const Array& k, double beta) {
        const auto v = to_vector(k);
        return from_matrix(gr::geometry::householder(v, beta).matrix);
      }, py::arg("k"), py::arg("beta"));
  m.def("gate_penalty", [](double gamma, double lambda, const std::string& variant) {
        const auto p = gr::geometry::gate_penalty(gamma, lambda, gr::geometry::gate_penalty_from_string(variant));
        return py::make_tuple(p.value, p.grad);
      }, py::arg("gamma"), py::arg("lam") = 1.0, py::arg("variant") = "product");
  m.def("negation_margin", [](const Array& q) { return gr::geometry::negation_margin(to_matrix(q)); });
  m.def("iterative_cayley_retraction", [](const Array& a, double alpha, std::size_t steps, const Array& x) {
        return from_matrix(gr::geometry::iterative_cayley_retraction(to_matrix(a), alpha, steps, to_matrix(x)));
      }, py::arg("skew"), py::arg("alpha"), py::arg("steps"), py::arg("x"));
  m.def("orthogonality_report", [](const Array& q) {
    const auto r = gr::geometry::orthogonality_report(to_matrix(q));
    py::dict d;
    d["gram_deviation"] = r.gram_deviation;
    d["det"] = r.det_value;
    d["isometry_deviation"] = r.isometry_deviation;
    d["negation_margin"] = r.negation_margin;
    return d;
  });

  // models
  m.def("count_params", [](const std::string& kind, std::size_t task_dim, std::size_t seq_len,
                           const std::map<std::string, std::string>& overrides) {
        return gr::models::count_params(config_for(kind, task_dim, seq_len, overrides));
      }, py::arg("kind"), py::arg("task_dim") = 64, py::arg("seq_len") = 127,
      py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("config_text", [](const std::string& kind, std::size_t task_dim, std::size_t seq_len,
                          const std::map<std::string, std::string>& overrides) {
        return config_for(kind, task_dim, seq_len, overrides).to_text();
      }, py::arg("kind"), py::arg("task_dim") = 64, py::arg("seq_len") = 127,
      py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("forward", [](const std::string& kind, const Array& x, std::uint64_t seed,
                      const std::map<std::string, std::string>& overrides) {
        if (x.ndim() != 3) throw gr::ShapeMismatch("expected a (batch, seq, dim) array");
        const auto b = static_cast<std::size_t>(x.shape(0)), t = static_cast<std::size_t>(x.shape(1)),
                   d = static_cast<std::size_t>(x.shape(2));
        auto model = gr::models::build_model(config_for(kind, d, t, overrides),
                                             gr::numkit::RandomStream(seed).substream("init"));
        gr::ActivationTensor in(b, t, d);
        std::copy(x.data(), x.data() + x.size(), in.data.data());
        const auto res = model.forward(in);
        Array out({b, t, d});
        std::copy(res.output.data.data(), res.output.data.data() + res.output.data.size(), out.mutable_data());
        return py::make_tuple(out, res.gammas);
      }, py::arg("kind"), py::arg("x"), py::arg("seed") = 0,
      py::arg("overrides") = std::map<std::string, std::string>{});

  // datasets
  m.def("generate", [](const std::string& name, std::uint64_t seed, bool fast, std::size_t samples) {
        const auto s = gr::cli::make_split({name, seed, fast, samples});
        return py::make_tuple(dataset_dict(s.train), dataset_dict(s.val));
      }, py::arg("name"), py::arg("seed") = 42, py::arg("fast") = true, py::arg("samples") = 500);
  m.def("read_dataset", [](const std::string& path) { return dataset_dict(gr::datasets::read_dataset(path)); });

  // training
  m.def("train", [](const std::string& kind, const std::string& dataset, std::uint64_t seed, std::size_t iters,
                    std::size_t batch, std::uint64_t data_seed, bool fast,
                    const std::map<std::string, std::string>& overrides) {
        gr::trainer::RunRecord rec;
        {
          py::gil_scoped_release release;
          const auto s = gr::cli::make_split({dataset, data_seed, fast, 500});
          auto opts = gr::cli::profile_options(fast);
          opts.iters = iters;
          opts.schedule.decay_end = iters;
          opts.schedule.warmup = std::min<std::size_t>(100, iters / 5);
          opts.batch = batch;
          rec = gr::trainer::train_run(config_for(kind, s.train.d, s.train.T, overrides), s.train, s.val, seed, opts);
        }
        py::dict d;
        d["status"] = rec.status;
        d["params"] = rec.params;
        d["val_loss"] = rec.final.val_loss;
        d["norm_deviation"] = opt(rec.final.norm_deviation);
        d["cosine_alignment"] = opt(rec.final.cosine_alignment);
        d["jsonl"] = gr::trainer::to_jsonl(rec);
        return d;
      }, py::arg("kind"), py::arg("dataset"), py::arg("seed") = 42, py::arg("iters") = 500, py::arg("batch") = 64,
      py::arg("data_seed") = 42, py::arg("fast") = true, py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("reflection_diagnostic", [](const std::string& kind, std::size_t samples, std::uint64_t seed,
                                    std::size_t iters) {
        gr::trainer::DiagnosticRecord r;
        {
          py::gil_scoped_release release;
          r = gr::trainer::reflection_diagnostic(gr::trainer::diagnostic_kind_from_string(kind), samples, seed, iters);
        }
        py::dict d;
        d["final_param"] = r.final_param;
        d["final_alignment"] = r.final_alignment;
        d["converged"] = r.converged;
        return d;
      }, py::arg("kind"), py::arg("samples") = 500, py::arg("seed") = 42, py::arg("iters") = 2000);

  // verification and the command line
  m.def("verify", [] {
    py::list out;
    for (const auto& p : gr::verify::run_all()) {
      py::dict d;
      d["suite"] = p.suite;
      d["name"] = p.name;
      d["measured"] = p.measured;
      d["relation"] = gr::verify::relation_symbol(p.relation);
      d["bound"] = p.bound;
      d["passed"] = p.passed;
      out.append(d);
    }
    return out;
  });
  m.def("cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "geo-residual");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = gr::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      }, py::arg("args"));
}
