#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sentimtl/augment.hpp"
#include "sentimtl/awl.hpp"
#include "sentimtl/data.hpp"
#include "sentimtl/experiment.hpp"
#include "sentimtl/metrics.hpp"
#include "sentimtl/synth.hpp"
#include "sentimtl/trainer.hpp"

namespace py = pybind11;
using namespace sentimtl;

namespace {

std::vector<Polarity> labels(const std::vector<std::string>& names) {
  std::vector<Polarity> out;
  for (const auto& n : names) {
    auto p = parse_polarity(n);
    if (!p) throw DataError("unknown polarity '" + n + "'");
    out.push_back(*p);
  }
  return out;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["n_all"] = r.n_all;
  d["n_implicit"] = r.n_implicit;
  d["all_accuracy"] = r.all.accuracy;
  d["all_macro_f1"] = r.all.macro_f1;
  d["isa_accuracy"] = r.isa ? py::cast(r.isa->accuracy) : py::none();
  d["isa_macro_f1"] = r.isa ? py::cast(r.isa->macro_f1) : py::none();
  d["confusion"] = r.confusion;
  return d;
}

TrainConfig make_config(const std::string& alf, std::optional<TaskVector> fixed_weights,
                        const std::string& strategy, std::size_t epochs, std::size_t batch_size,
                        double learning_rate, std::uint64_t seed, std::size_t embedding_dim) {
  TrainConfig c;
  if (alf == "fixed") {
    if (!fixed_weights) throw DataError("alf='fixed' needs fixed_weights");
    c.alf = AlfVariant::fixed(*fixed_weights);
  } else {
    c.alf = parse_alf_kind(alf) == AlfVariant::Kind::alf1 ? AlfVariant::alf1() : AlfVariant::alf2();
  }
  c.strategy = parse_dawl_strategy(strategy);
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.learning_rate = learning_rate;
  c.seed = seed;
  c.embedding_dim = embedding_dim;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task implicit sentiment analysis toolkit";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<Instance>(m, "Instance")
      .def_readonly("id", &Instance::id)
      .def_readonly("sentence", &Instance::sentence)
      .def_readonly("target", &Instance::target)
      .def_property_readonly("polarity", [](const Instance& i) { return std::string(to_string(i.polarity)); })
      .def_readonly("implicit", &Instance::implicit)
      .def_property_readonly("aspect", [](const Instance& i) { return i.aux ? py::cast(i.aux->aspect) : py::none(); })
      .def_property_readonly("opinion", [](const Instance& i) { return i.aux ? py::cast(i.aux->opinion) : py::none(); })
      .def_property_readonly("aspect_confidence",
                             [](const Instance& i) { return i.aux ? py::cast(i.aux->aspect_confidence) : py::none(); })
      .def_property_readonly("opinion_confidence",
                             [](const Instance& i) { return i.aux ? py::cast(i.aux->opinion_confidence) : py::none(); })
      .def("to_json", &to_jsonl_line);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("name", &Dataset::name)
      .def("__len__", &Dataset::size)
      .def("__getitem__", [](const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error();
        return d[i];
      });

  m.def("load_jsonl", [](const std::filesystem::path& p) { return load_jsonl(p); }, py::arg("path"));
  m.def("save_jsonl", &save_jsonl, py::arg("dataset"), py::arg("path"));
  m.def(
      "generate_synthetic",
      [](std::uint64_t seed, std::size_t n_train, std::size_t n_test, double noise) {
        SynthConfig c;
        c.seed = seed;
        c.n_train = n_train;
        c.n_test = n_test;
        c.noise = noise;
        SynthData d = generate_synthetic(c);
        return py::make_tuple(std::move(d.train), std::move(d.test));
      },
      py::arg("seed") = 2024, py::arg("n_train") = 200, py::arg("n_test") = 100, py::arg("noise") = 0.3);

  m.def(
      "accuracy", [](const std::vector<std::string>& g, const std::vector<std::string>& p) {
        return accuracy(labels(g), labels(p));
      },
      py::arg("gold"), py::arg("pred"));
  m.def(
      "macro_f1", [](const std::vector<std::string>& g, const std::vector<std::string>& p) {
        return macro_f1(labels(g), labels(p));
      },
      py::arg("gold"), py::arg("pred"));

  m.def("clip_confidence", &clip_confidence, py::arg("raw"));
  m.def(
      "markov_confidence",
      [](const std::vector<double>& logprobs) {
        BackendResponse r;
        r.token_logprobs.emplace();
        for (double lp : logprobs) r.token_logprobs->push_back({"", lp});
        return estimate_confidence(r, ConfidenceMethod::markov_chain);
      },
      py::arg("logprobs"));

  m.def(
      "stationary_sigma",
      [](const std::string& alf, double loss) {
        return stationary_sigma(parse_alf_kind(alf) == AlfVariant::Kind::alf1 ? AlfVariant::alf1() : AlfVariant::alf2(),
                                loss);
      },
      py::arg("alf"), py::arg("loss"));
  m.def(
      "descend_sigma",
      [](const TaskVector& losses, const std::string& alf, double lr, std::size_t max_steps) {
        const auto r = descend_sigma(
            losses, parse_alf_kind(alf) == AlfVariant::Kind::alf1 ? AlfVariant::alf1() : AlfVariant::alf2(), lr,
            max_steps);
        return py::make_tuple(r.variances, r.steps, r.converged);
      },
      py::arg("losses"), py::arg("alf"), py::arg("lr") = 0.1, py::arg("max_steps") = 100000);

  m.def(
      "augment_with_mock",
      [](const Dataset& d, const std::filesystem::path& script, const std::string& method, std::size_t max_epochs,
         std::size_t parallelism) {
        MockBackend mock = MockBackend::from_file(script);
        py::gil_scoped_release release;
        AugmentOutcome out = augment_dataset(d, mock, parse_confidence_method(method), max_epochs, parallelism);
        return out.dataset;
      },
      py::arg("dataset"), py::arg("script"), py::arg("method") = "prompt", py::arg("max_epochs") = 3,
      py::arg("parallelism") = 1);

  m.def(
      "train_and_evaluate",
      [](const Dataset& train_set, const Dataset& test_set, const std::string& alf,
         std::optional<TaskVector> fixed_weights, const std::string& strategy, std::size_t epochs,
         std::size_t batch_size, double lr, std::uint64_t seed, std::size_t dim,
         std::optional<std::filesystem::path> checkpoint, std::optional<std::filesystem::path> trajectory) {
        const TrainConfig c = make_config(alf, fixed_weights, strategy, epochs, batch_size, lr, seed, dim);
        EvalResult r;
        {
          py::gil_scoped_release release;
          const FitResult fitted = fit(train_set, Dataset(), c,
                                       TrainOutputs{checkpoint.value_or(std::filesystem::path()),
                                                    trajectory.value_or(std::filesystem::path()), nullptr});
          r = evaluate(fitted.model, fitted.vocab, test_set);
        }
        return eval_dict(r);
      },
      py::arg("train"), py::arg("test"), py::arg("alf") = "alf2", py::arg("fixed_weights") = py::none(),
      py::arg("strategy") = "output", py::arg("epochs") = 30, py::arg("batch_size") = 32, py::arg("lr") = 1e-2,
      py::arg("seed") = 42, py::arg("dim") = 16, py::arg("checkpoint") = py::none(),
      py::arg("trajectory") = py::none());

  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& checkpoint, const Dataset& d) {
        const Checkpoint c = load_checkpoint(checkpoint, CheckpointMode::eval);
        return eval_dict(evaluate(c.model, c.vocab, d));
      },
      py::arg("checkpoint"), py::arg("dataset"));
}
