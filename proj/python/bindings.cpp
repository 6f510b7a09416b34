#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "concrete/acceptance.hpp"
#include "concrete/relaxations.hpp"
#include "concrete/train.hpp"

namespace py = pybind11;
using namespace concrete;

PYBIND11_MODULE(pyconcrete, m) {
    m.doc() = "Concrete relaxations of discrete latent variable models";

    m.def(
        "concrete_sample",
        [](std::vector<double> logits, double lambda, std::uint64_t seed, std::size_t count) {
            RngStream rng(seed, 0);
            const auto alpha = LocationVector::from_logits(std::move(logits));
            std::vector<std::vector<double>> out;
            out.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                const SimplexPoint x = concrete_sample(alpha, Temperature{lambda}, rng);
                out.emplace_back(x.coords().begin(), x.coords().end());
            }
            return out;
        },
        py::arg("logits"), py::arg("temperature"), py::arg("seed") = 1, py::arg("count") = 1);
    m.def(
        "concrete_log_density",
        [](std::vector<double> logits, double lambda, std::vector<double> x) {
            return concrete_log_density(LocationVector::from_logits(std::move(logits)), Temperature{lambda},
                                        SimplexPoint(std::move(x)));
        },
        py::arg("logits"), py::arg("temperature"), py::arg("x"));
    m.def(
        "binary_concrete_log_density",
        [](double logit, double lambda, double x) {
            return binary_concrete_log_density(BinaryLocation::from_logit(logit), Temperature{lambda}, x);
        },
        py::arg("logit"), py::arg("temperature"), py::arg("x"));
    m.def(
        "parse_model", [](const std::string& text, std::size_t arity) { return parse_model_spec(text, arity).to_string(); },
        py::arg("text"), py::arg("arity") = 2);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("model", &TrainConfig::model)
        .def_readwrite("arity", &TrainConfig::arity)
        .def_property(
            "task", [](const TrainConfig& c) { return std::string(to_string(c.task)); },
            [](TrainConfig& c, const std::string& s) { c.task = parse_task_kind(s); })
        .def_property(
            "estimator", [](const TrainConfig& c) { return std::string(to_string(c.estimator)); },
            [](TrainConfig& c, const std::string& s) { c.estimator = parse_estimator(s); })
        .def_readwrite("data", &TrainConfig::data)
        .def_readwrite("data_dir", &TrainConfig::data_dir)
        .def_readwrite("m_train", &TrainConfig::m_train)
        .def_readwrite("m_eval", &TrainConfig::m_eval)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("batch", &TrainConfig::batch)
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("lambda_post", &TrainConfig::lambda_post)
        .def_readwrite("lambda_prior", &TrainConfig::lambda_prior)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("centering", &TrainConfig::centering)
        .def_readwrite("eval_every", &TrainConfig::eval_every)
        .def_readwrite("train_eval_rows", &TrainConfig::train_eval_rows)
        .def_readwrite("out", &TrainConfig::out);

    m.def(
        "train",
        [](TrainConfig cfg) {
            cfg.resolve();
            const TrainResult r = [&] {
                py::gil_scoped_release release;
                return train(cfg);
            }();
            py::list rows;
            for (const auto& row : r.metrics) {
                py::dict d;
                d["step"] = row.step;
                d["train_relaxed"] = row.train_relaxed;
                d["train_discrete"] = row.train_discrete;
                d["eval_discrete"] = row.eval_discrete;
                rows.append(d);
            }
            py::dict out;
            out["initial_test_nll"] = r.initial_test_nll;
            out["final_test_nll"] = r.final_test_nll;
            out["final_test_relaxed"] = r.final_test_relaxed;
            out["metrics"] = rows;
            return out;
        },
        py::arg("config"));

    m.def(
        "verify",
        [](bool include_training) {
            std::ostringstream log;
            const AcceptanceReport report = run_acceptance(log, {.include_training = include_training});
            py::list out;
            for (const auto& r : report.results) {
                py::dict d;
                d["id"] = r.id;
                d["name"] = r.name;
                d["passed"] = r.passed;
                d["seconds"] = r.seconds;
                d["detail"] = r.detail;
                out.append(d);
            }
            return out;
        },
        py::arg("include_training") = false);
}
