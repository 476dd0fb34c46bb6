#include "fairstage/clicklog.hpp"
#include "fairstage/config.hpp"
#include "fairstage/corpus.hpp"
#include "fairstage/error.hpp"
#include "fairstage/estimator.hpp"
#include "fairstage/eval.hpp"
#include "fairstage/relevance.hpp"
#include "fairstage/selector.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace fairstage;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fair first-stage threshold-policy selection";

    py::register_exception<FingerprintMismatch>(m, "FingerprintMismatch", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("groups", &Dataset::groups)
        .def_readonly("feature_count", &Dataset::feature_count)
        .def_property_readonly("num_queries", [](const Dataset& d) { return d.queries.size(); })
        .def("item_count", &Dataset::item_count)
        .def("average_relevant",
             [](const Dataset& d, const std::string& g) { return average_relevant(d, std::string_view(g)); })
        .def("to_letor", [](const Dataset& d) {
            std::ostringstream out;
            write_letor(out, d);
            return out.str();
        });

    m.def("parse_letor", [](const std::string& text) {
        std::istringstream in(text);
        auto d = parse_letor(in);
        binarize(d);
        return d;
    }, py::arg("text"), "Parse LETOR text and binarize its labels");
    m.def("assign_groups", &assign_groups, py::arg("dataset"), py::arg("feature_index"));
    m.def("synthetic_dataset", [](std::uint64_t seed, std::size_t num_queries) {
        return synth_generate(default_synth_config(seed, num_queries)).dataset;
    }, py::arg("seed") = 0, py::arg("num_queries") = 10000);

    py::class_<SplitResult>(m, "SplitResult")
        .def_readonly("train", &SplitResult::train)
        .def_readonly("sim", &SplitResult::sim)
        .def_readonly("test", &SplitResult::test);
    m.def("split", [](const Dataset& d, double train, double sim, double test, std::uint64_t seed) {
        return split(d, SplitSpec{train, sim, test, seed});
    }, py::arg("dataset"), py::arg("train") = 0.01, py::arg("sim") = 0.69, py::arg("test") = 0.30,
       py::arg("seed") = 0);

    py::class_<RelevanceModel>(m, "RelevanceModel")
        .def_static("constant", &RelevanceModel::constant)
        .def_static("logistic", &RelevanceModel::logistic, py::arg("weights"), py::arg("intercept"))
        .def_static("deserialize", [](const std::string& text) { return RelevanceModel::deserialize(text); },
                    py::arg("text"))
        .def("serialize", &RelevanceModel::serialize)
        .def_static("deserialize", [](const std::string& s) { return RelevanceModel::deserialize(s); })
        .def("fingerprint", &RelevanceModel::fingerprint);
    m.def("train_logistic", [](const Dataset& d, double lr, int iterations, double l2) {
        return train_logistic(d, TrainOptions{lr, iterations, l2});
    }, py::arg("train"), py::arg("learning_rate") = 0.1, py::arg("iterations") = 1000, py::arg("l2") = 1e-4);

    py::class_<InteractionLog>(m, "InteractionLog")
        .def_static("from_csv", [](const std::string& text) {
            std::istringstream in(text);
            return InteractionLog::read_csv(in);
        }, py::arg("text"))
        .def("__len__", &InteractionLog::size)
        .def_property_readonly("groups", &InteractionLog::groups)
        .def_property_readonly("fingerprint", &InteractionLog::fingerprint)
        .def("slate", [](const InteractionLog& log, std::size_t i, std::size_t g) {
            py::list out;
            for (const auto& p : log.slate(i, g)) out.append(py::make_tuple(p.item, p.click, p.propensity));
            return out;
        })
        .def("to_csv", [](const InteractionLog& log) {
            std::ostringstream out;
            log.write_csv(out);
            return out.str();
        });
    m.def("simulate_log", [](const Dataset& sim, const RelevanceModel& model, std::vector<std::size_t> t_max,
                             std::size_t m, std::uint64_t seed) { return simulate_log(sim, model, t_max, m, seed); },
          py::arg("sim"), py::arg("model"), py::arg("t_max"), py::arg("m"), py::arg("seed") = 0);

    m.def("sample_variance", [](std::vector<double> z) { return sample_variance(z); });
    m.def("lower_bound_from", &lower_bound_from, py::arg("estimate"), py::arg("variance"), py::arg("m"),
          py::arg("t"), py::arg("lam"), py::arg("alpha"));
    m.def("upper_bound_from", &upper_bound_from, py::arg("estimate"), py::arg("variance"), py::arg("bias_cap"),
          py::arg("m"), py::arg("t"), py::arg("lam"), py::arg("alpha"));
    m.def("cipw_estimate", &cipw_estimate, py::arg("log"), py::arg("group"), py::arg("t"), py::arg("lam"));
    m.def("lower_bound", &lower_bound, py::arg("log"), py::arg("group"), py::arg("t"), py::arg("lam"),
          py::arg("alpha"));
    m.def("upper_bound", &upper_bound, py::arg("log"), py::arg("group"), py::arg("t"), py::arg("lam"),
          py::arg("alpha"));

    m.def("union_threshold", [](std::vector<double> lbs, double target) { return union_threshold(lbs, target); });
    m.def("monotone_threshold",
          [](std::vector<double> lbs, double target) { return monotone_threshold(lbs, target); });
    m.def("oracle_threshold", [](std::vector<double> u, double target, std::size_t t_max) {
        const auto r = oracle_threshold(u, target, t_max);
        return py::make_tuple(r.threshold, r.assumption_holds);
    });
    m.def("equal_opportunity_targets",
          [](std::vector<double> ar, double total) { return equal_opportunity_targets(ar, total); },
          py::arg("average_relevant"), py::arg("total") = 5.0);
    m.def("select", [](const InteractionLog& log, const RelevanceModel& model, std::vector<double> targets,
                       std::vector<std::size_t> t_max, double alpha, const std::string& rule, double lam) {
        const auto s = algorithm1(log, model, {targets, t_max, alpha, parse_rule(rule), lam});
        py::list out;
        for (const auto& g : s.per_group) {
            py::dict d;
            d["threshold"] = g.threshold;
            d["target"] = g.target;
            d["t_max"] = g.t_max;
            d["gap"] = g.gap.gap;
            d["gap_upper"] = g.gap.upper;
            d["gap_lower_previous"] = g.gap.lower_previous;
            out.append(d);
        }
        return out;
    }, py::arg("log"), py::arg("model"), py::arg("targets"), py::arg("t_max"), py::arg("alpha") = 0.1,
       py::arg("rule") = "monotone", py::arg("lam") = 100.0);

    m.def("evaluate_thresholds", [](const Dataset& test, const RelevanceModel& model,
                                    std::vector<std::size_t> thresholds) {
        py::list out;
        for (const auto& g : evaluate_policy(FixedThresholds{thresholds}, model, test)) {
            out.append(py::make_tuple(g.relevant, g.selected));
        }
        return out;
    }, "Per group (mean selected relevant, mean selected) on a test split");

    m.def("run_pipeline", [](const Dataset& d, std::uint64_t seed, std::size_t m_requests, double lam,
                             double alpha, std::size_t t_max, double epsilon, std::vector<std::string> methods) {
        PipelineConfig config;
        config.m = m_requests;
        config.lambda = lam;
        config.alpha = alpha;
        config.default_t_max = t_max;
        config.epsilon = epsilon;
        if (!methods.empty()) {
            config.methods.clear();
            for (const auto& name : methods) config.methods.push_back(parse_method(name));
        }
        std::vector<double> ar;
        for (std::size_t g = 0; g < d.groups.size(); ++g) ar.push_back(average_relevant(d, g));
        const auto targets = equal_opportunity_targets(ar, config.target_total);
        const auto r = run_pipeline(d, config, seed, targets);
        py::list out;
        for (const auto& run : r.runs) {
            py::dict row;
            row["method"] = std::string(method_name(run.method));
            row["er"] = run.er;
            row["css"] = run.css;
            row["t_hat"] = run.t_hat;
            row["error"] = run.error;
            out.append(row);
        }
        return out;
    }, py::arg("dataset"), py::arg("seed") = 0, py::arg("m") = 100000, py::arg("lam") = 100.0,
       py::arg("alpha") = 0.1, py::arg("t_max") = 50, py::arg("epsilon") = 0.0,
       py::arg("methods") = std::vector<std::string>{});
}
