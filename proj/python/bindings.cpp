// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "datamil/harness.hpp"
#include "datamil/stats.hpp"

namespace py = pybind11;
using namespace datamil;

namespace {

std::vector<Vector> column(const Trajectory& t, bool states) {
    std::vector<Vector> out;
    out.reserve(t.pairs.size());
    for (const auto& p : t.pairs) out.push_back(states ? p.state : p.action);
    return out;
}

// Stage commands take the configuration as JSON text; the Python layer handles dicts.
RunConfig config_from(const std::string& text) {
    try {
        return run_config_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(e.what());
    }
}

template <class F>
auto stage(F f) {
    return [f](const std::string& config) {
        const RunConfig c = config_from(config);
        py::gil_scoped_release release;
        return f(c);
    };
}

std::vector<SubsetOutcome> outcomes_from(const std::vector<std::vector<double>>& masks, const std::vector<double>& y) {
    if (masks.size() != y.size()) throw Error("masks and outcomes differ in length");
    std::vector<SubsetOutcome> out;
    for (std::size_t j = 0; j < masks.size(); ++j) {
        SubsetMask m{masks[j]};
        m.validate();
        out.push_back({std::move(m), y[j]});
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Datamodels for imitation-learning data selection";
    m.attr("__version__") = DATAMIL_VERSION;

    auto error = py::register_exception<Error>(m, "DataMILError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<UnsupportedConfiguration>(m, "UnsupportedConfiguration", error.ptr());

    py::class_<toyenv::EnvSpec>(m, "EnvSpec")
        .def(py::init<>())
        .def_readwrite("num_tasks", &toyenv::EnvSpec::num_tasks)
        .def_readwrite("dt", &toyenv::EnvSpec::dt)
        .def_readwrite("gain", &toyenv::EnvSpec::gain)
        .def_readwrite("action_clip", &toyenv::EnvSpec::action_clip)
        .def_readwrite("success_radius", &toyenv::EnvSpec::success_radius)
        .def_readwrite("max_steps", &toyenv::EnvSpec::max_steps)
        .def_readwrite("goal_conditioned", &toyenv::EnvSpec::goal_conditioned)
        .def("goal", &toyenv::EnvSpec::goal, py::arg("task_id"));

    py::class_<Trajectory>(m, "Trajectory")
        .def_readonly("traj_id", &Trajectory::traj_id)
        .def_readonly("task_id", &Trajectory::task_id)
        .def_property_readonly("source_tag", [](const Trajectory& t) { return to_string(t.source_tag); })
        .def_property_readonly("states", [](const Trajectory& t) { return column(t, true); })
        .def_property_readonly("actions", [](const Trajectory& t) { return column(t, false); })
        .def("__len__", &Trajectory::size)
        .def("__repr__", [](const Trajectory& t) {
            return "<Trajectory id=" + std::to_string(t.traj_id) + " task=" + std::to_string(t.task_id) + " " +
                   to_string(t.source_tag) + " len=" + std::to_string(t.size()) + ">";
        });

    py::class_<Cluster>(m, "Cluster")
        .def_readonly("cluster_id", &Cluster::cluster_id)
        .def_readonly("traj_id", &Cluster::traj_id)
        .def_readonly("start_step", &Cluster::start_step)
        .def_readonly("length", &Cluster::length);

    m.def("expert_action", &toyenv::expert_action, py::arg("spec"), py::arg("pos"), py::arg("goal"));
    m.def(
        "generate_prior",
        [](const toyenv::EnvSpec& spec, int n_expert, int n_noisy, double sigma, std::uint64_t seed) {
            toyenv::PriorOptions o;
            o.n_expert_per_task = n_expert;
            o.n_noisy_per_task = n_noisy;
            o.noise_sigma = sigma;
            o.seed = seed;
            return toyenv::generate_prior(spec, o);
        },
        py::arg("spec") = toyenv::EnvSpec{}, py::arg("n_expert_per_task") = 5, py::arg("n_noisy_per_task") = 15,
        py::arg("noise_sigma") = 0.5, py::arg("seed") = 0);
    m.def("generate_target", &toyenv::generate_target, py::arg("spec"), py::arg("task_id"), py::arg("n_demos"),
          py::arg("seed"), py::arg("first_traj_id") = 0);
    m.def("save_trajectories", &save_trajectories, py::arg("trajectories"), py::arg("path"));
    m.def("load_trajectories", &load_trajectories, py::arg("path"));
    m.def(
        "make_clusters",
        [](const std::vector<Trajectory>& trajs, const std::string& granularity) {
            return make_clusters(trajs, Granularity::parse(granularity));
        },
        py::arg("trajectories"), py::arg("granularity") = "trajectory");

    m.def(
        "regression_estimate",
        [](const std::vector<std::vector<double>>& masks, const std::vector<double>& outcomes, double lam,
           bool fit_offset) {
            const auto dm = regression_estimate(outcomes_from(masks, outcomes), lam, fit_offset);
            return py::make_tuple(dm.tau, dm.offset);
        },
        py::arg("masks"), py::arg("outcomes"), py::arg("lam") = 0.0, py::arg("fit_offset") = false,
        "Least-squares datamodel; returns (tau, offset).");
    m.def(
        "trace_normalized_ridge",
        [](const std::vector<std::vector<double>>& masks, double scale) {
            return trace_normalized_ridge(outcomes_from(masks, std::vector<double>(masks.size(), 0.0)), scale);
        },
        py::arg("masks"), py::arg("scale") = 1e-3);
    m.def(
        "select_top_fraction",
        [](const Vector& scores, double fraction, bool require_positive) {
            return select_top_fraction(ScoreTable::from_scores(scores, "python", "python"), {fraction, require_positive});
        },
        py::arg("scores"), py::arg("fraction") = 0.10, py::arg("require_positive") = false);
    m.def("random_select", &random_select, py::arg("n"), py::arg("fraction"), py::arg("seed"));
    m.def("spearman", [](const Vector& x, const Vector& y) { return stats::spearman(x, y); });
    m.def("pearson", [](const Vector& x, const Vector& y) { return stats::pearson(x, y); });

    m.def("_default_config", [] { return to_json(RunConfig{}).dump(); });
    m.def("_load_config", [](const std::filesystem::path& p) { return to_json(load_run_config(p)).dump(); });
    m.def("_normalize_config", [](const std::string& text) { return to_json(config_from(text)).dump(); });
    m.def("_config_hash", [](const std::string& text) { return config_hash(config_from(text)); });
    m.def("_gen_data", stage([](const RunConfig& c) { return cmd_gen_data(c); }));
    m.def("_estimate", stage([](const RunConfig& c) { return cmd_estimate(c); }));
    m.def("_select", stage([](const RunConfig& c) {
        std::vector<std::vector<int>> ids;
        for (const auto& s : cmd_select(c)) ids.push_back(s.ids);
        return ids;
    }));
    m.def("_train_eval", stage([](const RunConfig& c) {
        cmd_train_eval(c);
        return c.output_dir / "results";
    }));
    m.def("_proxy_study", stage([](const RunConfig& c) { return cmd_proxy_study(c); }));
    m.def("_report", stage([](const RunConfig& c) { return cmd_report(c); }));
    m.def("_run", stage([](const RunConfig& c) { return cmd_run(c); }));
    m.def("_strip_volatile", [](const std::string& text) { return strip_volatile(nlohmann::json::parse(text)).dump(); });
}
