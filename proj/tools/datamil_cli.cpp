// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "datamil/harness.hpp"

using namespace datamil;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::string output;
};

RunConfig resolve(const Options& o) {
    json doc = json::object();
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw ConfigError("cannot open config " + o.config);
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError(o.config + ": " + e.what());
        }
    }
    for (const auto& s : o.overrides) apply_override(doc, s);
    if (!o.output.empty()) doc["output_dir"] = o.output;
    return run_config_from_json(doc);
}

void print_selections(const std::vector<SelectionResult>& sel) {
    for (const auto& s : sel) {
        std::cout << s.method << ": " << (s.target_only ? std::string("target only") : std::to_string(s.ids.size()) + " clusters");
        for (const auto& [k, v] : s.composition) std::cout << "  " << k << "=" << v;
        std::cout << '\n';
    }
}

void print_results(const std::vector<MethodResult>& res) {
    for (const auto& r : res)
        std::cout << r.method << ": success " << r.success_mean << "  proxy " << r.proxy_mean << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"datamil: datamodel-based data selection for imitation learning"};
    app.set_version_flag("--version", std::string(DATAMIL_VERSION));
    app.require_subcommand(1);
    Options opts;
    bool print_config = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", opts.config, "JSON run configuration");
        sub->add_option("-s,--set", opts.overrides, "override a config key, e.g. estimator.n_subsets=100")
            ->allow_extra_args(false);
        sub->add_option("-o,--output", opts.output, "run directory (overrides output_dir)");
        return sub;
    };
    auto* gen = add_common(app.add_subcommand("gen-data", "generate the prior and target datasets"));
    auto* est = add_common(app.add_subcommand("estimate", "score clusters (datamodels and similarity baselines)"));
    auto* sel = add_common(app.add_subcommand("select", "select clusters from the scores"));
    auto* tev = add_common(app.add_subcommand("train-eval", "train final policies on each selection and roll out"));
    auto* pst = add_common(app.add_subcommand("proxy-study", "compare the proxy metric with rollout success"));
    auto* rep = add_common(app.add_subcommand("report", "collect results into report.json"));
    auto* run = add_common(app.add_subcommand("run", "gen-data, estimate, select, train-eval and report"));
    auto* cfg = add_common(app.add_subcommand("config", "print the resolved configuration"));
    cfg->add_flag("--hash", print_config, "print only the config hash");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig config = resolve(opts);
        if (*gen) {
            std::cout << cmd_gen_data(config).string() << '\n';
        } else if (*est) {
            for (const auto& p : cmd_estimate(config)) std::cout << p.string() << '\n';
        } else if (*sel) {
            print_selections(cmd_select(config));
        } else if (*tev) {
            print_results(cmd_train_eval(config));
        } else if (*pst) {
            std::cout << cmd_proxy_study(config).string() << '\n';
        } else if (*rep) {
            std::cout << cmd_report(config).string() << '\n';
        } else if (*run) {
            std::cout << cmd_run(config).string() << '\n';
        } else if (*cfg) {
            if (print_config) std::cout << config_hash(config) << '\n';
            else std::cout << to_json(config).dump(2) << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const UnsupportedConfiguration& e) {
        std::cerr << "unsupported configuration: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
