// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "datamil/serialize.hpp"
#include "datamil/stats.hpp"

namespace datamil {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

TrainConfig make_train(OptimizerKind opt, int steps, double lr, std::vector<int> hidden) {
    TrainConfig c;
    c.optimizer = opt;
    c.steps = steps;
    c.learning_rate = lr;
    c.batch_size = 64;
    c.loss = LossKind::nll;
    c.policy.hidden = std::move(hidden);
    c.policy.head = Head::gaussian_learned_logstd;
    c.cotrain = CotrainConfig{{}, 0.5};
    return c;
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing input " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string hash_of(const json& j) { return hex64(fnv1a64(j.dump())); }

bool is_similarity(const std::string& m) { return m == "sr" || m == "ar" || m == "br"; }
bool needs_scores(const std::string& m) { return m == "datamil" || is_similarity(m); }

std::string data_hash(const RunConfig& c) {
    json d = to_json(c);
    return hash_of({{"env", d["env"]}, {"data", d["data"]}, {"granularity", d["granularity"]}});
}

std::string score_hash(const RunConfig& c, const std::string& method) {
    json d = to_json(c);
    json parts = {{"data", data_hash(c)}, {"method", method}};
    if (method == "datamil") {
        parts["estimator"] = d["estimator"];
        parts["proxy"] = d["proxy"];
    } else {
        parts["window"] = c.selection.similarity_window;
    }
    return hash_of(parts);
}

std::string selection_hash(const RunConfig& c, const std::string& method) {
    json parts = {{"method", method},
                  {"fraction", c.selection.fraction},
                  {"require_positive", c.selection.require_positive},
                  {"random_seed", c.selection.random_seed},
                  {"upstream", needs_scores(method) ? score_hash(c, method) : data_hash(c)}};
    return hash_of(parts);
}

std::string result_hash(const RunConfig& c, const std::string& method) {
    json d = to_json(c);
    return hash_of({{"selection", selection_hash(c, method)}, {"final", d["final"]}, {"proxy", d["proxy"]}});
}

void expect_hash(const json& j, const std::string& expected, const fs::path& path, const char* stage) {
    if (j.value("hash", std::string()) != expected)
        throw Error("stale artifact " + path.string() + " (does not match the current config); rerun " + stage);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void record_timing(const RunConfig& c, const std::string& stage, double seconds) {
    const fs::path path = c.output_dir / "timing.json";
    json t = fs::exists(path) ? read_json(path) : json::object();
    t[stage] = seconds;
    write_json(t, path);
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

void prepare_dirs(const RunConfig& c) {
    std::error_code ec;
    for (const char* sub : {"data", "scores", "selections", "checkpoints", "results"}) {
        fs::create_directories(c.output_dir / sub, ec);
        if (ec) throw Error("cannot create run directory " + (c.output_dir / sub).string() + ": " + ec.message());
    }
    json snap = to_json(c);
    snap["config_hash"] = config_hash(c);
    write_json(snap, c.output_dir / "config.snapshot");
}

/// Target trajectories for proxy evaluation and for co-training/mixing.
struct TargetUse {
    std::vector<Trajectory> proxy;
    std::vector<Trajectory> cotrain;
    std::vector<Trajectory> mix_in;
};

TargetUse target_use(const RunConfig& c, const std::vector<Trajectory>& target) {
    TargetUse u;
    if (!c.estimator.shift_mitigation) {
        u.proxy = target;
        u.cotrain = target;
        return u;
    }
    auto split = split_target(target, c.estimator.split_seed);
    u.proxy = split.evaluation_half;
    if (c.estimator.train.cotrain) u.cotrain = split.estimation_half;
    else u.mix_in = split.estimation_half;
    return u;
}

SelectionResult read_selection(const RunConfig& c, const std::string& method) {
    const fs::path path = c.output_dir / "selections" / (method + ".json");
    const json j = read_json(path);
    expect_hash(j, selection_hash(c, method), path, "select");
    SelectionResult s;
    s.method = method;
    s.ids = j.at("ids").get<std::vector<int>>();
    s.target_only = j.at("target_only").get<bool>();
    s.composition = j.at("composition").get<std::map<std::string, double>>();
    return s;
}

json method_result_json(const MethodResult& r) {
    return {{"success_mean", r.success_mean},
            {"success_per_seed", r.success},
            {"proxy_mean", r.proxy_mean},
            {"proxy_per_seed", r.proxy}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig::RunConfig() {
    env.goal_conditioned = false;
    estimator.train = make_train(OptimizerKind::gd_full_batch, 100, 0.05, {16, 16});
    final_policy.train = make_train(OptimizerKind::adam, 1000, 1e-2, {64, 64});
    proxy_study.train = make_train(OptimizerKind::adam, 1000, 1e-2, {32, 32});
}

void RunConfig::validate() const {
    try {
        env.validate();
        estimator.train.validate();
        final_policy.train.validate();
        proxy_study.train.validate();
        SelectionConfig{selection.fraction, selection.require_positive}.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (data.n_expert_per_task < 0 || data.n_noisy_per_task < 0) throw ConfigError("data counts must be >= 0");
    if (data.n_target_demos < 1) throw ConfigError("data.n_target_demos must be >= 1");
    if (data.target_task < 0 || data.target_task >= env.num_tasks) throw ConfigError("data.target_task out of range");
    if (!(data.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
    if (estimator.n_subsets < 3) throw ConfigError("estimator.n_subsets must be >= 3");
    if (!(estimator.p > 0.0 && estimator.p < 1.0)) throw ConfigError("estimator.p must be in (0, 1)");
    if (estimator.n_rollouts < 1 || final_policy.n_rollouts < 1 || proxy_study.n_rollouts < 1)
        throw ConfigError("rollout counts must be >= 1");
    if (selection.similarity_window < 1) throw ConfigError("selection.similarity_window must be >= 1");
    if (selection.methods.empty()) throw ConfigError("selection.methods is empty");
    for (const auto& m : selection.methods)
        if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end())
            throw ConfigError("unknown selection method '" + m + "'");
    if (final_policy.seeds.empty()) throw ConfigError("final.seeds is empty");
    if (proxy_study.n_subsets < 3) throw ConfigError("proxy_study.n_subsets must be >= 3");
    if (estimator.kind == EstimatorKind::metagradient && estimator.target != TargetKind::proxy_loss)
        throw ConfigError("the metagradient estimator only supports target=proxy_loss");
}

json to_json(const RunConfig& c) {
    return {{"output_dir", c.output_dir.string()},
            {"env", c.env},
            {"data",
             {{"n_expert_per_task", c.data.n_expert_per_task},
              {"n_noisy_per_task", c.data.n_noisy_per_task},
              {"noise_sigma", c.data.noise_sigma},
              {"prior_seed", c.data.prior_seed},
              {"target_task", c.data.target_task},
              {"n_target_demos", c.data.n_target_demos},
              {"target_seed", c.data.target_seed}}},
            {"granularity", c.granularity.to_string()},
            {"estimator",
             {{"kind", to_string(c.estimator.kind)},
              {"target", to_string(c.estimator.target)},
              {"n_subsets", c.estimator.n_subsets},
              {"p", c.estimator.p},
              {"subset_seed", c.estimator.subset_seed},
              {"ridge_scale", c.estimator.ridge_scale},
              {"fit_offset", c.estimator.fit_offset},
              {"n_rollouts", c.estimator.n_rollouts},
              {"rollout_seed", c.estimator.rollout_seed},
              {"strict", c.estimator.strict},
              {"shift_mitigation", c.estimator.shift_mitigation},
              {"split_seed", c.estimator.split_seed},
              {"train", c.estimator.train}}},
            {"proxy",
             {{"loss", to_string(c.proxy.loss)},
              {"weights", c.proxy.rule == WeightRule::uniform ? "uniform" : "near_goal"},
              {"radius", c.proxy.radius},
              {"weight", c.proxy.weight}}},
            {"selection",
             {{"methods", c.selection.methods},
              {"fraction", c.selection.fraction},
              {"require_positive", c.selection.require_positive},
              {"random_seed", c.selection.random_seed},
              {"similarity_window", c.selection.similarity_window}}},
            {"final",
             {{"train", c.final_policy.train},
              {"seeds", c.final_policy.seeds},
              {"n_rollouts", c.final_policy.n_rollouts},
              {"rollout_seed", c.final_policy.rollout_seed}}},
            {"proxy_study",
             {{"n_subsets", c.proxy_study.n_subsets},
              {"subset_seed", c.proxy_study.subset_seed},
              {"train", c.proxy_study.train},
              {"n_rollouts", c.proxy_study.n_rollouts},
              {"rollout_seed", c.proxy_study.rollout_seed},
              {"compare_selections", c.proxy_study.compare_selections}}},
            {"workers", c.workers}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        reject_unknown_keys(j,
                            {"output_dir", "env", "data", "granularity", "estimator", "proxy", "selection", "final",
                             "proxy_study", "workers", "config_hash"},
                            "config");
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("env")) {
            json env = to_json(c).at("env");
            env.merge_patch(j.at("env"));
            c.env = env.get<toyenv::EnvSpec>();
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            reject_unknown_keys(d,
                                {"n_expert_per_task", "n_noisy_per_task", "noise_sigma", "prior_seed", "target_task",
                                 "n_target_demos", "target_seed"},
                                "data");
            read_if(d, "n_expert_per_task", c.data.n_expert_per_task);
            read_if(d, "n_noisy_per_task", c.data.n_noisy_per_task);
            read_if(d, "noise_sigma", c.data.noise_sigma);
            read_if(d, "prior_seed", c.data.prior_seed);
            read_if(d, "target_task", c.data.target_task);
            read_if(d, "n_target_demos", c.data.n_target_demos);
            read_if(d, "target_seed", c.data.target_seed);
        }
        if (j.contains("granularity")) c.granularity = Granularity::parse(j.at("granularity").get<std::string>());
        if (j.contains("estimator")) {
            const auto& e = j.at("estimator");
            reject_unknown_keys(e,
                                {"kind", "target", "n_subsets", "p", "subset_seed", "ridge_scale", "fit_offset",
                                 "n_rollouts", "rollout_seed", "strict", "shift_mitigation", "split_seed", "train"},
                                "estimator");
            if (e.contains("kind")) c.estimator.kind = estimator_from_string(e.at("kind").get<std::string>());
            if (e.contains("target")) c.estimator.target = target_from_string(e.at("target").get<std::string>());
            read_if(e, "n_subsets", c.estimator.n_subsets);
            read_if(e, "p", c.estimator.p);
            read_if(e, "subset_seed", c.estimator.subset_seed);
            read_if(e, "ridge_scale", c.estimator.ridge_scale);
            read_if(e, "fit_offset", c.estimator.fit_offset);
            read_if(e, "n_rollouts", c.estimator.n_rollouts);
            read_if(e, "rollout_seed", c.estimator.rollout_seed);
            read_if(e, "strict", c.estimator.strict);
            read_if(e, "shift_mitigation", c.estimator.shift_mitigation);
            read_if(e, "split_seed", c.estimator.split_seed);
            if (e.contains("train")) from_json(e.at("train"), c.estimator.train);
        }
        if (j.contains("proxy")) {
            const auto& p = j.at("proxy");
            reject_unknown_keys(p, {"loss", "weights", "radius", "weight"}, "proxy");
            if (p.contains("loss")) c.proxy.loss = loss_kind_from_string(p.at("loss").get<std::string>());
            if (p.contains("weights")) {
                const auto w = p.at("weights").get<std::string>();
                if (w == "uniform") c.proxy.rule = WeightRule::uniform;
                else if (w == "near_goal") c.proxy.rule = WeightRule::near_goal;
                else throw ConfigError("proxy.weights must be uniform or near_goal");
            }
            read_if(p, "radius", c.proxy.radius);
            read_if(p, "weight", c.proxy.weight);
        }
        if (j.contains("selection")) {
            const auto& s = j.at("selection");
            reject_unknown_keys(s, {"methods", "fraction", "require_positive", "random_seed", "similarity_window"},
                                "selection");
            if (s.contains("methods")) {
                const auto& m = s.at("methods");
                c.selection.methods = m.is_string() ? std::vector<std::string>{m.get<std::string>()}
                                                    : m.get<std::vector<std::string>>();
            }
            read_if(s, "fraction", c.selection.fraction);
            read_if(s, "require_positive", c.selection.require_positive);
            read_if(s, "random_seed", c.selection.random_seed);
            read_if(s, "similarity_window", c.selection.similarity_window);
        }
        if (j.contains("final")) {
            const auto& f = j.at("final");
            reject_unknown_keys(f, {"train", "seeds", "n_rollouts", "rollout_seed"}, "final");
            if (f.contains("train")) from_json(f.at("train"), c.final_policy.train);
            read_if(f, "seeds", c.final_policy.seeds);
            read_if(f, "n_rollouts", c.final_policy.n_rollouts);
            read_if(f, "rollout_seed", c.final_policy.rollout_seed);
        }
        if (j.contains("proxy_study")) {
            const auto& p = j.at("proxy_study");
            reject_unknown_keys(p, {"n_subsets", "subset_seed", "train", "n_rollouts", "rollout_seed", "compare_selections"},
                                "proxy_study");
            read_if(p, "n_subsets", c.proxy_study.n_subsets);
            read_if(p, "subset_seed", c.proxy_study.subset_seed);
            if (p.contains("train")) from_json(p.at("train"), c.proxy_study.train);
            read_if(p, "n_rollouts", c.proxy_study.n_rollouts);
            read_if(p, "rollout_seed", c.proxy_study.rollout_seed);
            read_if(p, "compare_selections", c.proxy_study.compare_selections);
        }
        read_if(j, "workers", c.workers);
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

std::string config_hash(const RunConfig& config) {
    json j = to_json(config);
    j.erase("output_dir");
    j.erase("workers");
    return hash_of(j);
}

ProxyConfig make_proxy(const RunConfig& c) {
    ProxyConfig p;
    p.loss = c.proxy.loss;
    if (c.proxy.rule == WeightRule::near_goal) p.weights = StateWeights::near_goal(c.env, c.proxy.radius, c.proxy.weight);
    return p;
}

// ---------------------------------------------------------------------------
// Run directory

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create run directory " + dir.string() + ": " + ec.message());
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("run directory " + dir.string() + " is locked by another process (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

std::vector<ClusterInfo> load_cluster_info(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing input " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<ClusterInfo> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ClusterInfo c;
        std::string tag;
        if (!(ss >> c.cluster_id >> c.traj_id >> c.task_id >> tag >> c.start_step >> c.length))
            throw Error(path.string() + ": malformed line '" + line + "'");
        c.source_tag = source_tag_from_string(tag);
        out.push_back(c);
    }
    return out;
}

RunData load_run_data(const RunConfig& c) {
    const fs::path dir = c.output_dir / "data";
    const json manifest = read_json(dir / "manifest.json");
    expect_hash(manifest, data_hash(c), dir / "manifest.json", "gen-data");
    RunData d;
    d.prior = load_trajectories(dir / "prior.jsonl");
    d.target = load_trajectories(dir / "target.jsonl");
    d.clusters = make_clusters(d.prior, c.granularity);
    return d;
}

std::map<std::string, double> composition_of(const std::vector<int>& ids, const std::vector<ClusterInfo>& info) {
    std::map<std::string, double> out;
    if (ids.empty()) return out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= info.size()) throw Error("selected cluster id out of range");
        const auto& c = info[static_cast<std::size_t>(id)];
        out[std::to_string(c.task_id) + "/" + to_string(c.source_tag)] += 1.0;
    }
    for (auto& [_, v] : out) v /= static_cast<double>(ids.size());
    return out;
}

// ---------------------------------------------------------------------------
// Stages

fs::path cmd_gen_data(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    Timer timer;
    prepare_dirs(c);
    toyenv::PriorOptions opts;
    opts.n_expert_per_task = c.data.n_expert_per_task;
    opts.n_noisy_per_task = c.data.n_noisy_per_task;
    opts.noise_sigma = c.data.noise_sigma;
    opts.seed = c.data.prior_seed;
    const auto prior = toyenv::generate_prior(c.env, opts);
    const int first_target = static_cast<int>(prior.size());
    const auto target =
        toyenv::generate_target(c.env, c.data.target_task, c.data.n_target_demos, c.data.target_seed, first_target);
    const auto clusters = make_clusters(prior, c.granularity);

    const fs::path dir = c.output_dir / "data";
    save_trajectories(prior, dir / "prior.jsonl");
    save_trajectories(target, dir / "target.jsonl");
    {
        std::ofstream out(dir / "clusters.tsv", std::ios::trunc);
        if (!out) throw Error("cannot write " + (dir / "clusters.tsv").string());
        out << "cluster_id\ttraj_id\ttask_id\tsource_tag\tstart_step\tlength\n";
        for (const auto& cl : clusters) {
            const auto& t = prior[cl.traj_index];
            out << cl.cluster_id << '\t' << cl.traj_id << '\t' << t.task_id << '\t' << to_string(t.source_tag) << '\t'
                << cl.start_step << '\t' << cl.length << '\n';
        }
    }
    write_json({{"hash", data_hash(c)},
                {"n_prior", prior.size()},
                {"n_target", target.size()},
                {"n_prior_pairs", count_pairs(prior)},
                {"n_clusters", clusters.size()},
                {"granularity", c.granularity.to_string()},
                {"target_task", c.data.target_task}},
               dir / "manifest.json");
    record_timing(c, "gen-data", timer.seconds());
    return dir;
}

std::vector<fs::path> cmd_estimate(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    Timer timer;
    prepare_dirs(c);
    const RunData d = load_run_data(c);
    std::vector<fs::path> written;

    for (const auto& method : c.selection.methods) {
        if (!needs_scores(method)) continue;
        const fs::path tsv = c.output_dir / "scores" / (method + ".tsv");
        const fs::path meta = c.output_dir / "scores" / (method + ".json");
        json info = {{"hash", score_hash(c, method)}, {"method", method}};
        ScoreTable table;
        if (is_similarity(method)) {
            SimilarityConfig sc{similarity_mode_from_string(method), c.selection.similarity_window, c.workers};
            table = similarity_scores(d.prior, d.clusters, d.target, sc);
        } else {
            const auto use = target_use(c, d.target);
            TrainConfig train = c.estimator.train;
            if (train.cotrain) train.cotrain->target = use.cotrain;
            const ProxyConfig proxy = make_proxy(c);
            Datamodel dm;
            Timer est;
            if (c.estimator.kind == EstimatorKind::metagradient) {
                if (train.optimizer == OptimizerKind::adam) {
                    if (c.estimator.strict)
                        throw UnsupportedConfiguration(
                            "estimator=metagradient cannot differentiate through adam; use gd_full_batch or sgd "
                            "(or set estimator.strict=false to fall back to sgd)");
                    train.optimizer = OptimizerKind::sgd;
                    info["optimizer_fallback"] = "adam -> sgd";
                }
                dm = metagradient_estimate(d.clusters, d.prior, use.proxy, use.mix_in, train, proxy);
            } else {
                auto data = std::make_shared<const TrainingData>(d.prior, d.clusters, use.mix_in,
                                                                 train.cotrain ? use.cotrain : std::vector<Trajectory>{});
                OutcomeConfig oc;
                oc.n_subsets = c.estimator.n_subsets;
                oc.p = c.estimator.p;
                oc.seed = c.estimator.subset_seed;
                oc.train = train;
                oc.evaluator.target = c.estimator.target;
                oc.evaluator.proxy = proxy;
                oc.evaluator.proxy_target = use.proxy;
                oc.evaluator.env = c.env;
                oc.evaluator.task_id = c.data.target_task;
                oc.evaluator.n_rollouts = c.estimator.n_rollouts;
                oc.evaluator.rollout_seed = c.estimator.rollout_seed;
                oc.workers = c.workers;
                const auto col = collect_outcomes(data, oc);
                if (col.outcomes.size() < 2) throw Error("too few successful subset trainings to fit a datamodel");
                const double lambda = trace_normalized_ridge(col.outcomes, c.estimator.ridge_scale);
                dm = regression_estimate(col.outcomes, lambda, c.estimator.fit_offset);
                dm.target = c.estimator.target;
                dm.provenance["skipped_subsets"] = col.skipped.size();
                dm.provenance["ridge_scale"] = c.estimator.ridge_scale;
                if (col.outcomes.size() >= 3) {
                    const auto fit = evaluate_datamodel(dm, col.outcomes);
                    info["fit"] = {{"in_sample_pearson", fit.pearson ? json(*fit.pearson) : json(nullptr)},
                                   {"in_sample_spearman", fit.spearman ? json(*fit.spearman) : json(nullptr)},
                                   {"in_sample_mse", fit.mse},
                                   {"n", fit.n}};
                }
            }
            dm.provenance["tie_break"] = "score desc, cluster_id asc";
            info["estimator"] = to_string(dm.estimator);
            info["target"] = to_string(dm.target);
            info["offset"] = dm.offset;
            info["provenance"] = dm.provenance;
            record_timing(c, "estimate." + method, est.seconds());
            table = ScoreTable::from_scores(dm.tau, to_string(dm.estimator), to_string(dm.target));
        }
        save_score_table(table, tsv);
        write_json(info, meta);
        written.push_back(tsv);
    }
    record_timing(c, "estimate", timer.seconds());
    return written;
}

std::vector<SelectionResult> cmd_select(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    Timer timer;
    prepare_dirs(c);
    // Only cluster metadata and score files are read here.
    const json manifest = read_json(c.output_dir / "data" / "manifest.json");
    expect_hash(manifest, data_hash(c), c.output_dir / "data" / "manifest.json", "gen-data");
    const auto info = load_cluster_info(c.output_dir / "data" / "clusters.tsv");
    const std::size_t n = info.size();
    const SelectionConfig sc{c.selection.fraction, c.selection.require_positive};

    std::vector<SelectionResult> out;
    for (const auto& method : c.selection.methods) {
        SelectionResult s;
        s.method = method;
        if (needs_scores(method)) {
            const fs::path meta = c.output_dir / "scores" / (method + ".json");
            expect_hash(read_json(meta), score_hash(c, method), meta, "estimate");
            const auto table = load_score_table(c.output_dir / "scores" / (method + ".tsv"));
            if (table.rows.size() != n) throw Error("score table for " + method + " does not cover every cluster");
            s.ids = select_top_fraction(table, sc);
        } else if (method == "random") {
            s.ids = random_select(n, c.selection.fraction, c.selection.random_seed);
        } else if (method == "all_data") {
            s.ids.resize(n);
            for (std::size_t i = 0; i < n; ++i) s.ids[i] = static_cast<int>(i);
        } else {
            s.target_only = true;
        }
        s.composition = s.target_only
                            ? std::map<std::string, double>{{std::to_string(c.data.target_task) + "/target", 1.0}}
                            : composition_of(s.ids, info);
        save_id_list(s.ids, c.output_dir / "selections" / (method + ".txt"));
        write_json({{"hash", selection_hash(c, method)},
                    {"method", method},
                    {"ids", s.ids},
                    {"target_only", s.target_only},
                    {"composition", s.composition}},
                   c.output_dir / "selections" / (method + ".json"));
        out.push_back(std::move(s));
    }
    record_timing(c, "select", timer.seconds());
    return out;
}

MethodResult train_and_evaluate(const RunConfig& c, const RunData& d, const std::string& method,
                                const std::vector<int>& ids, bool target_only) {
    MethodResult r;
    r.method = method;
    TrainConfig train = c.final_policy.train;
    const double alpha = train.cotrain ? train.cotrain->alpha : 0.0;
    train.cotrain = CotrainConfig{d.target, target_only ? 1.0 : alpha};
    if (!target_only && ids.empty()) throw Error("empty selection for method " + method);
    const SubsetMask mask =
        target_only ? SubsetMask::zeros(d.clusters.size()) : SubsetMask::from_ids(d.clusters.size(), ids);
    const ProxyConfig proxy = make_proxy(c);
    auto data = std::make_shared<const TrainingData>(d.prior, d.clusters, std::vector<Trajectory>{}, d.target);
    for (auto seed : c.final_policy.seeds) {
        train.seed = seed;
        const auto result = datamil::train(data, mask, train);
        r.success.push_back(toyenv::rollout_success_rate(mean_policy(result.params, train.policy), c.env,
                                                         c.data.target_task, c.final_policy.n_rollouts,
                                                         c.final_policy.rollout_seed));
        r.proxy.push_back(proxy_metric(result.params, train.policy, d.target, proxy.loss, proxy.weights));
        save_checkpoint(result.params, train.policy,
                        c.output_dir / "checkpoints" / (method + ".seed" + std::to_string(seed) + ".ckpt"));
    }
    r.success_mean = stats::mean(r.success);
    r.proxy_mean = stats::mean(r.proxy);
    return r;
}

std::vector<MethodResult> cmd_train_eval(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    Timer timer;
    prepare_dirs(c);
    const RunData d = load_run_data(c);
    std::vector<MethodResult> out;
    for (const auto& method : c.selection.methods) {
        Timer mt;
        const auto sel = read_selection(c, method);
        auto r = train_and_evaluate(c, d, method, sel.ids, sel.target_only);
        json res = method_result_json(r);
        res["hash"] = result_hash(c, method);
        res["method"] = method;
        write_json(res, c.output_dir / "results" / (method + ".json"));
        record_timing(c, "train-eval." + method, mt.seconds());
        out.push_back(std::move(r));
    }
    record_timing(c, "train-eval", timer.seconds());
    return out;
}

fs::path cmd_proxy_study(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    Timer timer;
    prepare_dirs(c);
    const RunData d = load_run_data(c);
    const auto info_path = c.output_dir / "data" / "clusters.tsv";
    const auto info = load_cluster_info(info_path);
    const ProxyConfig proxy = make_proxy(c);
    const std::size_t n = d.clusters.size();

    TrainConfig train = c.proxy_study.train;
    if (train.cotrain) train.cotrain->target = d.target;
    auto data = std::make_shared<const TrainingData>(d.prior, d.clusters, std::vector<Trajectory>{},
                                                     train.cotrain ? d.target : std::vector<Trajectory>{});

    struct Row {
        std::optional<SubsetMask> mask;
        double m = 0.0, mhat = 0.0;
    };
    std::vector<Row> rows(c.proxy_study.n_subsets);
    parallel_for(
        rows.size(),
        [&](std::size_t j) {
            auto mask = sample_bernoulli_mask(n, 0.5, subset_seed(c.proxy_study.subset_seed, j));
            try {
                const auto result = datamil::train(data, mask, train);
                rows[j].m = toyenv::rollout_success_rate(mean_policy(result.params, train.policy), c.env,
                                                         c.data.target_task, c.proxy_study.n_rollouts,
                                                         c.proxy_study.rollout_seed);
                rows[j].mhat = proxy_metric(result.params, train.policy, d.target, proxy.loss, proxy.weights);
                rows[j].mask = std::move(mask);
            } catch (const NumericalError&) {
            }
        },
        c.workers);

    json out = {{"hash", config_hash(c)}, {"rows", json::array()}};
    Vector m, mhat;
    std::vector<SubsetOutcome> on_m, on_mhat;
    std::size_t skipped = 0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        if (!rows[j].mask) {
            ++skipped;
            continue;
        }
        out["rows"].push_back({{"subset", j}, {"M", rows[j].m}, {"M_hat", rows[j].mhat}});
        m.push_back(rows[j].m);
        mhat.push_back(rows[j].mhat);
        on_m.push_back({*rows[j].mask, rows[j].m});
        on_mhat.push_back({*rows[j].mask, rows[j].mhat});
    }
    const auto sp = stats::spearman(m, mhat);
    const auto pe = stats::pearson(m, mhat);
    out["skipped"] = skipped;
    out["spearman"] = sp ? json(*sp) : json(nullptr);
    out["pearson"] = pe ? json(*pe) : json(nullptr);

    if (c.proxy_study.compare_selections) {
        const SelectionConfig sc{c.selection.fraction, c.selection.require_positive};
        std::vector<std::pair<std::string, Vector>> variants;
        auto ridge = [&](const std::vector<SubsetOutcome>& o) {
            return regression_estimate(o, trace_normalized_ridge(o, c.estimator.ridge_scale), true).tau;
        };
        variants.emplace_back("dm_rollouts", ridge(on_m));
        variants.emplace_back("datamil_rg", ridge(on_mhat));
        {
            TrainConfig mt = c.estimator.train;
            if (mt.cotrain) mt.cotrain->target = d.target;
            if (mt.optimizer == OptimizerKind::adam) mt.optimizer = OptimizerKind::sgd;
            variants.emplace_back("datamil_meta", metagradient_estimate(d.clusters, d.prior, d.target, {}, mt, proxy).tau);
        }
        json rowsv = json::array();
        for (const auto& [name, tau] : variants) {
            const auto ids = select_top_fraction(ScoreTable::from_scores(tau, name, "proxy_study"), sc);
            const auto r = train_and_evaluate(c, d, name, ids, false);
            json e = method_result_json(r);
            e["variant"] = name;
            e["n_selected"] = ids.size();
            e["composition"] = composition_of(ids, info);
            rowsv.push_back(e);
        }
        std::vector<int> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
        json e = method_result_json(train_and_evaluate(c, d, "all_data", all, false));
        e["variant"] = "all_data";
        e["n_selected"] = n;
        rowsv.push_back(e);
        out["selections"] = rowsv;
    }
    const fs::path path = c.output_dir / "proxy_study.json";
    write_json(out, path);
    record_timing(c, "proxy-study", timer.seconds());
    return path;
}

fs::path cmd_report(const RunConfig& c) {
    c.validate();
    RunLock lock(c.output_dir);
    json report = {{"software", {{"name", "datamil"}, {"version", DATAMIL_VERSION}}},
                   {"config_hash", config_hash(c)},
                   {"created", utc_now()},
                   {"methods", json::object()}};
    for (const auto& method : c.selection.methods) {
        const fs::path rp = c.output_dir / "results" / (method + ".json");
        json res = read_json(rp);
        expect_hash(res, result_hash(c, method), rp, "train-eval");
        const auto sel = read_selection(c, method);
        res.erase("hash");
        res.erase("method");
        res["n_selected"] = sel.ids.size();
        res["target_only"] = sel.target_only;
        res["composition"] = sel.composition;
        if (needs_scores(method)) {
            json meta = read_json(c.output_dir / "scores" / (method + ".json"));
            meta.erase("hash");
            meta.erase("method");
            res["scores"] = meta;
        }
        report["methods"][method] = res;
    }
    const fs::path study = c.output_dir / "proxy_study.json";
    if (fs::exists(study)) {
        json s = read_json(study);
        if (s.value("hash", std::string()) == config_hash(c)) {
            s.erase("hash");
            report["proxy_study"] = s;
        }
    }
    const fs::path timing = c.output_dir / "timing.json";
    report["timing"] = fs::exists(timing) ? read_json(timing) : json::object();
    const fs::path path = c.output_dir / "report.json";
    write_json(report, path);
    return path;
}

fs::path cmd_run(const RunConfig& c) {
    cmd_gen_data(c);
    cmd_estimate(c);
    cmd_select(c);
    cmd_train_eval(c);
    return cmd_report(c);
}

json strip_volatile(json report) {
    report.erase("created");
    report.erase("timing");
    return report;
}

}  // namespace datamil
