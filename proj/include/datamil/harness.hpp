// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datamil/estimators.hpp"
#include "datamil/selection.hpp"

namespace datamil {

/// Malformed or inconsistent run configuration (CLI exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

struct DataGenConfig {
    int n_expert_per_task = 5;
    int n_noisy_per_task = 15;
    double noise_sigma = 0.5;
    std::uint64_t prior_seed = 1;
    int target_task = 0;
    int n_target_demos = 5;
    std::uint64_t target_seed = 2;
};

struct EstimatorSettings {
    EstimatorKind kind = EstimatorKind::metagradient;
    TargetKind target = TargetKind::proxy_loss;
    std::size_t n_subsets = 200;
    double p = 0.5;
    std::uint64_t subset_seed = 5;
    double ridge_scale = 1e-3;
    bool fit_offset = true;
    int n_rollouts = 20;
    std::uint64_t rollout_seed = 31;
    /// When false, a metagradient request with adam falls back to sgd instead of failing.
    bool strict = true;
    /// Split the target set: proxy on one half, the other half mixed into training.
    bool shift_mitigation = false;
    std::uint64_t split_seed = 3;
    /// Training run(s) whose outcome the datamodel describes; cotrain_alpha, when set,
    /// co-trains on the target set.
    TrainConfig train;
};

struct ProxySettings {
    LossKind loss = LossKind::nll;
    WeightRule rule = WeightRule::uniform;
    double radius = 0.2;
    double weight = 2.0;
};

/// Methods understood by select/train-eval.
inline const std::vector<std::string> kAllMethods = {"datamil", "sr", "ar", "br", "random", "all_data", "target_only"};

struct SelectionSettings {
    std::vector<std::string> methods = kAllMethods;
    double fraction = 0.10;
    bool require_positive = false;
    std::uint64_t random_seed = 13;
    int similarity_window = 50;
};

struct FinalSettings {
    TrainConfig train;  // cotrain_alpha defaults to 0.5
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int n_rollouts = 100;
    std::uint64_t rollout_seed = 77;
};

struct ProxyStudySettings {
    std::size_t n_subsets = 30;
    std::uint64_t subset_seed = 11;
    TrainConfig train;
    int n_rollouts = 50;
    std::uint64_t rollout_seed = 99;
    /// Also select with DM-rollouts / DataMIL-rg / DataMIL-meta and evaluate each.
    bool compare_selections = true;
};

struct RunConfig {
    std::filesystem::path output_dir = "runs/default";
    toyenv::EnvSpec env;
    DataGenConfig data;
    Granularity granularity = Granularity::trajectory();
    EstimatorSettings estimator;
    ProxySettings proxy;
    SelectionSettings selection;
    FinalSettings final_policy;
    ProxyStudySettings proxy_study;
    unsigned workers = 0;

    RunConfig();
    void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config document; value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Hash of everything that influences results (output_dir and workers excluded).
std::string config_hash(const RunConfig& config);

ProxyConfig make_proxy(const RunConfig& config);

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Loaded data/ of a run.
struct RunData {
    std::vector<Trajectory> prior;
    std::vector<Trajectory> target;
    std::vector<Cluster> clusters;
};

/// Cluster metadata written next to the data (no trajectory contents).
struct ClusterInfo {
    int cluster_id = 0;
    int traj_id = 0;
    int task_id = 0;
    SourceTag source_tag = SourceTag::expert;
    int start_step = 0;
    int length = 0;
};

struct SelectionResult {
    std::string method;
    std::vector<int> ids;
    bool target_only = false;
    /// "task_id/source_tag" -> fraction of selected clusters.
    std::map<std::string, double> composition;
};

std::map<std::string, double> composition_of(const std::vector<int>& ids, const std::vector<ClusterInfo>& info);

struct MethodResult {
    std::string method;
    std::vector<double> success;  // per final seed
    std::vector<double> proxy;    // per final seed
    double success_mean = 0.0;
    double proxy_mean = 0.0;
};

// Pipeline stages. Each writes into config.output_dir and returns what it wrote.
std::filesystem::path cmd_gen_data(const RunConfig& config);
std::vector<std::filesystem::path> cmd_estimate(const RunConfig& config);
std::vector<SelectionResult> cmd_select(const RunConfig& config);
std::vector<MethodResult> cmd_train_eval(const RunConfig& config);
std::filesystem::path cmd_proxy_study(const RunConfig& config);
std::filesystem::path cmd_report(const RunConfig& config);
/// gen-data, estimate, select, train-eval, report.
std::filesystem::path cmd_run(const RunConfig& config);

RunData load_run_data(const RunConfig& config);
std::vector<ClusterInfo> load_cluster_info(const std::filesystem::path& path);

/// Final-policy training and evaluation for one selection (used by train-eval and the
/// proxy study).
MethodResult train_and_evaluate(const RunConfig& config, const RunData& data, const std::string& method,
                                const std::vector<int>& ids, bool target_only);

/// Drops the fields that legitimately differ between identical runs.
nlohmann::json strip_volatile(nlohmann::json report);

}  // namespace datamil
