// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datamil/dataset.hpp"
#include "datamil/proxy.hpp"
#include "datamil/toyenv.hpp"
#include "datamil/trainer.hpp"

namespace datamil {

enum class EstimatorKind { regression, metagradient };
enum class TargetKind { rollout_success, proxy_loss };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);
std::string to_string(TargetKind kind);
TargetKind target_from_string(const std::string& name);

/// Linear datamodel: predict(z) = offset + sum_{i: z_i = 1} tau_i.
struct Datamodel {
    Vector tau;
    double offset = 0.0;
    EstimatorKind estimator = EstimatorKind::regression;
    TargetKind target = TargetKind::proxy_loss;
    nlohmann::json provenance = nlohmann::json::object();
};

struct SubsetOutcome {
    SubsetMask mask;
    double outcome = 0.0;
};

/// How a trained policy is scored: the proxy metric on held-out target pairs, or the
/// rollout success rate on the target task.
struct OutcomeEvaluator {
    TargetKind target = TargetKind::proxy_loss;
    ProxyConfig proxy;
    std::vector<Trajectory> proxy_target;
    toyenv::EnvSpec env;
    int task_id = 0;
    int n_rollouts = 20;
    std::uint64_t rollout_seed = 0;

    double operator()(const Params& params, const PolicyConfig& config) const;
};

struct OutcomeConfig {
    std::size_t n_subsets = 200;
    double p = 0.5;
    std::uint64_t seed = 0;
    TrainConfig train;
    OutcomeEvaluator evaluator;
    /// Replaces the sampled masks by the all-ones mask.
    bool force_all_ones = false;
    unsigned workers = 0;
};

struct OutcomeCollection {
    std::vector<SubsetOutcome> outcomes;
    /// Subset indices whose training diverged (excluded from `outcomes`).
    std::vector<std::size_t> skipped;
};

/// Seed of the j-th subset mask of a collection.
std::uint64_t subset_seed(std::uint64_t seed, std::size_t j);

/// Trains A(z_j) on each Bernoulli(p) mask and scores it. Deterministic, merged in
/// subset order; subsets are independent and may run on several workers.
OutcomeCollection collect_outcomes(const TrainingDataPtr& data, const OutcomeConfig& config);

/// Ridge regression of outcomes on mask indicators: minimizes
/// sum_j (offset + z_j^T tau - y_j)^2 + lambda * |tau|^2 (offset unpenalized), solved
/// through the normal equations.
Datamodel regression_estimate(const std::vector<SubsetOutcome>& outcomes, double lambda, bool fit_offset);

/// lambda_scale * trace(Z^T Z) / N, the default ridge strength.
double trace_normalized_ridge(const std::vector<SubsetOutcome>& outcomes, double lambda_scale = 1e-3);

/// d proxy(A(z)) / d z at the tape's mask, by reverse accumulation through the tape.
/// Supports gd_full_batch and sgd tapes recorded with a continuous mask.
Vector metagradient(const TrainingTape& tape, const std::vector<Trajectory>& proxy_target, const ProxyConfig& proxy);

/// Trains at z0 = all-ones (continuous) and returns tau = metagradient, with offset
/// proxy(A(z0)) - sum(tau) so that predict() reproduces the first-order expansion.
/// `mix_in` trajectories are added to training with unit weight and no cluster.
Datamodel metagradient_estimate(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior,
                                const std::vector<Trajectory>& proxy_target, const std::vector<Trajectory>& mix_in,
                                const TrainConfig& train_config, const ProxyConfig& proxy);

/// Same, taking the target split: evaluates the proxy on the evaluation half and, when
/// `mix_estimation_half` is set, trains on the estimation half alongside the prior.
Datamodel metagradient_estimate(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior,
                                const TargetSplit& split, bool mix_estimation_half, const TrainConfig& train_config,
                                const ProxyConfig& proxy);

double predict(const Datamodel& dm, const SubsetMask& mask);

struct FitStats {
    std::optional<double> pearson;
    std::optional<double> spearman;
    double mse = 0.0;
    std::size_t n = 0;
};

FitStats evaluate_datamodel(const Datamodel& dm, const std::vector<SubsetOutcome>& heldout);

void save_datamodel(const Datamodel& dm, const std::filesystem::path& path);
Datamodel load_datamodel(const std::filesystem::path& path);

}  // namespace datamil
