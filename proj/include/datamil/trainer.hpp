// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "datamil/dataset.hpp"
#include "datamil/policy.hpp"

namespace datamil {

enum class OptimizerKind { gd_full_batch, sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct CotrainConfig {
    std::vector<Trajectory> target;
    double alpha = 0.5;
};

struct TrainConfig {
    PolicyConfig policy;
    int steps = 300;
    double learning_rate = 1e-2;
    int batch_size = 64;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossKind loss = LossKind::l1;
    std::uint64_t seed = 0;
    /// Parameters are recorded every `checkpoint_stride` steps; the reverse pass
    /// recomputes the steps in between.
    int checkpoint_stride = 1;
    std::optional<CotrainConfig> cotrain;

    void validate() const;
};

/// Immutable, flattened view of everything a training run may sample from. Global pair
/// indices are laid out as [prior pairs in cluster order | extra pairs | target pairs].
/// Extra pairs always carry weight 1 and belong to no cluster; target pairs are only
/// drawn through co-training.
class TrainingData {
public:
    struct PairRef {
        std::uint32_t traj = 0;
        std::uint32_t step = 0;
        std::int32_t cluster = -1;
    };

    TrainingData(std::vector<Trajectory> prior, std::vector<Cluster> clusters, std::vector<Trajectory> extra = {},
                 std::vector<Trajectory> target = {});

    const std::vector<Trajectory>& prior() const { return prior_; }
    const std::vector<Cluster>& clusters() const { return clusters_; }
    const std::vector<Trajectory>& extra() const { return extra_; }
    const std::vector<Trajectory>& target() const { return target_; }

    std::size_t num_clusters() const { return clusters_.size(); }
    std::size_t num_prior_pairs() const { return prior_pairs_.size(); }
    std::size_t num_extra_pairs() const { return extra_pairs_.size(); }
    std::size_t num_target_pairs() const { return target_pairs_.size(); }
    std::size_t num_pairs() const { return prior_pairs_.size() + extra_pairs_.size() + target_pairs_.size(); }

    /// Cluster of a global pair index, or -1 for extra/target pairs.
    int cluster_of(std::size_t index) const;
    const StateActionPair& pair(std::size_t index) const;
    /// Global indices [begin, end) of the prior pairs of one cluster.
    std::pair<std::size_t, std::size_t> cluster_range(std::size_t cluster) const;

    std::size_t extra_begin() const { return prior_pairs_.size(); }
    std::size_t target_begin() const { return prior_pairs_.size() + extra_pairs_.size(); }

    const std::string& fingerprint() const { return fingerprint_; }

private:
    std::vector<Trajectory> prior_, extra_, target_;
    std::vector<Cluster> clusters_;
    std::vector<PairRef> prior_pairs_, extra_pairs_, target_pairs_;
    std::vector<std::size_t> cluster_offsets_;
    std::string fingerprint_;
};

using TrainingDataPtr = std::shared_ptr<const TrainingData>;

/// One term of a step's loss: coefficient `base` times the pair's data weight (z of its
/// cluster for prior pairs, 1 otherwise) times the pair loss.
struct BatchEntry {
    std::uint32_t index = 0;
    double base = 0.0;
};

struct TrainingTape {
    TrainConfig config;
    SubsetMask mask;
    Params initial;
    /// Sampled global pair indices per step; empty vectors for gd_full_batch.
    std::vector<std::vector<std::uint32_t>> batches;
    /// checkpoints[k] holds the parameters after k * checkpoint_stride steps.
    std::vector<Params> checkpoints;
    std::vector<double> losses;
    Params final_params;
    TrainingDataPtr data;

    int steps() const { return static_cast<int>(batches.size()); }
    /// Loss terms of one recorded step.
    std::vector<BatchEntry> step_entries(int step) const;
    /// Parameters before step `step` (after `step` updates); recomputes from the
    /// nearest stored checkpoint when the stride is larger than one.
    Params params_at(int step) const;
    TrainingTape truncated(int steps) const;
};

struct TrainResult {
    Params params;
    TrainingTape tape;
};

/// Weighted behavior cloning A(z). Binary masks exclude zero-weight clusters from
/// sampling; continuous masks sample every prior pair and scale its loss by z. The
/// per-step loss is (1/|B_t|) sum z_c(i) * loss_i (full batch: |B_t| is the pool size).
TrainResult train(const TrainingDataPtr& data, const SubsetMask& mask, const TrainConfig& config);

/// Convenience overload; the co-training target set, if any, comes from the config.
TrainResult train(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior, const SubsetMask& mask,
                  const TrainConfig& config);

/// Re-runs the recorded schedule from the tape's initial parameters.
Params replay(const TrainingTape& tape);

void save_tape(const TrainingTape& tape, const std::filesystem::path& path);
TrainingTape load_tape(const std::filesystem::path& path, const TrainingDataPtr& data);

}  // namespace datamil
