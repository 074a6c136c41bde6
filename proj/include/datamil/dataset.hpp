// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "datamil/common.hpp"

namespace datamil {

enum class SourceTag { expert, suboptimal, target };

std::string to_string(SourceTag tag);
SourceTag source_tag_from_string(const std::string& name);

struct StateActionPair {
    Vector state;
    Vector action;
    int task_id = 0;
    int traj_id = 0;
    int step_idx = 0;

    friend bool operator==(const StateActionPair&, const StateActionPair&) = default;
};

struct Trajectory {
    int traj_id = 0;
    int task_id = 0;
    SourceTag source_tag = SourceTag::expert;
    std::vector<StateActionPair> pairs;

    std::size_t size() const { return pairs.size(); }
    std::size_t state_dim() const { return pairs.empty() ? 0 : pairs.front().state.size(); }
    std::size_t action_dim() const { return pairs.empty() ? 0 : pairs.front().action.size(); }

    /// Builds a trajectory from parallel state/action rows; step_idx is the row index.
    static Trajectory from_rows(int traj_id, int task_id, SourceTag tag, const std::vector<Vector>& states,
                                const std::vector<Vector>& actions);

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Checks trajectory invariants (non-empty, consistent ids, increasing steps) and that
/// every pair of the dataset shares the same state and action dimension.
void validate_dataset(const std::vector<Trajectory>& trajs);

std::size_t count_pairs(const std::vector<Trajectory>& trajs);

// ---------------------------------------------------------------------------
// Clusters

enum class GranularityKind { trajectory, subtrajectory, pair };

struct Granularity {
    GranularityKind kind = GranularityKind::trajectory;
    int horizon = 0;  // only meaningful for subtrajectory

    static Granularity trajectory() { return {GranularityKind::trajectory, 0}; }
    static Granularity subtrajectory(int h) { return {GranularityKind::subtrajectory, h}; }
    static Granularity pair() { return {GranularityKind::pair, 0}; }

    std::string to_string() const;
    static Granularity parse(const std::string& text);  // "trajectory", "pair", "subtrajectory:15"

    friend bool operator==(const Granularity&, const Granularity&) = default;
};

/// A contiguous span of one trajectory. traj_index is the trajectory's position in the
/// dataset the clusters were built from.
struct Cluster {
    int cluster_id = 0;
    Granularity granularity;
    int traj_id = 0;
    std::size_t traj_index = 0;
    int start_step = 0;
    int length = 0;

    friend bool operator==(const Cluster&, const Cluster&) = default;
};

/// Partitions every pair of the dataset into clusters ordered by (traj_id, start step).
/// Sub-trajectory spans have length H with a shorter final remainder when H does not
/// divide the trajectory length.
std::vector<Cluster> make_clusters(const std::vector<Trajectory>& dataset, Granularity granularity);

// ---------------------------------------------------------------------------
// Subset masks

enum class MaskKind { binary, continuous };

struct SubsetMask {
    Vector weights;
    MaskKind kind = MaskKind::binary;

    std::size_t size() const { return weights.size(); }
    void validate() const;

    static SubsetMask ones(std::size_t n, MaskKind kind = MaskKind::binary);
    static SubsetMask zeros(std::size_t n, MaskKind kind = MaskKind::binary);
    static SubsetMask from_ids(std::size_t n, const std::vector<int>& ids);

    friend bool operator==(const SubsetMask&, const SubsetMask&) = default;
};

SubsetMask sample_bernoulli_mask(std::size_t n, double p, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Target split

struct TargetSplit {
    std::vector<Trajectory> estimation_half;
    std::vector<Trajectory> evaluation_half;
    std::uint64_t seed = 0;
};

/// Seeded shuffle, then the first ceil(n/2) go to the estimation half.
TargetSplit split_target(const std::vector<Trajectory>& target, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);
void save_trajectories(const std::vector<Trajectory>& trajs, const std::filesystem::path& path);

SubsetMask load_mask(const std::filesystem::path& path);
void save_mask(const SubsetMask& mask, const std::filesystem::path& path);

}  // namespace datamil
