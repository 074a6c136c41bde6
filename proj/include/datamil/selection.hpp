// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "datamil/dataset.hpp"

namespace datamil {

struct ScoreRow {
    int cluster_id = 0;
    double tau = 0.0;
    int rank = 0;  // 1 = best, by (tau desc, cluster_id asc)
};

struct ScoreTable {
    std::vector<ScoreRow> rows;
    std::string estimator;  // regression | metagradient | sr | ar | br | ...
    std::string target;     // proxy_loss | rollout_success | similarity

    /// Builds rows for ids 0..n-1 and assigns ranks.
    static ScoreTable from_scores(const Vector& scores, std::string estimator, std::string target);
    Vector scores() const;
    void assign_ranks();
};

void save_score_table(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable load_score_table(const std::filesystem::path& path);

struct SelectionConfig {
    double fraction = 0.10;
    bool require_positive = false;

    void validate() const;
};

/// max(1, floor(fraction * n)).
std::size_t selection_size(std::size_t n, double fraction);

/// Top clusters by (score desc, cluster_id asc). With require_positive, non-positive
/// scores are dropped first, which may leave fewer than k (and is an error when none remain).
std::vector<int> select_top_fraction(const ScoreTable& scores, const SelectionConfig& config);

/// Uniform without replacement; returned in ascending id order.
std::vector<int> random_select(std::size_t n, double fraction, std::uint64_t seed);

enum class SimilarityMode { SR, AR, BR };
std::string to_string(SimilarityMode mode);
SimilarityMode similarity_mode_from_string(const std::string& name);

struct SimilarityConfig {
    SimilarityMode mode = SimilarityMode::BR;
    int window = 50;
    unsigned workers = 0;
};

/// Sliding-window similarity baseline. Windows slide with stride 1; a trajectory shorter
/// than the window contributes one window padded by repeating its last step. A window's
/// score is minus its L2 distance to the nearest target window, and a cluster takes the
/// best score among the windows that overlap it.
ScoreTable similarity_scores(const std::vector<Trajectory>& prior, const std::vector<Cluster>& clusters,
                             const std::vector<Trajectory>& target, const SimilarityConfig& config);

enum class AggregateRule { sum, mean };

/// pair_scores[t][k] scores pair k of prior trajectory t.
ScoreTable aggregate_scores(const std::vector<Vector>& pair_scores, const std::vector<Trajectory>& prior,
                            const std::vector<Cluster>& clusters, AggregateRule rule);

void save_id_list(const std::vector<int>& ids, const std::filesystem::path& path);
std::vector<int> load_id_list(const std::filesystem::path& path);

}  // namespace datamil
