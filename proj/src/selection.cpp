// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/selection.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace datamil {

namespace {

std::vector<std::size_t> ranking_order(const std::vector<ScoreRow>& rows) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rows[a].tau != rows[b].tau) return rows[a].tau > rows[b].tau;
        return rows[a].cluster_id < rows[b].cluster_id;
    });
    return order;
}

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

}  // namespace

ScoreTable ScoreTable::from_scores(const Vector& scores, std::string estimator, std::string target) {
    ScoreTable t;
    t.estimator = std::move(estimator);
    t.target = std::move(target);
    for (std::size_t i = 0; i < scores.size(); ++i) t.rows.push_back({static_cast<int>(i), scores[i], 0});
    t.assign_ranks();
    return t;
}

Vector ScoreTable::scores() const {
    Vector out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.tau);
    return out;
}

void ScoreTable::assign_ranks() {
    for (const auto& r : rows)
        if (std::isnan(r.tau)) throw Error("score table: NaN score for cluster " + std::to_string(r.cluster_id));
    const auto order = ranking_order(rows);
    for (std::size_t k = 0; k < order.size(); ++k) rows[order[k]].rank = static_cast<int>(k + 1);
}

void save_score_table(const ScoreTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write score table " + path.string());
    out << "cluster_id\ttau\trank\testimator\ttarget\n";
    for (const auto& r : table.rows)
        out << r.cluster_id << '\t' << format_double(r.tau) << '\t' << r.rank << '\t' << table.estimator << '\t'
            << table.target << '\n';
}

ScoreTable load_score_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open score table " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("cluster_id\t", 0) != 0)
        throw Error(path.string() + ": missing score table header");
    ScoreTable t;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, tau, rank, est, tgt;
        if (!std::getline(ss, id, '\t') || !std::getline(ss, tau, '\t') || !std::getline(ss, rank, '\t') ||
            !std::getline(ss, est, '\t') || !std::getline(ss, tgt))
            throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
        ScoreRow r;
        try {
            r.cluster_id = std::stoi(id);
            r.tau = std::stod(tau);
            r.rank = std::stoi(rank);
        } catch (const std::exception&) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
        if (t.rows.empty()) {
            t.estimator = est;
            t.target = tgt;
        }
        t.rows.push_back(r);
    }
    return t;
}

void SelectionConfig::validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("selection fraction must be in (0, 1]");
}

std::size_t selection_size(std::size_t n, double fraction) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
}

std::vector<int> select_top_fraction(const ScoreTable& scores, const SelectionConfig& config) {
    config.validate();
    if (scores.rows.empty()) throw Error("select_top_fraction: empty score table");
    for (const auto& r : scores.rows)
        if (!std::isfinite(r.tau)) throw Error("select_top_fraction: non-finite score for cluster " +
                                               std::to_string(r.cluster_id));
    const std::size_t k = selection_size(scores.rows.size(), config.fraction);
    std::vector<int> out;
    for (std::size_t idx : ranking_order(scores.rows)) {
        if (out.size() == k) break;
        const auto& r = scores.rows[idx];
        if (config.require_positive && !(r.tau > 0.0)) break;
        out.push_back(r.cluster_id);
    }
    if (out.empty()) throw Error("empty selection: no cluster has a positive score");
    return out;
}

std::vector<int> random_select(std::size_t n, double fraction, std::uint64_t seed) {
    SelectionConfig{fraction, false}.validate();
    if (n == 0) throw Error("random_select: no clusters");
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_rng(seed, 0x7A11D);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(selection_size(n, fraction));
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::string to_string(SimilarityMode mode) {
    switch (mode) {
        case SimilarityMode::SR: return "sr";
        case SimilarityMode::AR: return "ar";
        case SimilarityMode::BR: return "br";
    }
    return "?";
}

SimilarityMode similarity_mode_from_string(const std::string& name) {
    if (name == "sr" || name == "SR") return SimilarityMode::SR;
    if (name == "ar" || name == "AR") return SimilarityMode::AR;
    if (name == "br" || name == "BR") return SimilarityMode::BR;
    throw Error("unknown similarity mode '" + name + "' (expected sr, ar or br)");
}

namespace {

struct WindowSet {
    std::vector<Vector> features;  // one flattened window each
    std::vector<int> start;        // first step covered (row index)
};

Vector step_features(const StateActionPair& p, SimilarityMode mode) {
    Vector f;
    if (mode != SimilarityMode::AR) f.insert(f.end(), p.state.begin(), p.state.end());
    if (mode != SimilarityMode::SR) f.insert(f.end(), p.action.begin(), p.action.end());
    return f;
}

WindowSet windows_of(const Trajectory& traj, int h, SimilarityMode mode) {
    std::vector<Vector> rows;
    for (const auto& p : traj.pairs) rows.push_back(step_features(p, mode));
    while (static_cast<int>(rows.size()) < h) rows.push_back(rows.back());
    WindowSet ws;
    const int count = static_cast<int>(rows.size()) - h + 1;
    for (int s = 0; s < count; ++s) {
        Vector w;
        for (int k = 0; k < h; ++k) w.insert(w.end(), rows[s + k].begin(), rows[s + k].end());
        ws.features.push_back(std::move(w));
        ws.start.push_back(s);
    }
    return ws;
}

double sq_distance(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

ScoreTable similarity_scores(const std::vector<Trajectory>& prior, const std::vector<Cluster>& clusters,
                             const std::vector<Trajectory>& target, const SimilarityConfig& config) {
    if (config.window < 1) throw Error("similarity window must be >= 1");
    if (target.empty()) throw Error("similarity_scores: empty target dataset");
    const int h = config.window;

    std::vector<Vector> target_windows;
    for (const auto& t : target) {
        if (t.pairs.empty()) throw Error("similarity_scores: empty target trajectory");
        auto ws = windows_of(t, h, config.mode);
        for (auto& w : ws.features) target_windows.push_back(std::move(w));
    }

    // per prior trajectory: best-window score for each step it covers
    std::vector<Vector> step_best(prior.size());
    parallel_for(
        prior.size(),
        [&](std::size_t ti) {
            const auto& traj = prior[ti];
            if (traj.pairs.empty()) throw Error("similarity_scores: empty prior trajectory");
            const auto ws = windows_of(traj, h, config.mode);
            Vector best(traj.size(), -std::numeric_limits<double>::infinity());
            for (std::size_t w = 0; w < ws.features.size(); ++w) {
                double d2 = std::numeric_limits<double>::infinity();
                for (const auto& tw : target_windows) d2 = std::min(d2, sq_distance(ws.features[w], tw));
                const double score = -std::sqrt(d2);
                const int end = std::min<int>(ws.start[w] + h, static_cast<int>(traj.size()));
                for (int s = ws.start[w]; s < end; ++s) best[s] = std::max(best[s], score);
            }
            step_best[ti] = std::move(best);
        },
        config.workers);

    Vector scores(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        const auto& cl = clusters[c];
        if (cl.traj_index >= prior.size()) throw Error("similarity_scores: cluster refers to a missing trajectory");
        const auto& traj = prior[cl.traj_index];
        // cluster start_step is a step index; map to row positions
        std::size_t row = 0;
        while (row < traj.size() && traj.pairs[row].step_idx != cl.start_step) ++row;
        if (row + cl.length > traj.size()) throw Error("similarity_scores: cluster outside its trajectory");
        double s = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < cl.length; ++k) s = std::max(s, step_best[cl.traj_index][row + k]);
        scores[c] = s;
    }
    return ScoreTable::from_scores(scores, to_string(config.mode), "similarity");
}

ScoreTable aggregate_scores(const std::vector<Vector>& pair_scores, const std::vector<Trajectory>& prior,
                            const std::vector<Cluster>& clusters, AggregateRule rule) {
    if (pair_scores.size() != prior.size()) throw Error("aggregate_scores: coverage gap (trajectory count differs)");
    for (std::size_t t = 0; t < prior.size(); ++t)
        if (pair_scores[t].size() != prior[t].size())
            throw Error("aggregate_scores: coverage gap in trajectory " + std::to_string(prior[t].traj_id));
    Vector scores(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        const auto& cl = clusters[c];
        const auto& traj = prior.at(cl.traj_index);
        std::size_t row = 0;
        while (row < traj.size() && traj.pairs[row].step_idx != cl.start_step) ++row;
        if (row + cl.length > traj.size()) throw Error("aggregate_scores: cluster outside its trajectory");
        double s = 0.0;
        for (int k = 0; k < cl.length; ++k) s += pair_scores[cl.traj_index][row + k];
        scores[c] = rule == AggregateRule::mean ? s / cl.length : s;
    }
    return ScoreTable::from_scores(scores, "aggregate", "pair_scores");
}

void save_id_list(const std::vector<int>& ids, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write id list " + path.string());
    for (int id : ids) out << id << '\n';
}

std::vector<int> load_id_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open id list " + path.string());
    std::vector<int> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        try {
            ids.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw Error(path.string() + ": malformed id '" + line + "'");
        }
    }
    return ids;
}

}  // namespace datamil
