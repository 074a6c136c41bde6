// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace datamil {

using nlohmann::json;

std::string to_string(SourceTag tag) {
    switch (tag) {
        case SourceTag::expert: return "expert";
        case SourceTag::suboptimal: return "suboptimal";
        case SourceTag::target: return "target";
    }
    return "expert";
}

SourceTag source_tag_from_string(const std::string& name) {
    if (name == "expert") return SourceTag::expert;
    if (name == "suboptimal") return SourceTag::suboptimal;
    if (name == "target") return SourceTag::target;
    throw Error("unknown source_tag '" + name + "'");
}

Trajectory Trajectory::from_rows(int traj_id, int task_id, SourceTag tag, const std::vector<Vector>& states,
                                 const std::vector<Vector>& actions) {
    if (states.size() != actions.size()) throw Error("states and actions have different lengths");
    Trajectory t{traj_id, task_id, tag, {}};
    t.pairs.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i)
        t.pairs.push_back({states[i], actions[i], task_id, traj_id, static_cast<int>(i)});
    return t;
}

void validate_dataset(const std::vector<Trajectory>& trajs) {
    std::size_t sdim = 0, adim = 0;
    for (const auto& t : trajs) {
        if (t.pairs.empty()) throw Error("trajectory " + std::to_string(t.traj_id) + " is empty");
        int prev = -1;
        for (const auto& p : t.pairs) {
            if (p.traj_id != t.traj_id || p.task_id != t.task_id)
                throw Error("trajectory " + std::to_string(t.traj_id) + " has a pair with mismatched ids");
            if (p.step_idx <= prev)
                throw Error("trajectory " + std::to_string(t.traj_id) + " has non-increasing step_idx");
            prev = p.step_idx;
            if (sdim == 0) {
                sdim = p.state.size();
                adim = p.action.size();
                if (sdim == 0 || adim == 0) throw Error("empty state or action vector");
            }
            if (p.state.size() != sdim) throw Error("inconsistent state dimension");
            if (p.action.size() != adim) throw Error("inconsistent action dimension");
        }
    }
}

std::size_t count_pairs(const std::vector<Trajectory>& trajs) {
    std::size_t n = 0;
    for (const auto& t : trajs) n += t.size();
    return n;
}

// ---------------------------------------------------------------------------

std::string Granularity::to_string() const {
    switch (kind) {
        case GranularityKind::trajectory: return "trajectory";
        case GranularityKind::pair: return "pair";
        case GranularityKind::subtrajectory: return "subtrajectory:" + std::to_string(horizon);
    }
    return "trajectory";
}

Granularity Granularity::parse(const std::string& text) {
    if (text == "trajectory") return trajectory();
    if (text == "pair") return pair();
    const std::string prefix = "subtrajectory:";
    if (text.rfind(prefix, 0) == 0) {
        int h = 0;
        try {
            h = std::stoi(text.substr(prefix.size()));
        } catch (const std::exception&) {
            throw Error("bad granularity '" + text + "'");
        }
        if (h <= 0) throw Error("bad granularity '" + text + "' (horizon must be positive)");
        return subtrajectory(h);
    }
    throw Error("bad granularity '" + text + "' (expected trajectory, pair or subtrajectory:H)");
}

std::vector<Cluster> make_clusters(const std::vector<Trajectory>& dataset, Granularity granularity) {
    if (dataset.empty()) throw Error("make_clusters: empty dataset");
    if (granularity.kind == GranularityKind::subtrajectory && granularity.horizon <= 0)
        throw Error("make_clusters: sub-trajectory horizon must be positive");

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dataset[a].traj_id < dataset[b].traj_id; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (dataset[order[i]].traj_id == dataset[order[i - 1]].traj_id)
            throw Error("make_clusters: duplicate traj_id " + std::to_string(dataset[order[i]].traj_id));

    std::vector<Cluster> out;
    auto push = [&](std::size_t ti, int start, int len) {
        out.push_back({static_cast<int>(out.size()), granularity, dataset[ti].traj_id, ti, start, len});
    };
    for (std::size_t ti : order) {
        const int len = static_cast<int>(dataset[ti].size());
        if (len == 0) throw Error("make_clusters: empty trajectory " + std::to_string(dataset[ti].traj_id));
        switch (granularity.kind) {
            case GranularityKind::trajectory: push(ti, 0, len); break;
            case GranularityKind::pair:
                for (int s = 0; s < len; ++s) push(ti, s, 1);
                break;
            case GranularityKind::subtrajectory:
                for (int s = 0; s < len; s += granularity.horizon) push(ti, s, std::min(granularity.horizon, len - s));
                break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void SubsetMask::validate() const {
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw Error("mask weight outside [0,1]");
        if (kind == MaskKind::binary && w != 0.0 && w != 1.0) throw Error("binary mask has a non-binary entry");
    }
}

SubsetMask SubsetMask::ones(std::size_t n, MaskKind kind) { return {Vector(n, 1.0), kind}; }
SubsetMask SubsetMask::zeros(std::size_t n, MaskKind kind) { return {Vector(n, 0.0), kind}; }

SubsetMask SubsetMask::from_ids(std::size_t n, const std::vector<int>& ids) {
    SubsetMask m = zeros(n);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= n) throw Error("cluster id out of range");
        m.weights[static_cast<std::size_t>(id)] = 1.0;
    }
    return m;
}

SubsetMask sample_bernoulli_mask(std::size_t n, double p, std::uint64_t seed) {
    if (!(p > 0.0 && p < 1.0)) throw Error("sample_bernoulli_mask: p must lie in (0,1)");
    auto rng = make_rng(seed, 0xB3);
    std::bernoulli_distribution coin(p);
    SubsetMask m = SubsetMask::zeros(n);
    for (auto& w : m.weights) w = coin(rng) ? 1.0 : 0.0;
    return m;
}

TargetSplit split_target(const std::vector<Trajectory>& target, std::uint64_t seed) {
    if (target.size() < 2) throw Error("split_target: need at least 2 target trajectories");
    std::vector<std::size_t> order(target.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, 0x5917);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = (target.size() + 1) / 2;
    TargetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < half ? split.estimation_half : split.evaluation_half).push_back(target[order[i]]);
    return split;
}

// ---------------------------------------------------------------------------

namespace {

json trajectory_to_json(const Trajectory& t) {
    json states = json::array(), actions = json::array();
    bool contiguous = true;
    for (std::size_t i = 0; i < t.pairs.size(); ++i) {
        states.push_back(t.pairs[i].state);
        actions.push_back(t.pairs[i].action);
        contiguous = contiguous && t.pairs[i].step_idx == static_cast<int>(i);
    }
    json j = {{"traj_id", t.traj_id},
              {"task_id", t.task_id},
              {"source_tag", to_string(t.source_tag)},
              {"states", std::move(states)},
              {"actions", std::move(actions)}};
    if (!contiguous) {
        json steps = json::array();
        for (const auto& p : t.pairs) steps.push_back(p.step_idx);
        j["steps"] = std::move(steps);
    }
    return j;
}

Trajectory trajectory_from_json(const json& j) {
    auto states = j.at("states").get<std::vector<Vector>>();
    auto actions = j.at("actions").get<std::vector<Vector>>();
    Trajectory t = Trajectory::from_rows(j.at("traj_id").get<int>(), j.at("task_id").get<int>(),
                                         source_tag_from_string(j.at("source_tag").get<std::string>()), states,
                                         actions);
    if (j.contains("steps")) {
        auto steps = j.at("steps").get<std::vector<int>>();
        if (steps.size() != t.pairs.size()) throw Error("steps length mismatch");
        for (std::size_t i = 0; i < steps.size(); ++i) t.pairs[i].step_idx = steps[i];
    }
    return t;
}

}  // namespace

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trajectory file " + path.string());
    std::vector<Trajectory> out;
    std::string line;
    std::size_t lineno = 0, sdim = 0, adim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Trajectory t;
        try {
            t = trajectory_from_json(json::parse(line));
            validate_dataset({t});
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed trajectory record: " + e.what());
        }
        if (out.empty()) {
            sdim = t.state_dim();
            adim = t.action_dim();
        } else if (t.state_dim() != sdim || t.action_dim() != adim) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": state/action dimension mismatch (expected " +
                        std::to_string(sdim) + "/" + std::to_string(adim) + ", got " + std::to_string(t.state_dim()) +
                        "/" + std::to_string(t.action_dim()) + ")");
        }
        out.push_back(std::move(t));
    }
    return out;
}

void save_trajectories(const std::vector<Trajectory>& trajs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write trajectory file " + path.string());
    for (const auto& t : trajs) out << trajectory_to_json(t).dump() << '\n';
    if (!out) throw Error("write failed for " + path.string());
}

SubsetMask load_mask(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open mask file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw Error(path.string() + ": malformed mask file: " + e.what());
    }
    SubsetMask m;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "binary") m.kind = MaskKind::binary;
    else if (kind == "continuous") m.kind = MaskKind::continuous;
    else throw Error("unknown mask kind '" + kind + "'");
    m.weights = j.at("weights").get<Vector>();
    m.validate();
    return m;
}

void save_mask(const SubsetMask& mask, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write mask file " + path.string());
    json j = {{"kind", mask.kind == MaskKind::binary ? "binary" : "continuous"}, {"weights", mask.weights}};
    out << j.dump() << '\n';
}

}  // namespace datamil
