// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <vector>

#include "datamil/dataset.hpp"
#include "datamil/policy.hpp"
#include "datamil/toyenv.hpp"

namespace datamil {

enum class WeightRule { uniform, near_goal };

/// Per-pair weights of the proxy metric. near_goal assigns `weight` to pairs whose
/// position lies within `radius` of their task's goal and 1 elsewhere.
struct StateWeights {
    WeightRule rule = WeightRule::uniform;
    double radius = 0.2;
    double weight = 2.0;
    std::vector<toyenv::Vec2> goals;  // indexed by task_id; required for near_goal

    static StateWeights uniform() { return {}; }
    static StateWeights near_goal(const toyenv::EnvSpec& spec, double radius = 0.2, double weight = 2.0);

    /// Global multiplier applied on top of the rule (1 keeps the rule's {1, w} values).
    double scale = 1.0;

    double operator()(const StateActionPair& pair) const;
};

struct ProxyConfig {
    LossKind loss = LossKind::nll;
    StateWeights weights;
};

/// -(1/n) sum_{(s,a)} w(s,a) * loss(pi(s), a) over all n target pairs; higher is better.
double proxy_metric(std::span<const double> params, const PolicyConfig& config,
                    const std::vector<Trajectory>& target_eval, LossKind loss, const StateWeights& weights);

/// Exact gradient of proxy_metric with respect to the policy parameters.
Vector grad_proxy(std::span<const double> params, const PolicyConfig& config, const std::vector<Trajectory>& target_eval,
                  LossKind loss, const StateWeights& weights);

}  // namespace datamil
