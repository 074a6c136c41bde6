// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/proxy.hpp"

#include <cmath>

namespace datamil {

StateWeights StateWeights::near_goal(const toyenv::EnvSpec& spec, double radius, double weight) {
    if (!(radius > 0.0) || !(weight > 0.0)) throw Error("near_goal weights need a positive radius and weight");
    StateWeights w;
    w.rule = WeightRule::near_goal;
    w.radius = radius;
    w.weight = weight;
    w.goals = spec.goals();
    return w;
}

double StateWeights::operator()(const StateActionPair& pair) const {
    if (rule == WeightRule::uniform) return scale;
    if (pair.task_id < 0 || static_cast<std::size_t>(pair.task_id) >= goals.size())
        throw Error("near_goal weights: no goal for task " + std::to_string(pair.task_id));
    const auto& g = goals[static_cast<std::size_t>(pair.task_id)];
    const double d = std::hypot(pair.state[0] - g[0], pair.state[1] - g[1]);
    return scale * (d <= radius ? weight : 1.0);
}

namespace {

std::vector<WeightedSample> weighted_samples(const std::vector<Trajectory>& target, const StateWeights& weights) {
    std::vector<WeightedSample> out;
    for (const auto& t : target)
        for (const auto& p : t.pairs) out.push_back({p.state, p.action, weights(p)});
    if (out.empty()) throw Error("proxy metric needs at least one target pair");
    return out;
}

}  // namespace

double proxy_metric(std::span<const double> params, const PolicyConfig& config,
                    const std::vector<Trajectory>& target_eval, LossKind loss, const StateWeights& weights) {
    const auto samples = weighted_samples(target_eval, weights);
    double total = 0.0;
    for (const auto& s : samples) total += s.weight * bc_loss(params, config, s.state, s.action, loss);
    if (!std::isfinite(total)) throw NumericalError("non-finite proxy loss", -1);
    return -total / static_cast<double>(samples.size());
}

Vector grad_proxy(std::span<const double> params, const PolicyConfig& config, const std::vector<Trajectory>& target_eval,
                  LossKind loss, const StateWeights& weights) {
    auto samples = weighted_samples(target_eval, weights);
    const double c = -1.0 / static_cast<double>(samples.size());
    for (auto& s : samples) s.weight *= c;
    Vector g(params.size(), 0.0);
    const double total = accumulate_weighted_grad(params, config, samples, loss, g);
    if (!std::isfinite(total)) throw NumericalError("non-finite proxy loss", -1);
    return g;
}

}  // namespace datamil
