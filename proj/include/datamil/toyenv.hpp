// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "datamil/common.hpp"
#include "datamil/dataset.hpp"

namespace datamil::toyenv {

using Vec2 = std::array<double, 2>;

/// Multi-task point-reach environment: a point mass moves by dt * clip(action) and task k
/// asks it to reach the k-th of num_tasks goals equally spaced on the unit circle.
struct EnvSpec {
    int num_tasks = 8;
    double dt = 0.1;
    double gain = 5.0;
    double action_clip = 1.0;
    double success_radius = 0.1;
    int max_steps = 50;
    double start_low = -1.0;
    double start_high = 1.0;
    /// When false the goal half of the observation is zeroed.
    bool goal_conditioned = true;

    void validate() const;
    Vec2 goal(int task_id) const;
    std::vector<Vec2> goals() const;

    static constexpr std::size_t observation_dim = 4;
    static constexpr std::size_t action_dim = 2;

    friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

struct RolloutResult {
    bool success = false;
    int steps_taken = 0;
    double final_distance = 0.0;
};

/// Maps an observation (pos, goal) to an action; evaluation uses the policy mean.
using PolicyFn = std::function<Vector(std::span<const double>)>;

Vec2 env_step(const EnvSpec& spec, const Vec2& pos, const Vec2& action);
Vec2 expert_action(const EnvSpec& spec, const Vec2& pos, const Vec2& goal);
Vector observation(const EnvSpec& spec, const Vec2& pos, int task_id);
double distance(const Vec2& a, const Vec2& b);

Vec2 sample_start(const EnvSpec& spec, std::mt19937_64& rng);

struct PriorOptions {
    int n_expert_per_task = 5;
    int n_noisy_per_task = 15;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
    int first_traj_id = 0;
};

/// Scripted experts run until they enter the success radius. Noisy trajectories add
/// N(0, sigma^2) to each expert action before clipping and run for the full max_steps
/// horizon, like segments sampled from an exploration buffer.
std::vector<Trajectory> generate_prior(const EnvSpec& spec, const PriorOptions& opts);

/// Clean expert demonstrations of one task, tagged as target data.
std::vector<Trajectory> generate_target(const EnvSpec& spec, int task_id, int n_demos, std::uint64_t seed,
                                        int first_traj_id);

RolloutResult rollout(const PolicyFn& policy, const EnvSpec& spec, int task_id, const Vec2& start);

/// Success fraction over n_rollouts episodes from seeded random starts. Rollout i draws
/// its start from make_rng(seed, i), so the result does not depend on execution order.
double rollout_success_rate(const PolicyFn& policy, const EnvSpec& spec, int task_id, int n_rollouts,
                            std::uint64_t seed);

/// Replays the stored actions from the stored initial position; success means the final
/// replayed position lies within the success radius.
RolloutResult replay_trajectory(const EnvSpec& spec, const Trajectory& traj);

/// Positions reached by replaying the stored actions (one per pair, then the final one).
std::vector<Vec2> replay_positions(const EnvSpec& spec, const Trajectory& traj);

PolicyFn expert_policy(const EnvSpec& spec, int task_id);

}  // namespace datamil::toyenv
