// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/toyenv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace datamil::toyenv {

namespace {

double clip(double v, double bound) { return std::clamp(v, -bound, bound); }

Vec2 pos_of(const Vector& state) { return {state[0], state[1]}; }

}  // namespace

void EnvSpec::validate() const {
    if (num_tasks < 1) throw Error("EnvSpec: num_tasks must be >= 1");
    if (!(success_radius > 0.0)) throw Error("EnvSpec: success_radius must be positive");
    if (max_steps < 1) throw Error("EnvSpec: max_steps must be >= 1");
    if (!(dt > 0.0) || !(action_clip > 0.0)) throw Error("EnvSpec: dt and action_clip must be positive");
    if (!(start_high > start_low)) throw Error("EnvSpec: empty start box");
}

Vec2 EnvSpec::goal(int task_id) const {
    if (task_id < 0 || task_id >= num_tasks) throw Error("task_id out of range");
    const double angle = 2.0 * std::numbers::pi * task_id / num_tasks;
    return {std::cos(angle), std::sin(angle)};
}

std::vector<Vec2> EnvSpec::goals() const {
    std::vector<Vec2> out;
    for (int k = 0; k < num_tasks; ++k) out.push_back(goal(k));
    return out;
}

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

Vec2 env_step(const EnvSpec& spec, const Vec2& pos, const Vec2& action) {
    return {pos[0] + spec.dt * clip(action[0], spec.action_clip), pos[1] + spec.dt * clip(action[1], spec.action_clip)};
}

Vec2 expert_action(const EnvSpec& spec, const Vec2& pos, const Vec2& goal) {
    return {clip(spec.gain * (goal[0] - pos[0]), spec.action_clip), clip(spec.gain * (goal[1] - pos[1]), spec.action_clip)};
}

Vector observation(const EnvSpec& spec, const Vec2& pos, int task_id) {
    if (!spec.goal_conditioned) return {pos[0], pos[1], 0.0, 0.0};
    const Vec2 g = spec.goal(task_id);
    return {pos[0], pos[1], g[0], g[1]};
}

Vec2 sample_start(const EnvSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(spec.start_low, spec.start_high);
    const double x = u(rng);
    const double y = u(rng);
    return {x, y};
}

namespace {

Trajectory run_scripted(const EnvSpec& spec, int task_id, int traj_id, SourceTag tag, double noise_sigma,
                        std::mt19937_64& rng) {
    const Vec2 goal = spec.goal(task_id);
    Vec2 pos = sample_start(spec, rng);
    while (distance(pos, goal) < spec.success_radius) pos = sample_start(spec, rng);

    std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
    const bool noisy = noise_sigma > 0.0;
    std::vector<Vector> states, actions;
    for (int t = 0; t < spec.max_steps; ++t) {
        if (!noisy && distance(pos, goal) < spec.success_radius) break;
        Vec2 a = expert_action(spec, pos, goal);
        if (noisy) {
            a[0] = clip(a[0] + noise(rng), spec.action_clip);
            a[1] = clip(a[1] + noise(rng), spec.action_clip);
        }
        states.push_back(observation(spec, pos, task_id));
        actions.push_back({a[0], a[1]});
        pos = env_step(spec, pos, a);
    }
    return Trajectory::from_rows(traj_id, task_id, tag, states, actions);
}

}  // namespace

std::vector<Trajectory> generate_prior(const EnvSpec& spec, const PriorOptions& opts) {
    spec.validate();
    if (opts.n_expert_per_task < 0 || opts.n_noisy_per_task < 0) throw Error("generate_prior: negative counts");
    std::vector<Trajectory> out;
    int next_id = opts.first_traj_id;
    std::uint64_t stream = 0;
    for (int task = 0; task < spec.num_tasks; ++task) {
        for (int i = 0; i < opts.n_expert_per_task; ++i) {
            auto rng = make_rng(opts.seed, stream++);
            out.push_back(run_scripted(spec, task, next_id++, SourceTag::expert, 0.0, rng));
        }
        for (int i = 0; i < opts.n_noisy_per_task; ++i) {
            auto rng = make_rng(opts.seed, stream++);
            out.push_back(run_scripted(spec, task, next_id++, SourceTag::suboptimal, opts.noise_sigma, rng));
        }
    }
    return out;
}

std::vector<Trajectory> generate_target(const EnvSpec& spec, int task_id, int n_demos, std::uint64_t seed,
                                        int first_traj_id) {
    spec.validate();
    std::vector<Trajectory> out;
    for (int i = 0; i < n_demos; ++i) {
        auto rng = make_rng(seed, 0x7A000000ULL + static_cast<std::uint64_t>(i));
        out.push_back(run_scripted(spec, task_id, first_traj_id + i, SourceTag::target, 0.0, rng));
    }
    return out;
}

RolloutResult rollout(const PolicyFn& policy, const EnvSpec& spec, int task_id, const Vec2& start) {
    const Vec2 goal = spec.goal(task_id);
    Vec2 pos = start;
    int steps = 0;
    while (distance(pos, goal) >= spec.success_radius && steps < spec.max_steps) {
        const Vector obs = observation(spec, pos, task_id);
        const Vector a = policy(obs);
        if (a.size() != 2) throw Error("policy returned an action of the wrong dimension");
        pos = env_step(spec, pos, {a[0], a[1]});
        ++steps;
    }
    const double d = distance(pos, goal);
    return {d < spec.success_radius, steps, d};
}

double rollout_success_rate(const PolicyFn& policy, const EnvSpec& spec, int task_id, int n_rollouts,
                            std::uint64_t seed) {
    if (n_rollouts < 1) throw Error("rollout_success_rate: n_rollouts must be >= 1");
    int successes = 0;
    for (int i = 0; i < n_rollouts; ++i) {
        auto rng = make_rng(seed, 0x9011000000ULL + static_cast<std::uint64_t>(i));
        successes += rollout(policy, spec, task_id, sample_start(spec, rng)).success ? 1 : 0;
    }
    return static_cast<double>(successes) / n_rollouts;
}

std::vector<Vec2> replay_positions(const EnvSpec& spec, const Trajectory& traj) {
    if (traj.pairs.empty()) throw Error("replay of empty trajectory");
    std::vector<Vec2> out{pos_of(traj.pairs.front().state)};
    for (const auto& p : traj.pairs) out.push_back(env_step(spec, out.back(), {p.action[0], p.action[1]}));
    return out;
}

RolloutResult replay_trajectory(const EnvSpec& spec, const Trajectory& traj) {
    const auto positions = replay_positions(spec, traj);
    const double d = distance(positions.back(), spec.goal(traj.task_id));
    return {d < spec.success_radius, static_cast<int>(traj.size()), d};
}

PolicyFn expert_policy(const EnvSpec& spec, int task_id) {
    const Vec2 goal = spec.goal(task_id);
    return [spec, goal](std::span<const double> obs) {
        const Vec2 a = expert_action(spec, {obs[0], obs[1]}, goal);
        return Vector{a[0], a[1]};
    };
}

}  // namespace datamil::toyenv
