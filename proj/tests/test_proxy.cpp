// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/proxy.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace datamil;
using testutil::rel_err;

namespace {

// Zero network whose output bias is set to `mean`.
Params constant_policy(const PolicyConfig& cfg, const Vector& mean) {
    Params p(cfg.num_params(), 0.0);
    const auto& last = make_layout(cfg).layers.back();
    for (std::size_t j = 0; j < mean.size(); ++j) p[last.bias_offset + j] = mean[j];
    return p;
}

Trajectory single_pair(int task, Vector state, Vector action) {
    return Trajectory::from_rows(0, task, SourceTag::target, {std::move(state)}, {std::move(action)});
}

}  // namespace

TEST_SUITE("proxy") {

TEST_CASE("perfect fit scores zero under L1") {
    const auto cfg = testutil::small_policy();
    const auto p = constant_policy(cfg, {0.2, -0.4});
    std::vector<Vector> s(4, Vector{0.1, 0.1, 0.0, 0.0}), a(4, Vector{0.2, -0.4});
    const std::vector<Trajectory> target{Trajectory::from_rows(0, 0, SourceTag::target, s, a)};
    CHECK(proxy_metric(p, cfg, target, LossKind::l1, StateWeights::uniform()) == 0.0);
    for (double g : grad_proxy(p, cfg, target, LossKind::l1, StateWeights::uniform())) CHECK(g == 0.0);
}

TEST_CASE("sign, normalization and near-goal doubling") {
    const toyenv::EnvSpec spec;
    const auto cfg = testutil::small_policy();
    const auto p = constant_policy(cfg, {0.5, 0.5});
    // l1 loss of this pair is exactly 1; the state sits on task 0's goal
    const std::vector<Trajectory> target{single_pair(0, {1.0, 0.0, 1.0, 0.0}, {0.0, 0.0})};
    CHECK(proxy_metric(p, cfg, target, LossKind::l1, StateWeights::uniform()) == -1.0);
    const auto near = StateWeights::near_goal(spec, 0.2, 2.0);
    CHECK(proxy_metric(p, cfg, target, LossKind::l1, near) == -2.0);
    // far from the goal the weight stays 1
    const std::vector<Trajectory> far{single_pair(0, {-0.5, 0.0, 1.0, 0.0}, {0.0, 0.0})};
    CHECK(proxy_metric(p, cfg, far, LossKind::l1, near) == -1.0);
}

TEST_CASE("near-goal weights take values in {1, w}") {
    const toyenv::EnvSpec spec;
    const auto near = StateWeights::near_goal(spec, 0.3, 3.0);
    const auto target = toyenv::generate_target(spec, 2, 3, 1, 0);
    int heavy = 0;
    for (const auto& t : target)
        for (const auto& pair : t.pairs) {
            const double w = near(pair);
            CHECK((w == 1.0 || w == 3.0));
            heavy += w == 3.0;
            CHECK(StateWeights::uniform()(pair) == 1.0);
        }
    CHECK(heavy > 0);
    CHECK_THROWS_AS(StateWeights::near_goal(spec, 0.0, 2.0), Error);
}

TEST_CASE("proxy gradient matches central finite differences") {
    const toyenv::EnvSpec spec;
    const auto target = toyenv::generate_target(spec, 0, 2, 5, 0);
    for (auto head : {Head::gaussian_learned_logstd, Head::gaussian_state_logstd}) {
        for (auto weights : {StateWeights::uniform(), StateWeights::near_goal(spec)}) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                const auto cfg = testutil::small_policy(head);
                const auto p = init_params(cfg, seed);
                const auto g = grad_proxy(p, cfg, target, LossKind::nll, weights);
                const double eps = 1e-5;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    auto hi = p, lo = p;
                    hi[i] += eps;
                    lo[i] -= eps;
                    const double fd = (proxy_metric(hi, cfg, target, LossKind::nll, weights) -
                                       proxy_metric(lo, cfg, target, LossKind::nll, weights)) /
                                      (2 * eps);
                    if (std::abs(fd) < 1e-7) CHECK(std::abs(g[i] - fd) <= 1e-5);
                    else CHECK(rel_err(g[i], fd) <= 1e-5);
                }
            }
        }
    }
}

TEST_CASE("scaling the weights scales the gradient") {
    const toyenv::EnvSpec spec;
    const auto target = toyenv::generate_target(spec, 3, 2, 5, 0);
    const auto cfg = testutil::small_policy();
    const auto p = init_params(cfg, 2);
    auto w = StateWeights::near_goal(spec);
    const auto g1 = grad_proxy(p, cfg, target, LossKind::nll, w);
    w.scale = 3.5;
    const auto g2 = grad_proxy(p, cfg, target, LossKind::nll, w);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g2[i] - 3.5 * g1[i]) <= 1e-12 * std::max(1.0, std::abs(g2[i])));
}

TEST_CASE("concatenating target trajectories leaves the proxy unchanged") {
    const toyenv::EnvSpec spec;
    const auto target = toyenv::generate_target(spec, 0, 3, 8, 0);
    std::vector<Vector> s, a;
    for (const auto& t : target)
        for (const auto& pair : t.pairs) {
            s.push_back(pair.state);
            a.push_back(pair.action);
        }
    const std::vector<Trajectory> joined{Trajectory::from_rows(0, 0, SourceTag::target, s, a)};
    const auto cfg = testutil::small_policy();
    const auto p = init_params(cfg, 1);
    for (auto kind : {LossKind::nll, LossKind::l1}) {
        const double x = proxy_metric(p, cfg, target, kind, StateWeights::uniform());
        const double y = proxy_metric(p, cfg, joined, kind, StateWeights::uniform());
        CHECK(x == y);
    }
}

TEST_CASE("empty target is an error") {
    const auto cfg = testutil::small_policy();
    const auto p = init_params(cfg, 1);
    CHECK_THROWS_AS(proxy_metric(p, cfg, {}, LossKind::nll, StateWeights::uniform()), Error);
}

}  // TEST_SUITE
