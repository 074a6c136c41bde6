// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <algorithm>
#include <numeric>
#include <set>

#include "datamil/estimators.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace datamil;
using testutil::rel_err;

namespace {

// Dense Gaussian elimination with partial pivoting in long double; independent of the
// library's Eigen solve.
std::vector<long double> solve_dense(std::vector<std::vector<long double>> a, std::vector<long double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const long double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<long double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        long double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

/// Normal equations (Z^T Z + lambda I) tau = Z^T y without an offset.
std::vector<long double> normal_equations_oracle(const std::vector<SubsetOutcome>& outcomes, long double lambda) {
    const std::size_t n = outcomes.front().mask.size();
    std::vector<std::vector<long double>> a(n, std::vector<long double>(n, 0.0L));
    std::vector<long double> b(n, 0.0L);
    for (const auto& o : outcomes)
        for (std::size_t i = 0; i < n; ++i) {
            b[i] += o.mask.weights[i] * static_cast<long double>(o.outcome);
            for (std::size_t j = 0; j < n; ++j) a[i][j] += o.mask.weights[i] * o.mask.weights[j];
        }
    for (std::size_t i = 0; i < n; ++i) a[i][i] += lambda;
    return solve_dense(a, b);
}

std::vector<SubsetOutcome> all_subsets(const Vector& tau, double offset) {
    const std::size_t n = tau.size();
    std::vector<SubsetOutcome> out;
    for (std::size_t bits = 0; bits < (1u << n); ++bits) {
        SubsetOutcome o;
        o.mask = SubsetMask::zeros(n);
        double y = offset;
        for (std::size_t i = 0; i < n; ++i)
            if (bits >> i & 1u) {
                o.mask.weights[i] = 1.0;
                y += tau[i];
            }
        o.outcome = y;
        out.push_back(o);
    }
    return out;
}

struct Toy {
    std::vector<Trajectory> prior;
    std::vector<Trajectory> target;
    std::vector<Cluster> clusters;
    Toy(int experts = 1, int noisy = 1) {
        toyenv::EnvSpec spec;
        spec.goal_conditioned = false;
        toyenv::PriorOptions opts;
        opts.n_expert_per_task = experts;
        opts.n_noisy_per_task = noisy;
        opts.seed = 6;
        prior = toyenv::generate_prior(spec, opts);
        target = toyenv::generate_target(spec, 0, 3, 2, 5000);
        clusters = make_clusters(prior, Granularity::trajectory());
    }
};

TrainConfig gd_config(int steps) {
    TrainConfig c;
    c.policy = testutil::small_policy(Head::gaussian_learned_logstd, {6});
    c.optimizer = OptimizerKind::gd_full_batch;
    c.steps = steps;
    c.learning_rate = 0.05;
    c.loss = LossKind::nll;
    c.seed = 1;
    return c;
}

double proxy_at(const Toy& toy, const SubsetMask& z, const TrainConfig& cfg, const ProxyConfig& proxy) {
    const auto r = train(toy.clusters, toy.prior, z, cfg);
    return proxy_metric(r.params, cfg.policy, toy.target, proxy.loss, proxy.weights);
}

/// Proxy after retraining with z_i = 1 + delta and every other entry 1. Entries above 1
/// fall outside the mask domain, so positive shifts use the equivalent run with all other
/// entries at 1 / (1 + delta) and the learning rate scaled by 1 + delta (the step is
/// linear in z). Requires a run without co-training.
double perturbed_proxy(const Toy& toy, std::size_t i, double delta, const TrainConfig& cfg, const ProxyConfig& proxy) {
    const std::size_t n = toy.clusters.size();
    auto z = SubsetMask::ones(n, MaskKind::continuous);
    if (delta <= 0.0) {
        z.weights[i] += delta;
        return proxy_at(toy, z, cfg, proxy);
    }
    for (auto& w : z.weights) w = 1.0 / (1.0 + delta);
    z.weights[i] = 1.0;
    auto scaled = cfg;
    scaled.learning_rate *= 1.0 + delta;
    return proxy_at(toy, z, scaled, proxy);
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("regression on a consistent two-cluster system") {
    std::vector<SubsetOutcome> o{{SubsetMask{{0, 0}}, 0.0}, {SubsetMask{{1, 0}}, 2.0}, {SubsetMask{{0, 1}}, -1.0},
                                 {SubsetMask{{1, 1}}, 1.0}};
    const auto dm = regression_estimate(o, 0.0, false);
    REQUIRE(dm.tau.size() == 2);
    CHECK(std::abs(dm.tau[0] - 2.0) <= 1e-14);
    CHECK(std::abs(dm.tau[1] + 1.0) <= 1e-14);
    CHECK(dm.offset == 0.0);
}

TEST_CASE("planted linear systems match the normal-equations oracle") {
    std::mt19937_64 rng(77);
    for (std::size_t n = 1; n <= 6; ++n) {
        const Vector tau = testutil::random_vector(rng, n, 2.0);
        const auto outcomes = all_subsets(tau, 0.0);
        const auto dm = regression_estimate(outcomes, 0.0, false);
        const auto oracle = normal_equations_oracle(outcomes, 0.0L);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(dm.tau[i] - tau[i]) <= 1e-8);
            CHECK(std::abs(dm.tau[i] - static_cast<double>(oracle[i])) <= 1e-8);
        }
    }
}

TEST_CASE("ridge regression matches the oracle for lambda > 0") {
    std::mt19937_64 rng(5);
    const Vector tau = testutil::random_vector(rng, 5);
    auto outcomes = all_subsets(tau, 0.0);
    for (auto& o : outcomes) o.outcome += testutil::random_vector(rng, 1, 0.1)[0];
    for (double lambda : {0.5, 3.0}) {
        const auto dm = regression_estimate(outcomes, lambda, false);
        const auto oracle = normal_equations_oracle(outcomes, lambda);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(dm.tau[i] - static_cast<double>(oracle[i])) <= 1e-10);
    }
}

TEST_CASE("offset is recovered and left unpenalized") {
    const Vector tau{0.5, -1.5, 2.0, 0.25};
    const auto outcomes = all_subsets(tau, 3.0);
    const auto dm = regression_estimate(outcomes, 0.0, true);
    CHECK(std::abs(dm.offset - 3.0) <= 1e-10);
    for (std::size_t i = 0; i < tau.size(); ++i) CHECK(std::abs(dm.tau[i] - tau[i]) <= 1e-10);
    // with a huge ridge the intercept absorbs the mean outcome
    const auto shrunk = regression_estimate(outcomes, 1e12, true);
    double mean = 0.0;
    for (const auto& o : outcomes) mean += o.outcome;
    mean /= static_cast<double>(outcomes.size());
    CHECK(std::abs(shrunk.offset - mean) <= 1e-6);
}

TEST_CASE("ridge shrinks monotonically towards zero") {
    std::mt19937_64 rng(9);
    const auto outcomes = all_subsets(testutil::random_vector(rng, 4), 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 1.0, 1e6}) {
        const double norm = norm2(regression_estimate(outcomes, lambda, false).tau);
        CHECK(norm < prev);
        prev = norm;
    }
    CHECK(prev <= 1e-4);
}

TEST_CASE("singular systems without ridge are rejected") {
    std::vector<SubsetOutcome> o{{SubsetMask{{1, 1}}, 1.0}, {SubsetMask{{1, 1}}, 2.0}};
    CHECK_THROWS_AS(regression_estimate(o, 0.0, false), Error);
    CHECK_NOTHROW(regression_estimate(o, 0.1, false));
    CHECK_THROWS_AS(regression_estimate({o[0]}, 0.1, false), Error);
    CHECK_THROWS_AS(regression_estimate(o, -1.0, false), Error);
}

TEST_CASE("trace-normalized ridge") {
    std::vector<SubsetOutcome> o{{SubsetMask{{1, 1, 0, 0}}, 0.0}, {SubsetMask{{1, 0, 1, 1}}, 0.0}};
    CHECK(trace_normalized_ridge(o, 1e-3) == doctest::Approx(1e-3 * 5.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("regression is permutation equivariant") {
    std::mt19937_64 rng(3);
    const std::size_t n = 5;
    std::vector<SubsetOutcome> outcomes;
    for (int j = 0; j < 40; ++j)
        outcomes.push_back({sample_bernoulli_mask(n, 0.5, static_cast<std::uint64_t>(j)), testutil::random_vector(rng, 1)[0]});
    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto permuted = outcomes;
    for (std::size_t j = 0; j < outcomes.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) permuted[j].mask.weights[i] = outcomes[j].mask.weights[perm[i]];
    const auto a = regression_estimate(outcomes, 0.01, true);
    const auto b = regression_estimate(permuted, 0.01, true);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(b.tau[i] - a.tau[perm[i]]) <= 1e-12);
    CHECK(std::abs(a.offset - b.offset) <= 1e-12);
}

TEST_CASE("predict") {
    Datamodel dm;
    dm.tau = {2.0, -1.0};
    CHECK(predict(dm, SubsetMask{{1, 1}}) == 1.0);
    dm.offset = 0.5;
    CHECK(predict(dm, SubsetMask::zeros(2)) == 0.5);
    CHECK(predict(dm, SubsetMask::ones(2)) == 1.5);
    CHECK_THROWS_AS(predict(dm, SubsetMask::ones(3)), Error);
    CHECK_THROWS_AS(predict(dm, SubsetMask::ones(2, MaskKind::continuous)), Error);
}

TEST_CASE("predict is additive over disjoint masks (property)") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 30;
        Datamodel dm;
        dm.tau = testutil::random_vector(rng, n);
        dm.offset = testutil::random_vector(rng, 1)[0];
        SubsetMask a = SubsetMask::zeros(n), b = SubsetMask::zeros(n), u = SubsetMask::zeros(n);
        std::uniform_int_distribution<int> pick(0, 2);
        for (std::size_t i = 0; i < n; ++i) {
            const int k = pick(rng);
            if (k == 1) a.weights[i] = u.weights[i] = 1.0;
            if (k == 2) b.weights[i] = u.weights[i] = 1.0;
        }
        const double lhs = predict(dm, u);
        const double rhs = predict(dm, a) + predict(dm, b) - dm.offset;
        CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("fit statistics") {
    const Vector tau{1.0, -2.0, 0.5};
    const auto outcomes = all_subsets(tau, 0.0);
    const auto dm = regression_estimate(outcomes, 0.0, false);
    const auto s = evaluate_datamodel(dm, outcomes);
    REQUIRE(s.pearson.has_value());
    CHECK(*s.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.mse <= 1e-16);
    CHECK(s.n == 8);

    Datamodel flat;
    flat.tau = {1.0, 1.0};
    std::vector<SubsetOutcome> constant{{SubsetMask{{1, 0}}, 3.0}, {SubsetMask{{0, 1}}, 3.0}, {SubsetMask{{1, 1}}, 3.0}};
    const auto c = evaluate_datamodel(flat, constant);
    CHECK_FALSE(c.pearson.has_value());
    CHECK_FALSE(c.spearman.has_value());
    CHECK(c.mse == doctest::Approx((4.0 + 4.0 + 1.0) / 3.0));
    CHECK_THROWS_AS(evaluate_datamodel(flat, {constant[0], constant[1]}), Error);
}

TEST_CASE("datamodel files round trip") {
    testutil::TempDir dir;
    Datamodel dm;
    dm.tau = {0.1, -0.25, 1e-17};
    dm.offset = -3.5;
    dm.estimator = EstimatorKind::metagradient;
    dm.provenance = {{"steps", 50}};
    save_datamodel(dm, dir / "dm.json");
    const auto back = load_datamodel(dir / "dm.json");
    CHECK(back.tau == dm.tau);
    CHECK(back.offset == dm.offset);
    CHECK(back.estimator == dm.estimator);
    CHECK(back.provenance == dm.provenance);
    CHECK(estimator_from_string("regression") == EstimatorKind::regression);
    CHECK(target_from_string("rollout") == TargetKind::rollout_success);
    CHECK_THROWS_AS(estimator_from_string("trak"), Error);
}

TEST_CASE("collect_outcomes") {
    const Toy toy;
    auto data = std::make_shared<const TrainingData>(toy.prior, toy.clusters);
    OutcomeConfig oc;
    oc.n_subsets = 1;
    oc.force_all_ones = true;
    oc.train = gd_config(10);
    oc.evaluator.proxy_target = toy.target;
    const auto one = collect_outcomes(data, oc);
    REQUIRE(one.outcomes.size() == 1);
    const auto r = train(data, SubsetMask::ones(toy.clusters.size()), oc.train);
    CHECK(one.outcomes[0].outcome == proxy_metric(r.params, oc.train.policy, toy.target, LossKind::nll, {}));

    oc.force_all_ones = false;
    oc.n_subsets = 6;
    oc.seed = 4;
    oc.workers = 1;
    const auto serial = collect_outcomes(data, oc);
    oc.workers = 3;
    const auto parallel = collect_outcomes(data, oc);
    REQUIRE(serial.outcomes.size() == 6);
    CHECK(serial.skipped.empty());
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(serial.outcomes[j].mask == parallel.outcomes[j].mask);
        CHECK(serial.outcomes[j].outcome == parallel.outcomes[j].outcome);
        CHECK(serial.outcomes[j].mask == sample_bernoulli_mask(toy.clusters.size(), 0.5, subset_seed(4, j)));
    }
}

TEST_CASE("diverging subsets are skipped") {
    const Toy toy;
    auto data = std::make_shared<const TrainingData>(toy.prior, toy.clusters);
    OutcomeConfig oc;
    oc.n_subsets = 3;
    oc.train = gd_config(200);
    oc.train.learning_rate = 1e6;
    oc.evaluator.proxy_target = toy.target;
    const auto col = collect_outcomes(data, oc);
    CHECK(col.outcomes.size() + col.skipped.size() == 3);
    CHECK(col.skipped.size() == 3);
}

TEST_CASE("one-step metagradient equals the closed-form chain rule") {
    // linear mean-only policy: the loss is quadratic in the parameters
    const Toy toy;
    TrainConfig cfg;
    cfg.policy.hidden.clear();
    cfg.policy.head = Head::mean_only;
    cfg.optimizer = OptimizerKind::gd_full_batch;
    cfg.loss = LossKind::nll;
    cfg.steps = 1;
    cfg.learning_rate = 0.3;
    cfg.seed = 2;
    const ProxyConfig proxy;
    const auto dm = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);

    const Params theta0 = init_params(cfg.policy, cfg.seed);
    const auto r = train(toy.clusters, toy.prior, SubsetMask::ones(toy.clusters.size()), cfg);
    const Vector gm = grad_proxy(r.params, cfg.policy, toy.target, LossKind::nll, {});
    const double total_pairs = static_cast<double>(count_pairs(toy.prior));
    for (std::size_t i = 0; i < toy.clusters.size(); ++i) {
        const auto& t = toy.prior[toy.clusters[i].traj_index];
        std::vector<WeightedSample> samples;
        for (const auto& p : t.pairs) samples.push_back({p.state, p.action, 1.0});
        // per-cluster contribution to L_0: (1/|B|) sum over the cluster's pairs
        Vector gi = grad_loss(theta0, cfg.policy, samples, LossKind::nll);
        for (double& g : gi) g *= static_cast<double>(samples.size()) / total_pairs;
        const double expected = -cfg.learning_rate * dot(gm, gi);
        CHECK(std::abs(dm.tau[i] - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("metagradient matches retraining finite differences") {
    const Toy toy;
    const auto cfg = gd_config(20);
    const ProxyConfig proxy;
    const auto dm = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    const double delta = 1e-3;
    for (std::size_t i = 0; i < toy.clusters.size(); ++i) {
        const double fd = (perturbed_proxy(toy, i, delta, cfg, proxy) - perturbed_proxy(toy, i, -delta, cfg, proxy)) /
                          (2 * delta);
        if (std::abs(dm.tau[i]) < 1e-5) CHECK(std::abs(dm.tau[i] - fd) <= 1e-8);
        else CHECK(rel_err(dm.tau[i], fd) <= 1e-3);
    }
}

TEST_CASE("upweighting through a rescaled step size is exact") {
    const Toy toy;
    const auto cfg = gd_config(5);
    const ProxyConfig proxy;
    const std::size_t n = toy.clusters.size();
    // mask z at rate lr and mask z / (1 + d) at rate lr * (1 + d) take identical steps
    const double d = 0.25;
    auto z = SubsetMask::ones(n, MaskKind::continuous);
    for (auto& w : z.weights) w = 0.5;
    z.weights[3] = 0.5 * (1.0 + d);
    auto scaled = z;
    for (auto& w : scaled.weights) w /= 1.0 + d;
    auto c2 = cfg;
    c2.learning_rate *= 1.0 + d;
    const double a = proxy_at(toy, z, cfg, proxy);
    const double b = proxy_at(toy, scaled, c2, proxy);
    CHECK(std::abs(a - b) <= 1e-12 * std::abs(a));
}

TEST_CASE("metagradient offset reproduces the all-data proxy") {
    const Toy toy;
    const auto cfg = gd_config(10);
    const ProxyConfig proxy;
    const auto dm = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    const double all = proxy_at(toy, SubsetMask::ones(toy.clusters.size()), cfg, proxy);
    CHECK(std::abs(predict(dm, SubsetMask::ones(toy.clusters.size())) - all) <= 1e-12);
    CHECK(dm.estimator == EstimatorKind::metagradient);
    CHECK(dm.target == TargetKind::proxy_loss);
}

TEST_CASE("metagradient is a first-order expansion") {
    // error of the linear prediction shrinks quadratically in delta
    const Toy toy;
    const auto cfg = gd_config(20);
    const ProxyConfig proxy;
    const std::size_t n = toy.clusters.size();
    const auto dm = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    const double base = proxy_at(toy, SubsetMask::ones(n, MaskKind::continuous), cfg, proxy);
    for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{11}}) {
        double err[2];
        int k = 0;
        for (double delta : {1e-2, 1e-3}) {
            auto z = SubsetMask::ones(n, MaskKind::continuous);
            z.weights[i] -= delta;
            const double actual = proxy_at(toy, z, cfg, proxy) - base;
            err[k++] = std::abs(actual - (-delta) * dm.tau[i]);
        }
        // a tenfold smaller step shrinks the error by close to 100x
        CHECK(err[1] <= err[0] / 30.0);
    }
}

TEST_CASE("checkpoint stride does not change the metagradient") {
    const Toy toy;
    auto cfg = gd_config(12);
    cfg.optimizer = OptimizerKind::sgd;
    cfg.batch_size = 32;
    const ProxyConfig proxy;
    const auto dense = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    cfg.checkpoint_stride = 5;
    const auto sparse = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    for (std::size_t i = 0; i < dense.tau.size(); ++i) CHECK(std::abs(dense.tau[i] - sparse.tau[i]) <= 1e-15);
}

TEST_CASE("clusters never sampled by sgd get zero influence") {
    const Toy toy;
    auto cfg = gd_config(3);
    cfg.optimizer = OptimizerKind::sgd;
    cfg.batch_size = 4;
    const ProxyConfig proxy;
    auto data = std::make_shared<const TrainingData>(toy.prior, toy.clusters);
    const auto r = train(data, SubsetMask::ones(toy.clusters.size(), MaskKind::continuous), cfg);
    std::set<int> sampled;
    for (const auto& b : r.tape.batches)
        for (auto idx : b) sampled.insert(data->cluster_of(idx));
    const auto tau = metagradient(r.tape, toy.target, proxy);
    int unsampled = 0;
    for (std::size_t i = 0; i < tau.size(); ++i)
        if (!sampled.count(static_cast<int>(i))) {
            CHECK(tau[i] == 0.0);
            ++unsampled;
        } else {
            CHECK(tau[i] != 0.0);
        }
    CHECK(unsampled > 0);
}

TEST_CASE("metagradient rejects adam and binary tapes") {
    const Toy toy;
    auto cfg = gd_config(3);
    cfg.optimizer = OptimizerKind::adam;
    CHECK_THROWS_AS(metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, {}), UnsupportedConfiguration);
    const auto r = train(toy.clusters, toy.prior, SubsetMask::ones(toy.clusters.size()), gd_config(3));
    CHECK_THROWS_AS(metagradient(r.tape, toy.target, {}), Error);
}

TEST_CASE("co-training and mixed-in target data enter the reverse pass") {
    const Toy toy;
    auto cfg = gd_config(15);
    cfg.cotrain = CotrainConfig{toy.target, 0.5};
    const ProxyConfig proxy;
    const auto dm = metagradient_estimate(toy.clusters, toy.prior, toy.target, {}, cfg, proxy);
    const std::size_t n = toy.clusters.size();
    const double delta = 1e-3;
    // z cannot exceed 1 here (the target weight is fixed), so the difference quotient is
    // centered at 1 - delta and compared with the metagradient taken there
    auto data = std::make_shared<const TrainingData>(toy.prior, toy.clusters, std::vector<Trajectory>{}, toy.target);
    for (std::size_t i : {std::size_t{0}, std::size_t{9}}) {
        auto hi = SubsetMask::ones(n, MaskKind::continuous);
        auto mid = hi, lo = hi;
        mid.weights[i] -= delta;
        lo.weights[i] -= 2 * delta;
        const double fd = (proxy_metric(train(data, hi, cfg).params, cfg.policy, toy.target, LossKind::nll, {}) -
                           proxy_metric(train(data, lo, cfg).params, cfg.policy, toy.target, LossKind::nll, {})) /
                          (2 * delta);
        const double tau_mid = metagradient(train(data, mid, cfg).tape, toy.target, proxy)[i];
        CHECK(rel_err(tau_mid, fd) <= 1e-3);
        CHECK(rel_err(tau_mid, dm.tau[i]) <= 0.05);
    }

    const auto split = split_target(toy.target, 3);
    const auto mixed = metagradient_estimate(toy.clusters, toy.prior, split, true, gd_config(10), proxy);
    CHECK(mixed.provenance.at("mixed_in_trajectories") == split.estimation_half.size());
}

}  // TEST_SUITE
