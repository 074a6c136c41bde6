// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "datamil/stats.hpp"

namespace datamil {

using nlohmann::json;

std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::regression ? "regression" : "metagradient"; }

EstimatorKind estimator_from_string(const std::string& name) {
    if (name == "regression") return EstimatorKind::regression;
    if (name == "metagradient") return EstimatorKind::metagradient;
    throw Error("unknown estimator '" + name + "' (expected regression or metagradient)");
}

std::string to_string(TargetKind kind) { return kind == TargetKind::proxy_loss ? "proxy_loss" : "rollout_success"; }

TargetKind target_from_string(const std::string& name) {
    if (name == "proxy_loss" || name == "proxy") return TargetKind::proxy_loss;
    if (name == "rollout_success" || name == "rollout") return TargetKind::rollout_success;
    throw Error("unknown datamodel target '" + name + "' (expected proxy_loss or rollout_success)");
}

double OutcomeEvaluator::operator()(const Params& params, const PolicyConfig& config) const {
    if (target == TargetKind::proxy_loss)
        return proxy_metric(params, config, proxy_target, proxy.loss, proxy.weights);
    return toyenv::rollout_success_rate(mean_policy(params, config), env, task_id, n_rollouts, rollout_seed);
}

std::uint64_t subset_seed(std::uint64_t seed, std::size_t j) {
    return make_rng(seed, 0x5B5E7000ULL + j)();
}

OutcomeCollection collect_outcomes(const TrainingDataPtr& data, const OutcomeConfig& config) {
    if (!data) throw Error("collect_outcomes: missing training data");
    if (config.n_subsets < 1) throw Error("collect_outcomes: need at least one subset");
    const std::size_t n = data->num_clusters();
    std::vector<std::optional<SubsetOutcome>> slots(config.n_subsets);
    parallel_for(
        config.n_subsets,
        [&](std::size_t j) {
            SubsetMask mask = config.force_all_ones ? SubsetMask::ones(n)
                                                    : sample_bernoulli_mask(n, config.p, subset_seed(config.seed, j));
            try {
                auto result = train(data, mask, config.train);
                const double y = config.evaluator(result.params, config.train.policy);
                if (!std::isfinite(y)) return;
                slots[j] = SubsetOutcome{std::move(mask), y};
            } catch (const NumericalError&) {
                // diverged; reported through `skipped`
            }
        },
        config.workers);
    OutcomeCollection out;
    for (std::size_t j = 0; j < slots.size(); ++j) {
        if (slots[j]) out.outcomes.push_back(std::move(*slots[j]));
        else out.skipped.push_back(j);
    }
    return out;
}

double trace_normalized_ridge(const std::vector<SubsetOutcome>& outcomes, double lambda_scale) {
    if (outcomes.empty()) throw Error("trace_normalized_ridge: no outcomes");
    double trace = 0.0;
    for (const auto& o : outcomes)
        for (double z : o.mask.weights) trace += z * z;
    return lambda_scale * trace / static_cast<double>(outcomes.front().mask.size());
}

Datamodel regression_estimate(const std::vector<SubsetOutcome>& outcomes, double lambda, bool fit_offset) {
    if (outcomes.size() < 2) throw Error("regression_estimate: need at least 2 outcomes");
    if (!(lambda >= 0.0)) throw Error("regression_estimate: lambda must be >= 0");
    const auto n = static_cast<Eigen::Index>(outcomes.front().mask.size());
    const auto m = static_cast<Eigen::Index>(outcomes.size());
    const Eigen::Index cols = n + (fit_offset ? 1 : 0);

    Eigen::MatrixXd design(m, cols);
    Eigen::VectorXd y(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& o = outcomes[static_cast<std::size_t>(j)];
        if (static_cast<Eigen::Index>(o.mask.size()) != n) throw Error("regression_estimate: masks differ in length");
        if (!std::isfinite(o.outcome)) throw Error("regression_estimate: non-finite outcome");
        for (Eigen::Index i = 0; i < n; ++i) design(j, i) = o.mask.weights[static_cast<std::size_t>(i)];
        if (fit_offset) design(j, n) = 1.0;
        y(j) = o.outcome;
    }
    Eigen::MatrixXd normal = design.transpose() * design;
    for (Eigen::Index i = 0; i < n; ++i) normal(i, i) += lambda;
    const Eigen::VectorXd rhs = design.transpose() * y;

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-12 * std::max(1.0, pivots.maxCoeff())))
        throw Error("regression_estimate: singular normal equations (use lambda > 0 or more subsets)");
    const Eigen::VectorXd solution = ldlt.solve(rhs);

    Datamodel dm;
    dm.estimator = EstimatorKind::regression;
    dm.tau.assign(solution.data(), solution.data() + n);
    dm.offset = fit_offset ? solution(n) : 0.0;
    dm.provenance = {{"n_subsets", outcomes.size()}, {"lambda", lambda}, {"fit_offset", fit_offset}};
    return dm;
}

// ---------------------------------------------------------------------------

Vector metagradient(const TrainingTape& tape, const std::vector<Trajectory>& proxy_target, const ProxyConfig& proxy) {
    const auto& cfg = tape.config;
    if (!tape.data) throw Error("metagradient: tape has no training data attached");
    if (cfg.optimizer == OptimizerKind::adam)
        throw UnsupportedConfiguration(
            "metagradient estimation supports gd_full_batch and sgd; adam's reverse pass is not implemented");
    if (tape.mask.kind != MaskKind::continuous)
        throw Error("metagradient: the tape must be recorded with a continuous mask");

    const TrainingData& data = *tape.data;
    const int steps = tape.steps();
    const int stride = cfg.checkpoint_stride;
    const double lr = cfg.learning_rate;

    Vector adjoint = grad_proxy(tape.final_params, cfg.policy, proxy_target, proxy.loss, proxy.weights);
    Vector tau(data.num_clusters(), 0.0);

    std::vector<Params> segment;  // parameters before each step of the current segment
    int segment_begin = -1;
    for (int t = steps - 1; t >= 0; --t) {
        if (segment_begin < 0 || t < segment_begin) {
            segment_begin = (t / stride) * stride;
            segment.clear();
            segment.push_back(tape.checkpoints.at(static_cast<std::size_t>(t / stride)));
            for (int s = segment_begin; s < t; ++s) {
                auto next = tape.truncated(s + 1).final_params;
                segment.push_back(std::move(next));
            }
        }
        const Params& theta = segment[static_cast<std::size_t>(t - segment_begin)];

        const auto entries = tape.step_entries(t);
        std::vector<WeightedSample> samples;
        samples.reserve(entries.size());
        for (const auto& e : entries) {
            const auto& p = data.pair(e.index);
            const int c = data.cluster_of(e.index);
            const double w = c >= 0 ? tape.mask.weights[static_cast<std::size_t>(c)] : 1.0;
            samples.push_back({p.state, p.action, e.base * w});
        }
        Vector directional(samples.size(), 0.0);
        const Vector hv = weighted_hvp(theta, cfg.policy, samples, cfg.loss, adjoint, directional);
        for (std::size_t k = 0; k < entries.size(); ++k) {
            const int c = data.cluster_of(entries[k].index);
            if (c >= 0) tau[static_cast<std::size_t>(c)] -= lr * entries[k].base * directional[k];
        }
        for (std::size_t k = 0; k < adjoint.size(); ++k) {
            adjoint[k] -= lr * hv[k];
            if (!std::isfinite(adjoint[k]))
                throw NumericalError("non-finite adjoint at step " + std::to_string(t), t);
        }
    }
    return tau;
}

Datamodel metagradient_estimate(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior,
                                const std::vector<Trajectory>& proxy_target, const std::vector<Trajectory>& mix_in,
                                const TrainConfig& train_config, const ProxyConfig& proxy) {
    if (train_config.optimizer == OptimizerKind::adam)
        throw UnsupportedConfiguration(
            "metagradient estimation supports gd_full_batch and sgd; adam's reverse pass is not implemented");
    std::vector<Trajectory> cotarget;
    if (train_config.cotrain) cotarget = train_config.cotrain->target;
    auto data = std::make_shared<const TrainingData>(prior, clusters, mix_in, std::move(cotarget));
    const auto result = train(data, SubsetMask::ones(clusters.size(), MaskKind::continuous), train_config);

    Datamodel dm;
    dm.estimator = EstimatorKind::metagradient;
    dm.target = TargetKind::proxy_loss;
    dm.tau = metagradient(result.tape, proxy_target, proxy);
    const double base = proxy_metric(result.params, train_config.policy, proxy_target, proxy.loss, proxy.weights);
    double sum = 0.0;
    for (double t : dm.tau) sum += t;
    dm.offset = base - sum;
    dm.provenance = {{"proxy_at_all_ones", base},
                     {"steps", train_config.steps},
                     {"optimizer", to_string(train_config.optimizer)},
                     {"learning_rate", train_config.learning_rate},
                     {"seed", train_config.seed},
                     {"mixed_in_trajectories", mix_in.size()},
                     {"data_fingerprint", data->fingerprint()}};
    return dm;
}

Datamodel metagradient_estimate(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior,
                                const TargetSplit& split, bool mix_estimation_half, const TrainConfig& train_config,
                                const ProxyConfig& proxy) {
    static const std::vector<Trajectory> none;
    return metagradient_estimate(clusters, prior, split.evaluation_half,
                                 mix_estimation_half ? split.estimation_half : none, train_config, proxy);
}

double predict(const Datamodel& dm, const SubsetMask& mask) {
    if (mask.size() != dm.tau.size()) throw Error("predict: mask length does not match the datamodel");
    if (mask.kind != MaskKind::binary) throw Error("predict: expected a binary mask");
    double y = dm.offset;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.weights[i] == 1.0) y += dm.tau[i];
    return y;
}

FitStats evaluate_datamodel(const Datamodel& dm, const std::vector<SubsetOutcome>& heldout) {
    if (heldout.size() < 3) throw Error("evaluate_datamodel: need at least 3 held-out outcomes");
    Vector pred, actual;
    for (const auto& o : heldout) {
        pred.push_back(predict(dm, o.mask));
        actual.push_back(o.outcome);
    }
    FitStats s;
    s.n = heldout.size();
    s.mse = stats::mse(pred, actual);
    s.pearson = stats::pearson(pred, actual);
    s.spearman = stats::spearman(pred, actual);
    return s;
}

void save_datamodel(const Datamodel& dm, const std::filesystem::path& path) {
    json j = {{"estimator", to_string(dm.estimator)},
              {"target", to_string(dm.target)},
              {"offset", dm.offset},
              {"tau", dm.tau},
              {"provenance", dm.provenance}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write datamodel " + path.string());
    out << j.dump(2) << '\n';
}

Datamodel load_datamodel(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open datamodel " + path.string());
    const auto j = json::parse(in);
    Datamodel dm;
    dm.estimator = estimator_from_string(j.at("estimator").get<std::string>());
    dm.target = target_from_string(j.at("target").get<std::string>());
    dm.offset = j.at("offset").get<double>();
    dm.tau = j.at("tau").get<Vector>();
    dm.provenance = j.value("provenance", json::object());
    return dm;
}

}  // namespace datamil
