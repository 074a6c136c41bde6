// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "datamil/serialize.hpp"

namespace datamil {

using nlohmann::json;

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::gd_full_batch: return "gd_full_batch";
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
    }
    return "adam";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "gd_full_batch") return OptimizerKind::gd_full_batch;
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw Error("unknown optimizer '" + name + "' (expected gd_full_batch, sgd or adam)");
}

void TrainConfig::validate() const {
    policy.validate();
    if (steps < 1) throw Error("TrainConfig: steps must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning_rate must be positive");
    if (optimizer != OptimizerKind::gd_full_batch && batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (checkpoint_stride < 1) throw Error("TrainConfig: checkpoint_stride must be >= 1");
    if (cotrain && !(cotrain->alpha >= 0.0 && cotrain->alpha <= 1.0))
        throw Error("TrainConfig: co-training alpha must lie in [0,1]");
}

// ---------------------------------------------------------------------------

TrainingData::TrainingData(std::vector<Trajectory> prior, std::vector<Cluster> clusters, std::vector<Trajectory> extra,
                           std::vector<Trajectory> target)
    : prior_(std::move(prior)), extra_(std::move(extra)), target_(std::move(target)), clusters_(std::move(clusters)) {
    cluster_offsets_.push_back(0);
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
        const auto& cl = clusters_[c];
        if (cl.cluster_id != static_cast<int>(c)) throw Error("TrainingData: cluster ids must be dense and ordered");
        if (cl.traj_index >= prior_.size()) throw Error("TrainingData: cluster references a missing trajectory");
        const auto& t = prior_[cl.traj_index];
        if (cl.start_step < 0 || cl.length < 1 || static_cast<std::size_t>(cl.start_step + cl.length) > t.size())
            throw Error("TrainingData: cluster span outside its trajectory");
        for (int s = cl.start_step; s < cl.start_step + cl.length; ++s)
            prior_pairs_.push_back({static_cast<std::uint32_t>(cl.traj_index), static_cast<std::uint32_t>(s),
                                    static_cast<std::int32_t>(c)});
        cluster_offsets_.push_back(prior_pairs_.size());
    }
    if (prior_pairs_.size() != count_pairs(prior_))
        throw Error("TrainingData: clusters do not partition the prior dataset");
    auto flatten = [](const std::vector<Trajectory>& trajs, std::vector<PairRef>& out) {
        for (std::size_t t = 0; t < trajs.size(); ++t)
            for (std::size_t s = 0; s < trajs[t].size(); ++s)
                out.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(s), -1});
    };
    flatten(extra_, extra_pairs_);
    flatten(target_, target_pairs_);

    std::string buf;
    auto feed = [&](const std::vector<Trajectory>& trajs) {
        for (const auto& t : trajs) {
            buf += std::to_string(t.traj_id) + ":" + std::to_string(t.task_id) + ":" + std::to_string(t.size()) + ";";
            for (const auto& p : t.pairs) {
                buf.append(reinterpret_cast<const char*>(p.state.data()), p.state.size() * sizeof(double));
                buf.append(reinterpret_cast<const char*>(p.action.data()), p.action.size() * sizeof(double));
            }
        }
        buf += "|";
    };
    feed(prior_);
    feed(extra_);
    feed(target_);
    for (const auto& c : clusters_)
        buf += std::to_string(c.traj_index) + "," + std::to_string(c.start_step) + "," + std::to_string(c.length) + ";";
    fingerprint_ = hex64(fnv1a64(buf));
}

int TrainingData::cluster_of(std::size_t index) const {
    return index < prior_pairs_.size() ? prior_pairs_[index].cluster : -1;
}

const StateActionPair& TrainingData::pair(std::size_t index) const {
    if (index < prior_pairs_.size()) {
        const auto& r = prior_pairs_[index];
        return prior_[r.traj].pairs[r.step];
    }
    index -= prior_pairs_.size();
    if (index < extra_pairs_.size()) {
        const auto& r = extra_pairs_[index];
        return extra_[r.traj].pairs[r.step];
    }
    index -= extra_pairs_.size();
    if (index < target_pairs_.size()) {
        const auto& r = target_pairs_[index];
        return target_[r.traj].pairs[r.step];
    }
    throw Error("TrainingData: pair index out of range");
}

std::pair<std::size_t, std::size_t> TrainingData::cluster_range(std::size_t cluster) const {
    return {cluster_offsets_.at(cluster), cluster_offsets_.at(cluster + 1)};
}

// ---------------------------------------------------------------------------

namespace {

struct Pool {
    std::vector<std::uint32_t> prior;  // included prior pairs followed by extra pairs
    std::vector<std::uint32_t> target;
    double alpha = 0.0;
};

Pool make_pool(const TrainingData& data, const SubsetMask& mask, const TrainConfig& config) {
    Pool pool;
    for (std::size_t c = 0; c < data.num_clusters(); ++c) {
        if (mask.kind == MaskKind::binary && mask.weights[c] == 0.0) continue;
        const auto [b, e] = data.cluster_range(c);
        for (std::size_t i = b; i < e; ++i) pool.prior.push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t i = 0; i < data.num_extra_pairs(); ++i)
        pool.prior.push_back(static_cast<std::uint32_t>(data.extra_begin() + i));
    if (config.cotrain) {
        if (data.num_target_pairs() == 0) throw Error("co-training requested without target data");
        for (std::size_t i = 0; i < data.num_target_pairs(); ++i)
            pool.target.push_back(static_cast<std::uint32_t>(data.target_begin() + i));
        pool.alpha = config.cotrain->alpha;
    }
    if (pool.prior.empty()) {
        if (pool.target.empty()) throw Error("nothing to train on: the mask excludes every cluster");
        pool.alpha = 1.0;
    }
    return pool;
}

std::vector<std::uint32_t> sample_batch(const Pool& pool, const TrainConfig& config, int step) {
    auto rng = make_rng(config.seed, 1 + static_cast<std::uint64_t>(step));
    std::uniform_int_distribution<std::size_t> pick_prior(0, pool.prior.empty() ? 0 : pool.prior.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_target(0, pool.target.empty() ? 0 : pool.target.size() - 1);
    std::bernoulli_distribution coin(std::clamp(pool.alpha, 0.0, 1.0));
    const bool mixed = pool.alpha > 0.0 && pool.alpha < 1.0;
    std::vector<std::uint32_t> out(static_cast<std::size_t>(config.batch_size));
    for (auto& idx : out) {
        const bool from_target = mixed ? coin(rng) : pool.alpha >= 1.0;
        idx = from_target ? pool.target[pick_target(rng)] : pool.prior[pick_prior(rng)];
    }
    return out;
}

std::vector<BatchEntry> full_batch_entries(const Pool& pool) {
    std::vector<BatchEntry> out;
    if (!pool.prior.empty() && pool.alpha < 1.0) {
        const double c = (1.0 - pool.alpha) / static_cast<double>(pool.prior.size());
        for (auto idx : pool.prior) out.push_back({idx, c});
    }
    if (!pool.target.empty() && pool.alpha > 0.0) {
        const double c = pool.alpha / static_cast<double>(pool.target.size());
        for (auto idx : pool.target) out.push_back({idx, c});
    }
    return out;
}

std::vector<BatchEntry> sampled_entries(const std::vector<std::uint32_t>& batch) {
    std::vector<BatchEntry> out;
    out.reserve(batch.size());
    const double c = 1.0 / static_cast<double>(batch.size());
    for (auto idx : batch) out.push_back({idx, c});
    return out;
}

struct OptimizerState {
    Vector m, v;
    int t = 0;
};

double data_weight(const TrainingData& data, const SubsetMask& mask, std::size_t index) {
    const int c = data.cluster_of(index);
    return c >= 0 ? mask.weights[static_cast<std::size_t>(c)] : 1.0;
}

// Applies one optimizer update in place and returns the step's loss.
double apply_step(const TrainingData& data, const SubsetMask& mask, const TrainConfig& config,
                  const std::vector<BatchEntry>& entries, Params& theta, OptimizerState& state, int step) {
    std::vector<WeightedSample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        const auto& p = data.pair(e.index);
        samples.push_back({p.state, p.action, e.base * data_weight(data, mask, e.index)});
    }
    Vector grad(theta.size(), 0.0);
    const double loss = accumulate_weighted_grad(theta, config.policy, samples, config.loss, grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite training loss at step " + std::to_string(step), step);
    const double lr = config.learning_rate;
    if (config.optimizer == OptimizerKind::adam) {
        if (state.m.empty()) {
            state.m.assign(theta.size(), 0.0);
            state.v.assign(theta.size(), 0.0);
        }
        ++state.t;
        const double b1 = config.adam_beta1, b2 = config.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, state.t), c2 = 1.0 - std::pow(b2, state.t);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            state.m[k] = b1 * state.m[k] + (1.0 - b1) * grad[k];
            state.v[k] = b2 * state.v[k] + (1.0 - b2) * grad[k] * grad[k];
            theta[k] -= lr * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + config.adam_eps);
        }
    } else {
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= lr * grad[k];
    }
    for (double x : theta)
        if (!std::isfinite(x)) throw NumericalError("non-finite parameters at step " + std::to_string(step), step);
    return loss;
}

void check_inputs(const TrainingData& data, const SubsetMask& mask, const TrainConfig& config) {
    config.validate();
    if (mask.size() != data.num_clusters()) throw Error("mask length does not match the cluster count");
    mask.validate();
    if (data.num_prior_pairs() > 0) {
        const auto& p = data.pair(0);
        if (p.state.size() != config.policy.input_dim || p.action.size() != config.policy.output_dim)
            throw Error("data dimensions do not match the policy config");
    }
}

}  // namespace

std::vector<BatchEntry> TrainingTape::step_entries(int step) const {
    if (step < 0 || step >= steps()) throw Error("tape step out of range");
    if (config.optimizer == OptimizerKind::gd_full_batch) return full_batch_entries(make_pool(*data, mask, config));
    return sampled_entries(batches[static_cast<std::size_t>(step)]);
}

Params TrainingTape::params_at(int step) const {
    if (step < 0 || step > steps()) throw Error("tape step out of range");
    const int stride = config.checkpoint_stride;
    int from = 0;
    Params theta = initial;
    if (config.optimizer != OptimizerKind::adam) {
        const auto k = std::min<std::size_t>(static_cast<std::size_t>(step / stride), checkpoints.size() - 1);
        from = static_cast<int>(k) * stride;
        theta = checkpoints[k];
    }
    OptimizerState state;
    for (int t = from; t < step; ++t) apply_step(*data, mask, config, step_entries(t), theta, state, t);
    return theta;
}

TrainingTape TrainingTape::truncated(int n) const {
    if (n < 1 || n > steps()) throw Error("cannot truncate tape to " + std::to_string(n) + " steps");
    TrainingTape out = *this;
    out.batches.resize(static_cast<std::size_t>(n));
    out.losses.resize(static_cast<std::size_t>(n));
    out.checkpoints.resize(static_cast<std::size_t>(n / config.checkpoint_stride) + 1);
    out.final_params = params_at(n);
    return out;
}

TrainResult train(const TrainingDataPtr& data, const SubsetMask& mask, const TrainConfig& config) {
    if (!data) throw Error("train: missing training data");
    check_inputs(*data, mask, config);
    const Pool pool = make_pool(*data, mask, config);

    TrainingTape tape;
    tape.config = config;
    tape.config.cotrain.reset();
    if (config.cotrain) tape.config.cotrain = CotrainConfig{{}, config.cotrain->alpha};
    tape.mask = mask;
    tape.data = data;
    tape.initial = init_params(config.policy, config.seed);

    Params theta = tape.initial;
    tape.checkpoints.push_back(theta);
    OptimizerState state;
    const auto full = config.optimizer == OptimizerKind::gd_full_batch ? full_batch_entries(pool)
                                                                        : std::vector<BatchEntry>{};
    for (int t = 0; t < config.steps; ++t) {
        if (config.optimizer == OptimizerKind::gd_full_batch) {
            tape.batches.emplace_back();
            tape.losses.push_back(apply_step(*data, mask, config, full, theta, state, t));
        } else {
            tape.batches.push_back(sample_batch(pool, config, t));
            tape.losses.push_back(apply_step(*data, mask, config, sampled_entries(tape.batches.back()), theta, state, t));
        }
        if ((t + 1) % config.checkpoint_stride == 0) tape.checkpoints.push_back(theta);
    }
    tape.final_params = theta;
    return {std::move(theta), std::move(tape)};
}

TrainResult train(const std::vector<Cluster>& clusters, const std::vector<Trajectory>& prior, const SubsetMask& mask,
                  const TrainConfig& config) {
    std::vector<Trajectory> target;
    if (config.cotrain) target = config.cotrain->target;
    auto data = std::make_shared<const TrainingData>(prior, clusters, std::vector<Trajectory>{}, std::move(target));
    return train(data, mask, config);
}

Params replay(const TrainingTape& tape) {
    if (!tape.data) throw Error("replay: tape has no training data attached");
    if (tape.initial.size() != tape.config.policy.num_params()) throw Error("replay: corrupted tape (initial params)");
    if (tape.config.optimizer != OptimizerKind::gd_full_batch) {
        const auto n = tape.data->num_pairs();
        for (const auto& b : tape.batches) {
            if (b.size() != static_cast<std::size_t>(tape.config.batch_size))
                throw Error("replay: corrupted tape (batch size)");
            for (auto idx : b)
                if (idx >= n) throw Error("replay: corrupted tape (pair index out of range)");
        }
    }
    Params theta = tape.initial;
    OptimizerState state;
    for (int t = 0; t < tape.steps(); ++t) apply_step(*tape.data, tape.mask, tape.config, tape.step_entries(t), theta, state, t);
    return theta;
}

void save_tape(const TrainingTape& tape, const std::filesystem::path& path) {
    json j = {{"format", "datamil-tape-1"},
              {"config", tape.config},
              {"mask_kind", tape.mask.kind == MaskKind::binary ? "binary" : "continuous"},
              {"mask", tape.mask.weights},
              {"initial", tape.initial},
              {"batches", tape.batches},
              {"checkpoints", tape.checkpoints},
              {"losses", tape.losses},
              {"final", tape.final_params},
              {"data_fingerprint", tape.data ? tape.data->fingerprint() : std::string()}};
    const auto bytes = json::to_cbor(j);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write tape " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TrainingTape load_tape(const std::filesystem::path& path, const TrainingDataPtr& data) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open tape " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::from_cbor(bytes);
    } catch (const std::exception& e) {
        throw Error("corrupted tape " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "datamil-tape-1") throw Error("unsupported tape format in " + path.string());
    if (!data || j.at("data_fingerprint").get<std::string>() != data->fingerprint())
        throw Error("tape " + path.string() + " was recorded on different training data");
    TrainingTape tape;
    tape.config = j.at("config").get<TrainConfig>();
    tape.mask.kind = j.at("mask_kind").get<std::string>() == "binary" ? MaskKind::binary : MaskKind::continuous;
    tape.mask.weights = j.at("mask").get<Vector>();
    tape.initial = j.at("initial").get<Params>();
    tape.batches = j.at("batches").get<std::vector<std::vector<std::uint32_t>>>();
    tape.checkpoints = j.at("checkpoints").get<std::vector<Params>>();
    tape.losses = j.at("losses").get<Vector>();
    tape.final_params = j.at("final").get<Params>();
    tape.data = data;
    return tape;
}

}  // namespace datamil
