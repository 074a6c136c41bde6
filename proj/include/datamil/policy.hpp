// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "datamil/common.hpp"
#include "datamil/dataset.hpp"
#include "datamil/toyenv.hpp"

namespace datamil {

/// gaussian_learned_logstd: log-std is a free parameter vector shared by all states.
/// gaussian_state_logstd: the output layer also emits a per-state log-std.
/// mean_only: log-std fixed at 0.
enum class Head { gaussian_learned_logstd, gaussian_state_logstd, mean_only };
enum class LossKind { nll, l1 };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);
std::string to_string(Head head);
Head head_from_string(const std::string& name);

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLogStdInit = -0.5;

/// Tanh MLP with a linear output layer. An empty `hidden` list gives a linear policy.
struct PolicyConfig {
    std::size_t input_dim = toyenv::EnvSpec::observation_dim;
    std::size_t output_dim = toyenv::EnvSpec::action_dim;
    std::vector<int> hidden{32, 32};
    Head head = Head::gaussian_learned_logstd;

    void validate() const;
    std::size_t num_params() const;

    friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

/// Offsets of each block inside the flat parameter vector. Weights are row-major
/// (out x in) and precede their bias; a shared log-std vector comes last. With the
/// per-state head the final layer has 2 * output_dim rows, means first.
struct ParamLayout {
    struct Layer {
        std::size_t in = 0;
        std::size_t out = 0;
        std::size_t weight_offset = 0;
        std::size_t bias_offset = 0;
    };
    std::vector<Layer> layers;
    std::size_t log_std_offset = 0;
    std::size_t size = 0;
};

ParamLayout make_layout(const PolicyConfig& config);

using Params = Vector;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer; shared log-std (or the
/// log-std output biases) at kLogStdInit.
Params init_params(const PolicyConfig& config, std::uint64_t seed);

struct PolicyOutput {
    Vector mean;
    Vector log_std;
};

PolicyOutput forward(std::span<const double> params, const PolicyConfig& config, std::span<const double> state);

double bc_loss(std::span<const double> params, const PolicyConfig& config, std::span<const double> state,
               std::span<const double> action, LossKind kind);
double bc_loss(std::span<const double> params, const PolicyConfig& config, const StateActionPair& pair,
               LossKind kind);

/// One loss term with its coefficient. The spans must outlive the batch.
struct WeightedSample {
    std::span<const double> state;
    std::span<const double> action;
    double weight = 1.0;
};

/// Adds the gradient of sum_i weight_i * loss_i into `grad` and returns the weighted sum.
double accumulate_weighted_grad(std::span<const double> params, const PolicyConfig& config,
                                std::span<const WeightedSample> batch, LossKind kind, std::span<double> grad);

/// Hessian of sum_i weight_i * loss_i applied to v, exact (forward-over-reverse). When
/// `directional` is non-empty it receives v^T grad(loss_i) for every sample, including
/// samples whose weight is zero.
Vector weighted_hvp(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                    LossKind kind, std::span<const double> v, std::span<double> directional = {});

/// Gradient of (1/|batch|) sum_i weight_i * loss_i.
Vector grad_loss(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                 LossKind kind);

/// Hessian-vector product of the same weighted mean loss.
Vector hvp_loss(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                LossKind kind, std::span<const double> v);

/// dir^T grad(loss) for a single sample, by forward-mode differentiation.
double directional_derivative(std::span<const double> params, const PolicyConfig& config,
                              std::span<const double> state, std::span<const double> action, LossKind kind,
                              std::span<const double> dir);

/// Gradient of the loss with respect to the head outputs (mean, then log-std when the
/// head learns it). Used to inspect the L1 subgradient convention.
Vector head_gradient(std::span<const double> params, const PolicyConfig& config, std::span<const double> state,
                     std::span<const double> action, LossKind kind);

/// Deterministic evaluation policy that returns the mean action.
toyenv::PolicyFn mean_policy(Params params, PolicyConfig config);

void save_checkpoint(const Params& params, const PolicyConfig& config, const std::filesystem::path& path);
std::pair<Params, PolicyConfig> load_checkpoint(const std::filesystem::path& path);

}  // namespace datamil
