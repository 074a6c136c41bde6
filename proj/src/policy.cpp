// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dual.hpp"

namespace datamil {

using detail::Dual;

std::string to_string(LossKind kind) { return kind == LossKind::nll ? "nll" : "l1"; }

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "nll") return LossKind::nll;
    if (name == "l1") return LossKind::l1;
    throw Error("unknown loss kind '" + name + "' (expected nll or l1)");
}

std::string to_string(Head head) {
    switch (head) {
        case Head::gaussian_learned_logstd: return "gaussian_learned_logstd";
        case Head::gaussian_state_logstd: return "gaussian_state_logstd";
        case Head::mean_only: return "mean_only";
    }
    return "?";
}

Head head_from_string(const std::string& name) {
    if (name == "gaussian_learned_logstd" || name == "gaussian") return Head::gaussian_learned_logstd;
    if (name == "gaussian_state_logstd") return Head::gaussian_state_logstd;
    if (name == "mean_only") return Head::mean_only;
    throw Error("unknown policy head '" + name + "'");
}

void PolicyConfig::validate() const {
    if (input_dim < 1 || output_dim < 1) throw Error("PolicyConfig: dimensions must be >= 1");
    for (int h : hidden)
        if (h < 1) throw Error("PolicyConfig: hidden widths must be >= 1");
}

ParamLayout make_layout(const PolicyConfig& config) {
    config.validate();
    ParamLayout lay;
    std::size_t in = config.input_dim, off = 0;
    auto add = [&](std::size_t out) {
        lay.layers.push_back({in, out, off, off + in * out});
        off += in * out + out;
        in = out;
    };
    for (int h : config.hidden) add(static_cast<std::size_t>(h));
    add(config.head == Head::gaussian_state_logstd ? 2 * config.output_dim : config.output_dim);
    lay.log_std_offset = off;
    if (config.head == Head::gaussian_learned_logstd) off += config.output_dim;
    lay.size = off;
    return lay;
}

std::size_t PolicyConfig::num_params() const { return make_layout(*this).size; }

Params init_params(const PolicyConfig& config, std::uint64_t seed) {
    const auto lay = make_layout(config);
    Params p(lay.size, 0.0);
    auto rng = make_rng(seed, 0x1417);
    for (const auto& layer : lay.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t k = 0; k < layer.in * layer.out + layer.out; ++k) p[layer.weight_offset + k] = u(rng);
    }
    if (config.head == Head::gaussian_learned_logstd)
        std::fill(p.begin() + static_cast<std::ptrdiff_t>(lay.log_std_offset), p.end(), kLogStdInit);
    if (config.head == Head::gaussian_state_logstd) {
        const auto& last = lay.layers.back();
        for (std::size_t j = 0; j < config.output_dim; ++j) p[last.bias_offset + config.output_dim + j] = kLogStdInit;
    }
    return p;
}

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

template <class T>
T clamp_log_std(const T& raw, bool& inside) {
    const double v = detail::value_of(raw);
    inside = v >= kLogStdMin && v <= kLogStdMax;
    if (v < kLogStdMin) return T(kLogStdMin);
    if (v > kLogStdMax) return T(kLogStdMax);
    return raw;
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

template <class T>
struct Workspace {
    std::vector<std::vector<T>> acts;  // acts[l] is the input of layer l
    std::vector<T> head;
    std::vector<T> delta, prev;
    std::vector<T> dlog_std;
};

// Per-sample loss; when `grad` is non-null adds coef * d(loss)/d(theta) into it.
template <class T>
T sample_loss(const T* theta, const ParamLayout& lay, const PolicyConfig& cfg, std::span<const double> state,
              std::span<const double> action, LossKind kind, double coef, T* grad, Workspace<T>& ws,
              Vector* head_grad = nullptr) {
    using std::exp;
    using std::tanh;
    using detail::exp;
    using detail::tanh;

    if (state.size() != cfg.input_dim) throw Error("state dimension does not match the policy input");
    if (action.size() != cfg.output_dim) throw Error("action dimension does not match the policy output");

    const std::size_t nl = lay.layers.size();
    ws.acts.resize(nl);
    ws.acts[0].assign(state.begin(), state.end());
    for (std::size_t l = 0; l < nl; ++l) {
        const auto& layer = lay.layers[l];
        auto& out = (l + 1 < nl) ? ws.acts[l + 1] : ws.head;
        out.resize(layer.out);
        const auto& a = ws.acts[l];
        for (std::size_t o = 0; o < layer.out; ++o) {
            T z = theta[layer.bias_offset + o];
            const T* w = theta + layer.weight_offset + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) z += w[i] * a[i];
            out[o] = (l + 1 < nl) ? T(tanh(z)) : z;
        }
    }

    const std::size_t d = cfg.output_dim;
    const bool shared_std = cfg.head == Head::gaussian_learned_logstd;
    const bool state_std = cfg.head == Head::gaussian_state_logstd;
    const bool learned_std = shared_std || state_std;
    ws.delta.assign(ws.head.size(), T(0.0));
    ws.dlog_std.assign(d, T(0.0));
    T loss(0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const T r = T(action[j]) - ws.head[j];
        if (kind == LossKind::nll) {
            bool inside = false;
            T ls(0.0);
            if (shared_std) ls = clamp_log_std(theta[lay.log_std_offset + j], inside);
            if (state_std) ls = clamp_log_std(ws.head[d + j], inside);
            const T inv_var = exp(T(-2.0) * ls);
            loss += T(0.5) * r * r * inv_var + ls + T(kHalfLog2Pi);
            ws.delta[j] = -(r * inv_var);
            if (learned_std && inside) ws.dlog_std[j] = T(1.0) - r * r * inv_var;
        } else {
            const double s = sign0(detail::value_of(r));
            loss += T(s) * r;
            ws.delta[j] = T(-s);
        }
    }
    if (head_grad) {
        head_grad->clear();
        for (std::size_t j = 0; j < d; ++j) head_grad->push_back(detail::value_of(ws.delta[j]));
        if (learned_std)
            for (std::size_t j = 0; j < d; ++j) head_grad->push_back(detail::value_of(ws.dlog_std[j]));
    }
    if (state_std)
        for (std::size_t j = 0; j < d; ++j) ws.delta[d + j] = ws.dlog_std[j];
    if (!grad) return loss;

    const T c(coef);
    for (std::size_t l = nl; l-- > 0;) {
        const auto& layer = lay.layers[l];
        const auto& a = ws.acts[l];
        for (std::size_t o = 0; o < layer.out; ++o) {
            const T g = c * ws.delta[o];
            T* gw = grad + layer.weight_offset + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) gw[i] += g * a[i];
            grad[layer.bias_offset + o] += g;
        }
        if (l == 0) break;
        ws.prev.assign(layer.in, T(0.0));
        for (std::size_t o = 0; o < layer.out; ++o) {
            const T* w = theta + layer.weight_offset + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) ws.prev[i] += w[i] * ws.delta[o];
        }
        for (std::size_t i = 0; i < layer.in; ++i) ws.prev[i] = ws.prev[i] * (T(1.0) - a[i] * a[i]);
        std::swap(ws.delta, ws.prev);
    }
    if (shared_std)
        for (std::size_t j = 0; j < d; ++j) grad[lay.log_std_offset + j] += c * ws.dlog_std[j];
    return loss;
}

void check_params(std::span<const double> params, const ParamLayout& lay) {
    if (params.size() != lay.size) throw Error("parameter vector length does not match the policy config");
    for (double p : params)
        if (!std::isfinite(p)) throw NumericalError("non-finite policy parameter", -1);
}

std::vector<Dual> seed_duals(std::span<const double> params, std::span<const double> dir) {
    if (dir.size() != params.size()) throw Error("direction length does not match the parameter vector");
    std::vector<Dual> out(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) out[k] = Dual(params[k], dir[k]);
    return out;
}

}  // namespace

PolicyOutput forward(std::span<const double> params, const PolicyConfig& config, std::span<const double> state) {
    const auto lay = make_layout(config);
    if (params.size() != lay.size) throw Error("parameter vector length does not match the policy config");
    if (state.size() != config.input_dim) throw Error("state dimension does not match the policy input");
    Workspace<double> ws;
    const Vector zero_action(config.output_dim, 0.0);
    sample_loss<double>(params.data(), lay, config, state, zero_action, LossKind::l1, 0.0, nullptr, ws);
    const std::size_t d = config.output_dim;
    PolicyOutput out{Vector(ws.head.begin(), ws.head.begin() + static_cast<std::ptrdiff_t>(d)), Vector(d, 0.0)};
    for (std::size_t j = 0; j < d; ++j) {
        if (config.head == Head::gaussian_learned_logstd)
            out.log_std[j] = std::clamp(params[lay.log_std_offset + j], kLogStdMin, kLogStdMax);
        if (config.head == Head::gaussian_state_logstd)
            out.log_std[j] = std::clamp(ws.head[d + j], kLogStdMin, kLogStdMax);
    }
    return out;
}

double bc_loss(std::span<const double> params, const PolicyConfig& config, std::span<const double> state,
               std::span<const double> action, LossKind kind) {
    const auto lay = make_layout(config);
    check_params(params, lay);
    Workspace<double> ws;
    return sample_loss<double>(params.data(), lay, config, state, action, kind, 0.0, nullptr, ws);
}

double bc_loss(std::span<const double> params, const PolicyConfig& config, const StateActionPair& pair,
               LossKind kind) {
    return bc_loss(params, config, pair.state, pair.action, kind);
}

double accumulate_weighted_grad(std::span<const double> params, const PolicyConfig& config,
                                std::span<const WeightedSample> batch, LossKind kind, std::span<double> grad) {
    const auto lay = make_layout(config);
    if (params.size() != lay.size || grad.size() != lay.size) throw Error("gradient buffer length mismatch");
    Workspace<double> ws;
    double total = 0.0;
    for (const auto& s : batch) {
        if (s.weight == 0.0) continue;
        total += s.weight * sample_loss<double>(params.data(), lay, config, s.state, s.action, kind, s.weight,
                                                grad.data(), ws);
    }
    return total;
}

Vector weighted_hvp(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                    LossKind kind, std::span<const double> v, std::span<double> directional) {
    const auto lay = make_layout(config);
    if (params.size() != lay.size) throw Error("parameter vector length does not match the policy config");
    if (!directional.empty() && directional.size() != batch.size())
        throw Error("directional output length does not match the batch");
    const auto theta = seed_duals(params, v);
    std::vector<Dual> grad(lay.size);
    Workspace<Dual> ws;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        if (s.weight == 0.0 && directional.empty()) continue;
        const Dual loss = sample_loss<Dual>(theta.data(), lay, config, s.state, s.action, kind, s.weight,
                                            s.weight == 0.0 ? nullptr : grad.data(), ws);
        if (!directional.empty()) directional[i] = loss.d;
    }
    Vector out(lay.size);
    for (std::size_t k = 0; k < lay.size; ++k) out[k] = grad[k].d;
    return out;
}

Vector grad_loss(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                 LossKind kind) {
    if (batch.empty()) throw Error("grad_loss: empty batch");
    const auto lay = make_layout(config);
    check_params(params, lay);
    Vector g(lay.size, 0.0);
    const double total = accumulate_weighted_grad(params, config, batch, kind, g);
    if (!std::isfinite(total)) throw NumericalError("non-finite loss in grad_loss", -1);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& x : g) {
        x *= inv;
        if (!std::isfinite(x)) throw NumericalError("non-finite gradient in grad_loss", -1);
    }
    return g;
}

Vector hvp_loss(std::span<const double> params, const PolicyConfig& config, std::span<const WeightedSample> batch,
                LossKind kind, std::span<const double> v) {
    if (batch.empty()) throw Error("hvp_loss: empty batch");
    Vector h = weighted_hvp(params, config, batch, kind, v);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& x : h) x *= inv;
    return h;
}

double directional_derivative(std::span<const double> params, const PolicyConfig& config,
                              std::span<const double> state, std::span<const double> action, LossKind kind,
                              std::span<const double> dir) {
    const auto lay = make_layout(config);
    if (params.size() != lay.size) throw Error("parameter vector length does not match the policy config");
    const auto theta = seed_duals(params, dir);
    Workspace<Dual> ws;
    return sample_loss<Dual>(theta.data(), lay, config, state, action, kind, 0.0, nullptr, ws).d;
}

Vector head_gradient(std::span<const double> params, const PolicyConfig& config, std::span<const double> state,
                     std::span<const double> action, LossKind kind) {
    const auto lay = make_layout(config);
    check_params(params, lay);
    Workspace<double> ws;
    Vector out;
    sample_loss<double>(params.data(), lay, config, state, action, kind, 0.0, nullptr, ws, &out);
    return out;
}

toyenv::PolicyFn mean_policy(Params params, PolicyConfig config) {
    auto lay = make_layout(config);
    return [params = std::move(params), config = std::move(config), lay](std::span<const double> obs) {
        Workspace<double> ws;
        const Vector zero_action(config.output_dim, 0.0);
        sample_loss<double>(params.data(), lay, config, obs, zero_action, LossKind::l1, 0.0, nullptr, ws);
        ws.head.resize(config.output_dim);
        return ws.head;
    };
}

void save_checkpoint(const Params& params, const PolicyConfig& config, const std::filesystem::path& path) {
    nlohmann::json j = {{"input_dim", config.input_dim},
                        {"output_dim", config.output_dim},
                        {"hidden", config.hidden},
                        {"head", to_string(config.head)},
                        {"params", params}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << j.dump() << '\n';
}

std::pair<Params, PolicyConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    const auto j = nlohmann::json::parse(in);
    PolicyConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.output_dim = j.at("output_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.head = head_from_string(j.at("head").get<std::string>());
    Params p = j.at("params").get<Params>();
    if (p.size() != cfg.num_params()) throw Error("checkpoint parameter count does not match its config");
    return {std::move(p), cfg};
}

}  // namespace datamil
