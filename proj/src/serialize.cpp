// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "datamil/serialize.hpp"

#include <algorithm>
#include <cstring>

namespace datamil {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw Error(std::string(where) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!ok) throw Error(std::string(where) + ": unknown key '" + key + "'");
    }
}

void to_json(json& j, const PolicyConfig& c) {
    j = {{"input_dim", c.input_dim}, {"output_dim", c.output_dim}, {"hidden", c.hidden}, {"head", to_string(c.head)}};
}

void from_json(const json& j, PolicyConfig& c) {
    reject_unknown_keys(j, {"input_dim", "output_dim", "hidden", "head"}, "policy");
    if (j.contains("input_dim")) c.input_dim = j.at("input_dim").get<std::size_t>();
    if (j.contains("output_dim")) c.output_dim = j.at("output_dim").get<std::size_t>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("head")) c.head = head_from_string(j.at("head").get<std::string>());
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"policy", c.policy},
         {"steps", c.steps},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"optimizer", to_string(c.optimizer)},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"loss", to_string(c.loss)},
         {"seed", c.seed},
         {"checkpoint_stride", c.checkpoint_stride}};
    if (c.cotrain) j["cotrain_alpha"] = c.cotrain->alpha;
}

void from_json(const json& j, TrainConfig& c) {
    reject_unknown_keys(j,
                        {"policy", "steps", "learning_rate", "batch_size", "optimizer", "adam_beta1", "adam_beta2",
                         "adam_eps", "loss", "seed", "checkpoint_stride", "cotrain_alpha"},
                        "train");
    if (j.contains("policy")) from_json(j.at("policy"), c.policy);
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_stride")) c.checkpoint_stride = j.at("checkpoint_stride").get<int>();
    if (j.contains("cotrain_alpha") && j.at("cotrain_alpha").is_null()) {
        c.cotrain.reset();
    } else if (j.contains("cotrain_alpha")) {
        if (!c.cotrain) c.cotrain.emplace();
        c.cotrain->alpha = j.at("cotrain_alpha").get<double>();
    }
}

namespace toyenv {

void to_json(json& j, const EnvSpec& s) {
    j = {{"num_tasks", s.num_tasks},       {"dt", s.dt},
         {"gain", s.gain},                 {"action_clip", s.action_clip},
         {"success_radius", s.success_radius}, {"max_steps", s.max_steps},
         {"start_low", s.start_low},       {"start_high", s.start_high},
         {"goal_conditioned", s.goal_conditioned}};
}

void from_json(const json& j, EnvSpec& s) {
    reject_unknown_keys(j,
                        {"num_tasks", "dt", "gain", "action_clip", "success_radius", "max_steps", "start_low",
                         "start_high", "goal_conditioned"},
                        "env");
    if (j.contains("num_tasks")) s.num_tasks = j.at("num_tasks").get<int>();
    if (j.contains("dt")) s.dt = j.at("dt").get<double>();
    if (j.contains("gain")) s.gain = j.at("gain").get<double>();
    if (j.contains("action_clip")) s.action_clip = j.at("action_clip").get<double>();
    if (j.contains("success_radius")) s.success_radius = j.at("success_radius").get<double>();
    if (j.contains("max_steps")) s.max_steps = j.at("max_steps").get<int>();
    if (j.contains("start_low")) s.start_low = j.at("start_low").get<double>();
    if (j.contains("start_high")) s.start_high = j.at("start_high").get<double>();
    if (j.contains("goal_conditioned")) s.goal_conditioned = j.at("goal_conditioned").get<bool>();
}

}  // namespace toyenv

}  // namespace datamil
