// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <nlohmann/json.hpp>

#include "datamil/policy.hpp"
#include "datamil/toyenv.hpp"
#include "datamil/trainer.hpp"

// JSON conversions for configuration types. Unknown keys are rejected so that typos in
// config files surface as errors instead of silently falling back to defaults.
namespace datamil {

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

/// The co-training target set is not embedded; only alpha is written.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

namespace toyenv {
void to_json(nlohmann::json& j, const EnvSpec& s);
void from_json(const nlohmann::json& j, EnvSpec& s);
}  // namespace toyenv

/// Throws Error naming the first key of `j` that is not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace datamil
