// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <optional>
#include <span>

#include "datamil/common.hpp"

namespace datamil::stats {

double mean(std::span<const double> x);

/// Empty when either input has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks (ties share their mean rank).
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

Vector average_ranks(std::span<const double> x);

double mse(std::span<const double> x, std::span<const double> y);

}  // namespace datamil::stats
