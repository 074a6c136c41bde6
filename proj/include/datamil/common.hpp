// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace datamil {

using Vector = std::vector<double>;

/// Raised for malformed inputs, bad configurations and violated preconditions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a requested configuration is valid on its own but not supported
/// by the operation (e.g. adam under the metagradient reverse pass).
class UnsupportedConfiguration : public Error {
public:
    using Error::Error;
};

/// Non-finite values during training or the reverse pass.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// Deterministic generator for a (seed, stream) pair. Every stochastic step in the
/// library derives its randomness from one of these so that parallel and serial
/// execution agree.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Stable 64-bit FNV-1a hash, used for config hashes and fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be written
/// to per-index slots by the caller; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned workers = 0);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace datamil
