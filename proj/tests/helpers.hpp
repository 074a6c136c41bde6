// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "datamil/dataset.hpp"
#include "datamil/policy.hpp"

namespace testutil {

using namespace datamil;

/// Removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("datamil_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

/// Trajectories with random lengths in [min_len, max_len] and Gaussian contents.
inline std::vector<Trajectory> random_trajectories(std::size_t count, int min_len, int max_len, std::uint64_t seed,
                                                   std::size_t sdim = 4, std::size_t adim = 2) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(min_len, max_len);
    std::uniform_int_distribution<int> task(0, 7);
    std::vector<Trajectory> out;
    for (std::size_t t = 0; t < count; ++t) {
        const int n = len(rng);
        std::vector<Vector> s, a;
        for (int k = 0; k < n; ++k) {
            s.push_back(random_vector(rng, sdim));
            a.push_back(random_vector(rng, adim, 0.5));
        }
        out.push_back(Trajectory::from_rows(static_cast<int>(t), task(rng),
                                            t % 3 == 0 ? SourceTag::expert : SourceTag::suboptimal, s, a));
    }
    return out;
}

inline PolicyConfig small_policy(Head head = Head::gaussian_learned_logstd, std::vector<int> hidden = {5, 4}) {
    PolicyConfig c;
    c.hidden = std::move(hidden);
    c.head = head;
    return c;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testutil
