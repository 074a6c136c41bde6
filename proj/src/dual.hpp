// Copyright (c) 2026, The DataMIL Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>

namespace datamil::detail {

// First-order forward-mode number: value plus one tangent.
struct Dual {
    double v = 0.0;
    double d = 0.0;

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
    constexpr Dual(double value, double tangent) : v(value), d(tangent) {}

    Dual& operator+=(const Dual& o) {
        v += o.v;
        d += o.d;
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        d -= o.d;
        return *this;
    }
    Dual& operator*=(const Dual& o) {
        d = d * o.v + v * o.d;
        v *= o.v;
        return *this;
    }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator/(const Dual& a, const Dual& b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

inline Dual tanh(const Dual& x) {
    const double t = std::tanh(x.v);
    return {t, x.d * (1.0 - t * t)};
}
inline Dual exp(const Dual& x) {
    const double e = std::exp(x.v);
    return {e, x.d * e};
}

}  // namespace datamil::detail
