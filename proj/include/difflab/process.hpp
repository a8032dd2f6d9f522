#pragma once

#include <functional>
#include <utility>

#include "difflab/common.hpp"

namespace difflab {

// Drift F(x,t) for d-dimensional states. The span view keeps hot loops
// allocation-free.
using DriftFn = std::function<void(std::span<const double> x, double t,
                                   std::span<double> out)>;
// Scalar diffusion coefficient D(t).
using DiffusionFn = std::function<double(double)>;
// Killing rate V(x,t).
using KillingFn = std::function<double(std::span<const double> x, double t)>;

// One value of this type defines a forward, reverse, or controlled process:
// dx = F(x,t) dt + sqrt(D(t)) dW, with optional killing rate V(x,t) that
// multiplies path weights by exp(-V dt) per step.
struct ProcessSpec {
    DriftFn drift;
    DiffusionFn diffusion;
    KillingFn killing;  // empty when absent
    std::size_t dimension = 1;

    bool has_killing() const { return static_cast<bool>(killing); }
};

// 1D scalar drift helper.
inline DriftFn scalar_drift(std::function<double(double, double)> f) {
    return [f = std::move(f)](std::span<const double> x, double t,
                              std::span<double> out) { out[0] = f(x[0], t); };
}

inline ProcessSpec make_process_1d(std::function<double(double, double)> drift,
                                   DiffusionFn diffusion,
                                   std::function<double(double, double)> killing = {}) {
    ProcessSpec spec;
    spec.drift = scalar_drift(std::move(drift));
    spec.diffusion = std::move(diffusion);
    if (killing)
        spec.killing = [k = std::move(killing)](std::span<const double> x,
                                                double t) { return k(x[0], t); };
    spec.dimension = 1;
    return spec;
}

}  // namespace difflab
