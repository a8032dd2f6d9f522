#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/process.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// dW_s ~ N(0, dt_s), i.i.d. across paths, steps and coordinates, laid out
// [step][path][coord]. Counter-based generation, so any sub-block matches
// what a full run would have produced.
struct IncrementArray {
    std::size_t n_steps = 0, n_paths = 0, dim = 0;
    Vec data;

    double at(std::size_t s, std::size_t p, std::size_t k) const {
        return data[(s * n_paths + p) * dim + k];
    }
};

inline IncrementArray wiener_increments(const TimeGrid& grid, std::size_t n_paths,
                                        std::size_t d, std::uint64_t seed,
                                        unsigned n_threads = 0) {
    require(n_paths >= 1, "wiener_increments: need at least one path");
    require(d >= 1, "wiener_increments: dimension must be positive");
    IncrementArray out;
    out.n_steps = grid.n_steps();
    out.n_paths = n_paths;
    out.dim = d;
    out.data.resize(out.n_steps * n_paths * d);
    const CounterRng rng(seed);
    parallel_for(n_paths, n_threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p)
            for (std::size_t s = 0; s < out.n_steps; ++s) {
                const double scale = std::sqrt(grid.dt(s));
                for (std::size_t k = 0; k < d; ++k)
                    out.data[(s * n_paths + p) * d + k] = scale * rng.normal(p, s, k);
            }
    });
    return out;
}

// x + F(x,t_s) dt_s + sqrt(D(t_s)) dW, left-point evaluation. Aborts with the
// offending state when the drift stops being finite.
inline void euler_maruyama_step(std::span<double> x, std::size_t s,
                                const ProcessSpec& spec, const TimeGrid& grid,
                                std::span<const double> dW,
                                std::span<double> drift_scratch) {
    const double t = grid.node(s);
    const double dt = grid.dt(s);
    spec.drift(x, t, drift_scratch);
    const double root_d = std::sqrt(spec.diffusion(t));
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (!std::isfinite(drift_scratch[k])) {
            std::ostringstream os;
            os << "euler_maruyama_step: non-finite drift at t=" << t << ", x=(";
            for (std::size_t j = 0; j < x.size(); ++j)
                os << x[j] << (j + 1 < x.size() ? "," : ")");
            throw numeric_error(os.str());
        }
        x[k] += drift_scratch[k] * dt + root_d * dW[k];
    }
}

inline Vec euler_maruyama_step(const Vec& x, std::size_t s, const ProcessSpec& spec,
                               const TimeGrid& grid, const Vec& dW) {
    Vec y = x, scratch(x.size());
    euler_maruyama_step(std::span<double>(y), s, spec, grid, dW, scratch);
    return y;
}

// Draws the initial state for path `index`.
using InitSampler =
    std::function<void(const CounterRng&, std::uint64_t index, std::span<double> out)>;

inline InitSampler point_mass_init(Vec x0) {
    return [x0 = std::move(x0)](const CounterRng&, std::uint64_t, std::span<double> out) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = x0[k];
    };
}

inline InitSampler gaussian_init(Vec mean, Vec var) {
    return [mean = std::move(mean), var = std::move(var)](
               const CounterRng& rng, std::uint64_t p, std::span<double> out) {
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = mean[k] + std::sqrt(var[k]) * rng.normal(p, 0, k, 2);
    };
}

struct SimulateOptions {
    unsigned n_threads = 0;        // 0 = hardware concurrency
    double explosion_bound = 1e6;  // abort when |x_k| exceeds this
};

// Monte Carlo ensemble at the retained nodes. Soft killing: weights pick up
// exp(-V(x_s,t_s) dt_s) per step and no path is ever deleted, so estimators
// stay unbiased and the ensemble size is fixed.
struct Ensemble {
    TimeGrid grid;
    std::vector<std::size_t> retained;   // node indices, ascending
    std::vector<Vec> states;             // [retained][path*dim]
    std::vector<Vec> weights;            // [retained][path]
    std::size_t n_paths = 0, dim = 1;
    std::uint64_t seed = 0;

    std::span<const double> state(std::size_t r, std::size_t p) const {
        return {states[r].data() + p * dim, dim};
    }
    // Scalar view of a retained node, valid for dim == 1.
    const Vec& states1(std::size_t r) const {
        require(dim == 1, "states1: ensemble is not one-dimensional");
        return states[r];
    }
};

inline Ensemble simulate_ensemble(const ProcessSpec& spec, const InitSampler& init,
                                  const TimeGrid& grid, std::size_t n_paths,
                                  std::uint64_t seed,
                                  std::vector<std::size_t> retain = {},
                                  const SimulateOptions& opt = {}) {
    require(n_paths >= 1, "simulate_ensemble: need at least one path");
    const std::size_t d = spec.dimension;
    const std::size_t n = grid.n_steps();
    if (retain.empty()) retain = {0, n};
    for (std::size_t r : retain)
        require(r <= n, "simulate_ensemble: retained node out of range");

    Ensemble ens{grid, retain, {}, {}, n_paths, d, seed};
    ens.states.assign(retain.size(), Vec(n_paths * d));
    ens.weights.assign(retain.size(), Vec(n_paths, 1.0));

    const CounterRng rng(seed);
    parallel_for(n_paths, opt.n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec x(d), dw(d), scratch(d);
        for (std::size_t p = lo; p < hi; ++p) {
            init(rng, p, x);
            double w = 1.0;
            std::size_t next_ret = 0;
            auto emit = [&](std::size_t node) {
                while (next_ret < retain.size() && retain[next_ret] == node) {
                    for (std::size_t k = 0; k < d; ++k)
                        ens.states[next_ret][p * d + k] = x[k];
                    ens.weights[next_ret][p] = w;
                    ++next_ret;
                }
            };
            emit(0);
            for (std::size_t s = 0; s < n; ++s) {
                if (spec.has_killing())
                    w *= std::exp(-spec.killing(x, grid.node(s)) * grid.dt(s));
                const double scale = std::sqrt(grid.dt(s));
                for (std::size_t k = 0; k < d; ++k)
                    dw[k] = scale * rng.normal(p, s, k);
                euler_maruyama_step(x, s, spec, grid, dw, scratch);
                for (std::size_t k = 0; k < d; ++k)
                    if (std::abs(x[k]) > opt.explosion_bound) {
                        std::ostringstream os;
                        os << "simulate_ensemble: state explosion at t=" << grid.node(s + 1)
                           << ", |x|=" << std::abs(x[k])
                           << " exceeds bound " << opt.explosion_bound;
                        throw numeric_error(os.str());
                    }
                emit(s + 1);
            }
        }
    });
    return ens;
}

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

// E[ terminal_fn(x(t_n)) exp(-sum V dt) | x(tau) = xi ] by weighted paths.
// tau must be a grid node.
inline McEstimate feynman_kac_expectation(
    const ProcessSpec& spec, const std::function<double(std::span<const double>)>& terminal_fn,
    const Vec& start_state, double start_time, const TimeGrid& grid,
    std::size_t n_paths, std::uint64_t seed, const SimulateOptions& opt = {}) {
    require(n_paths >= 1, "feynman_kac_expectation: need at least one path");
    const std::size_t at = grid.index_of(start_time);
    require(at < grid.n_steps(), "feynman_kac_expectation: start time is the horizon");
    const TimeGrid sub = grid.suffix_from(at);
    const std::size_t last = sub.n_steps();
    Ensemble ens = simulate_ensemble(spec, point_mass_init(start_state), sub, n_paths,
                                     seed, {last}, opt);
    Vec vals(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p)
        vals[p] = terminal_fn(ens.state(0, p)) * ens.weights[0][p];
    const MeanVar mv = mean_variance(vals);
    return {mv.mean, std::sqrt(mv.var / static_cast<double>(n_paths)), n_paths};
}

}  // namespace difflab
