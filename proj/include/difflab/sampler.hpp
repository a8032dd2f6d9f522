#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/process.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"
#include "difflab/score_model.hpp"
#include "difflab/sde.hpp"

namespace difflab {

// Thread-safe score evaluator S(x, t).
using ScoreFn =
    std::function<void(std::span<const double> x, double t, std::span<double> out)>;

inline ScoreFn model_score_fn(const ScoreModel& model) {
    return [&model](std::span<const double> x, double t, std::span<double> out) {
        static thread_local ScoreModel::Workspace ws;
        model.eval(x, t, out, ws);
    };
}

struct SamplerOptions {
    // the last reverse step stops at t >= t_start + eps_min_fraction * span;
    // the score is untrained (and the exact conditional stiffens) below it
    double eps_min_fraction = 1e-3;
    bool retain_snapshots = false;
    unsigned n_threads = 0;
    double explosion_bound = 1e6;
};

struct GenerationRun {
    TimeGrid grid;
    std::size_t stop_node = 0;  // node index where the sweep stopped
    std::size_t n_samples = 0, dim = 1;
    std::uint64_t seed = 0;
    Vec samples;                          // terminal states [sample][dim]
    std::vector<std::size_t> snapshot_nodes;  // descending, when retained
    std::vector<Vec> snapshots;

    const Vec& samples1() const {
        require(dim == 1, "samples1: run is not one-dimensional");
        return samples;
    }
};

// Integrates the reverse SDE dx = [-F(x,t) + D(t) S(x,t)] dtau +
// sqrt(D(t)) dW from the tractable distribution, sweeping the grid from its
// horizon down to the stop node. Drift is evaluated at the current node
// (left point in reverse time).
inline GenerationRun sample_reverse(const ScoreFn& score,
                                    const ProcessSpec& spec_forward,
                                    const NoiseSchedule& schedule,
                                    const TimeGrid& grid, std::size_t n_samples,
                                    std::uint64_t seed, const InitSampler& init,
                                    const SamplerOptions& opt = {}) {
    require(n_samples >= 1, "sample_reverse: need at least one sample");
    const std::size_t n = grid.n_steps();
    const std::size_t d = spec_forward.dimension;
    const double t_min =
        grid.t_start() + opt.eps_min_fraction * (grid.t_end() - grid.t_start());
    std::size_t stop = 0;
    while (stop < n && grid.node(stop) < t_min) ++stop;

    GenerationRun run{grid, stop, n_samples, d, seed, {}, {}, {}};
    run.samples.assign(n_samples * d, 0.0);
    if (opt.retain_snapshots) {
        for (std::size_t s = n + 1; s-- > stop;) run.snapshot_nodes.push_back(s);
        run.snapshots.assign(run.snapshot_nodes.size(), Vec(n_samples * d, 0.0));
    }

    const CounterRng rng(seed);
    parallel_for(n_samples, opt.n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec x(d), f(d), sc(d);
        for (std::size_t p = lo; p < hi; ++p) {
            init(rng, p, x);
            std::size_t snap = 0;
            auto emit = [&](std::size_t node) {
                if (!opt.retain_snapshots) return;
                if (snap < run.snapshot_nodes.size() && run.snapshot_nodes[snap] == node) {
                    for (std::size_t k = 0; k < d; ++k)
                        run.snapshots[snap][p * d + k] = x[k];
                    ++snap;
                }
            };
            emit(n);
            for (std::size_t s = n; s-- > stop;) {
                // step from node s+1 down to node s
                const double t = grid.node(s + 1);
                const double dtau = grid.dt(s);
                const double diff = schedule.diffusion(t);
                spec_forward.drift(x, t, f);
                score(x, t, sc);
                const double noise_scale = std::sqrt(diff * dtau);
                for (std::size_t k = 0; k < d; ++k) {
                    const double drift = -f[k] + diff * sc[k];
                    require(std::isfinite(drift),
                            "sample_reverse: non-finite reverse drift");
                    x[k] += drift * dtau + noise_scale * rng.normal(p, s, k, 3);
                    if (std::abs(x[k]) > opt.explosion_bound)
                        throw numeric_error(
                            "sample_reverse: state explosion near t = " +
                            std::to_string(grid.node(s)) +
                            " (mis-specified score or drift)");
                }
                emit(s);
            }
            for (std::size_t k = 0; k < d; ++k) run.samples[p * d + k] = x[k];
        }
    });
    return run;
}

}  // namespace difflab
