#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "difflab/common.hpp"

namespace difflab {

using TimeFn = std::function<double(double)>;

// Time discretization t_0 < t_1 < ... < t_n shared by every module.
// Immutable after construction.
class TimeGrid {
public:
    TimeGrid(Vec nodes) : nodes_(std::move(nodes)) {
        require(nodes_.size() >= 2, "TimeGrid needs at least one step");
        for (double t : nodes_) require_finite(t, "TimeGrid node");
        steps_.resize(nodes_.size() - 1);
        for (std::size_t s = 0; s + 1 < nodes_.size(); ++s) {
            steps_[s] = nodes_[s + 1] - nodes_[s];
            require(steps_[s] > 0.0, "TimeGrid nodes must be strictly increasing");
        }
        uniform_ = true;
        for (double dt : steps_)
            uniform_ = uniform_ && std::abs(dt - steps_.front()) <= 1e-12 * steps_.front();
    }

    double t_start() const { return nodes_.front(); }
    double t_end() const { return nodes_.back(); }
    std::size_t n_steps() const { return steps_.size(); }
    std::size_t n_nodes() const { return nodes_.size(); }
    double node(std::size_t s) const { return nodes_[s]; }
    double dt(std::size_t s) const { return steps_[s]; }
    const Vec& nodes() const { return nodes_; }
    const Vec& steps() const { return steps_; }

    // Index of the node equal to t (within a relative tolerance). Constant
    // time on uniform grids, binary search otherwise.
    std::size_t index_of(double t) const {
        const double scale = std::max(std::abs(t_start()), std::abs(t_end()));
        const double tol = 1e-12 * std::max(1.0, scale);
        const double dt0 = steps_.front();
        std::size_t guess;
        if (uniform_) {
            const double pos = (t - t_start()) / dt0;
            guess = static_cast<std::size_t>(
                std::clamp(std::llround(pos), 0ll,
                           static_cast<long long>(nodes_.size() - 1)));
        } else {
            guess = static_cast<std::size_t>(
                std::lower_bound(nodes_.begin(), nodes_.end(), t - tol) -
                nodes_.begin());
            guess = std::min(guess, nodes_.size() - 1);
        }
        if (std::abs(nodes_[guess] - t) <= tol) return guess;
        if (guess > 0 && std::abs(nodes_[guess - 1] - t) <= tol) return guess - 1;
        throw numeric_error("time " + std::to_string(t) + " is not a grid node");
    }

    // Sub-grid from node index `from` to the end.
    TimeGrid suffix_from(std::size_t from) const {
        require(from + 1 < nodes_.size(), "suffix_from: no steps remain");
        return TimeGrid(Vec(nodes_.begin() + static_cast<std::ptrdiff_t>(from),
                            nodes_.end()));
    }

private:
    Vec nodes_;
    Vec steps_;
    bool uniform_ = true;
};

enum class Spacing { uniform, geometric };

// Geometric spacing shrinks toward t_start with dt_0/dt_{n-1} = first_to_last_ratio;
// score error near t ~ 0 dominates sample quality, so that end gets the nodes.
inline TimeGrid make_time_grid(double t_start, double t_end, std::size_t n,
                               Spacing spacing = Spacing::uniform,
                               double first_to_last_ratio = 100.0) {
    require_finite(t_start, "t_start");
    require_finite(t_end, "t_end");
    require(t_end > t_start, "make_time_grid: t_end must exceed t_start");
    require(n >= 1, "make_time_grid: n must be at least 1");
    const double span = t_end - t_start;
    Vec nodes(n + 1);
    nodes[0] = t_start;
    if (spacing == Spacing::uniform || n == 1) {
        for (std::size_t s = 1; s < n; ++s)
            nodes[s] = t_start + span * static_cast<double>(s) / static_cast<double>(n);
    } else {
        require(first_to_last_ratio > 0.0, "geometric ratio must be positive");
        // dt_s = dt_0 * r^s with r^(n-1) = 1/ratio
        const double r = std::pow(first_to_last_ratio,
                                  -1.0 / static_cast<double>(n - 1));
        double sum;
        if (std::abs(1.0 - r) < 1e-14) {
            sum = static_cast<double>(n);
        } else {
            sum = (1.0 - std::pow(r, static_cast<double>(n))) / (1.0 - r);
        }
        const double dt0 = span / sum;
        double acc = 0.0, dts = dt0;
        for (std::size_t s = 1; s < n; ++s) {
            acc += dts;
            nodes[s] = t_start + acc;
            dts *= r;
        }
    }
    nodes[n] = t_end;
    return TimeGrid(std::move(nodes));
}

// beta(t), D(t) and the per-node alpha / alpha-bar arrays driving both the
// forward noising stage and the reverse sampler. beta is evaluated at the
// left endpoint of each interval (Ito convention).
class NoiseSchedule {
public:
    NoiseSchedule(TimeFn beta, TimeFn diffusion, TimeGrid grid)
        : beta_(std::move(beta)), diffusion_(std::move(diffusion)),
          grid_(std::move(grid)) {
        const std::size_t n = grid_.n_steps();
        beta_nodes_.resize(n + 1);
        diff_nodes_.resize(n + 1);
        for (std::size_t s = 0; s <= n; ++s) {
            const double t = grid_.node(s);
            beta_nodes_[s] = beta_(t);
            diff_nodes_[s] = diffusion_(t);
            require(beta_nodes_[s] >= 0.0, "beta(t) must be non-negative");
            require(diff_nodes_[s] > 0.0, "D(t) must be positive");
        }
        // cumulative trapezoid of beta, used by the OU kernel integrals
        cum_int_beta_.assign(n + 1, 0.0);
        for (std::size_t s = 0; s < n; ++s)
            cum_int_beta_[s + 1] = cum_int_beta_[s] +
                0.5 * (beta_nodes_[s] + beta_nodes_[s + 1]) * grid_.dt(s);
        alpha_step_.assign(n, 1.0);
        alpha_bar_.assign(n + 1, 1.0);
        for (std::size_t s = 0; s < n; ++s) {
            const double beta_ts = beta_nodes_[s] * grid_.dt(s);
            require(beta_ts < 1.0,
                    "beta(t_s)*dt_s >= 1 at step " + std::to_string(s) +
                        ": grid too coarse for the small-beta expansion");
            alpha_step_[s] = 1.0 - beta_ts;
            alpha_bar_[s + 1] = alpha_bar_[s] * alpha_step_[s];
        }
    }

    const TimeGrid& grid() const { return grid_; }
    double beta(double t) const { return beta_(t); }
    double diffusion(double t) const { return diffusion_(t); }
    double alpha_step(std::size_t s) const { return alpha_step_[s]; }
    double alpha_bar(std::size_t s) const { return alpha_bar_[s]; }
    const Vec& alpha_bar_nodes() const { return alpha_bar_; }

    // int_{t0}^{t1} beta, with beta linear between grid nodes.
    double int_beta(double t0, double t1) const {
        return cum_beta_at(t1) - cum_beta_at(t0);
    }

    // Continuum surrogate abar(t) = exp(-int_0^t beta).
    double alpha_bar_continuum(double t) const {
        return std::exp(-(cum_beta_at(t) - cum_int_beta_.front()));
    }

    // abar interpolated between nodes through the continuum surrogate ratio;
    // exact at the nodes.
    double alpha_bar_at_time(double t) const {
        require(t >= grid_.t_start() - 1e-12 && t <= grid_.t_end() + 1e-12,
                "time outside schedule range");
        std::size_t s = 0;
        while (s + 1 < grid_.n_nodes() && grid_.node(s + 1) <= t) ++s;
        const double scale = std::exp(-(cum_beta_at(t) - cum_int_beta_[s]));
        return alpha_bar_[s] * scale;
    }

private:

    double cum_beta_at(double t) const {
        const std::size_t nn = grid_.n_nodes();
        if (t <= grid_.t_start()) return cum_int_beta_.front();
        if (t >= grid_.t_end()) return cum_int_beta_.back();
        std::size_t s = 0;
        while (s + 2 < nn && grid_.node(s + 1) <= t) ++s;
        const double t0 = grid_.node(s), t1 = grid_.node(s + 1);
        const double w = (t - t0) / (t1 - t0);
        const double beta_t = beta_nodes_[s] * (1.0 - w) + beta_nodes_[s + 1] * w;
        return cum_int_beta_[s] + 0.5 * (beta_nodes_[s] + beta_t) * (t - t0);
    }

    TimeFn beta_;
    TimeFn diffusion_;
    TimeGrid grid_;
    Vec beta_nodes_, diff_nodes_, cum_int_beta_;
    Vec alpha_step_, alpha_bar_;
};

// DDPM schedule: D(t) = beta(t), alpha_{t_s} = 1 - beta(t_s) dt_s, abar by
// exact product; the continuum surrogate exp(-int beta) is kept alongside.
inline NoiseSchedule ddpm_schedule(TimeFn beta, const TimeGrid& grid) {
    TimeFn d = beta;
    return NoiseSchedule(std::move(beta), std::move(d), grid);
}

// Generic (beta, D) pair for OU processes that are not DDPM-tied.
inline NoiseSchedule ou_schedule(TimeFn beta, TimeFn diffusion,
                                 const TimeGrid& grid) {
    return NoiseSchedule(std::move(beta), std::move(diffusion), grid);
}

}  // namespace difflab
