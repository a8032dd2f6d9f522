#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/gaussian.hpp"
#include "difflab/process.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// Finite Gaussian mixture. Closed under the forward noising processes, which
// makes it the analytic ground truth for densities and scores.
class GaussianMixture {
public:
    GaussianMixture(Vec weights, std::vector<GaussianDensity> components)
        : w_(std::move(weights)), comp_(std::move(components)) {
        require(!comp_.empty(), "GaussianMixture: needs at least one component");
        require(w_.size() == comp_.size(), "GaussianMixture: weight/component mismatch");
        double s = 0.0;
        for (double w : w_) {
            require(w >= 0.0, "GaussianMixture: negative weight");
            s += w;
        }
        require(std::abs(s - 1.0) <= 1e-12, "GaussianMixture: weights must sum to 1");
        for (const auto& c : comp_)
            require(c.dim() == comp_.front().dim(), "GaussianMixture: dim mismatch");
    }

    std::size_t dim() const { return comp_.front().dim(); }
    std::size_t n_components() const { return comp_.size(); }
    const Vec& weights() const { return w_; }
    const GaussianDensity& component(std::size_t i) const { return comp_[i]; }

    double log_pdf(std::span<const double> x) const {
        Vec terms(comp_.size());
        for (std::size_t i = 0; i < comp_.size(); ++i)
            terms[i] = (w_[i] > 0.0 ? std::log(w_[i]) + comp_[i].log_pdf(x)
                                    : -std::numeric_limits<double>::infinity());
        return log_sum_exp(terms);
    }
    double pdf(std::span<const double> x) const { return std::exp(log_pdf(x)); }
    double pdf1(double x) const { return pdf(std::span<const double>(&x, 1)); }
    double log_pdf1(double x) const { return log_pdf(std::span<const double>(&x, 1)); }

    // Score d/dx ln P via responsibility-weighted component scores;
    // log-sum-exp keeps responsibilities stable far in the tails.
    void score(std::span<const double> x, std::span<double> out) const {
        Vec lw(comp_.size());
        for (std::size_t i = 0; i < comp_.size(); ++i)
            lw[i] = (w_[i] > 0.0 ? std::log(w_[i]) + comp_[i].log_pdf(x)
                                 : -std::numeric_limits<double>::infinity());
        const double lse = log_sum_exp(lw);
        for (auto& v : out) v = 0.0;
        for (std::size_t i = 0; i < comp_.size(); ++i) {
            const double r = std::exp(lw[i] - lse);
            if (r == 0.0) continue;
            for (std::size_t k = 0; k < dim(); ++k)
                out[k] += r * (-(x[k] - comp_[i].mean[k]) / comp_[i].var[k]);
        }
    }
    double score1(double x) const {
        double s;
        score(std::span<const double>(&x, 1), std::span<double>(&s, 1));
        return s;
    }

    // 1D cumulative distribution.
    double cdf1(double x) const {
        require(dim() == 1, "cdf1: mixture is not one-dimensional");
        double c = 0.0;
        for (std::size_t i = 0; i < comp_.size(); ++i)
            c += w_[i] * 0.5 *
                 std::erfc(-(x - comp_[i].mean[0]) / std::sqrt(2.0 * comp_[i].var[0]));
        return c;
    }

    Vec mean() const {
        Vec m(dim(), 0.0);
        for (std::size_t i = 0; i < comp_.size(); ++i)
            for (std::size_t k = 0; k < dim(); ++k) m[k] += w_[i] * comp_[i].mean[k];
        return m;
    }
    // Marginal variance per coordinate (within + between components).
    Vec variance() const {
        const Vec m = mean();
        Vec v(dim(), 0.0);
        for (std::size_t i = 0; i < comp_.size(); ++i)
            for (std::size_t k = 0; k < dim(); ++k)
                v[k] += w_[i] * (comp_[i].var[k] + sqr(comp_[i].mean[k] - m[k]));
        return v;
    }

    // Deterministic draw keyed by (rng, index).
    void sample(const CounterRng& rng, std::uint64_t index,
                std::span<double> out) const {
        const double u = rng.uniform(index, 0, 0xC0FFEE, 0);
        double acc = 0.0;
        std::size_t pick = comp_.size() - 1;
        for (std::size_t i = 0; i < comp_.size(); ++i) {
            acc += w_[i];
            if (u <= acc) { pick = i; break; }
        }
        for (std::size_t k = 0; k < dim(); ++k)
            out[k] = comp_[pick].mean[k] +
                     std::sqrt(comp_[pick].var[k]) * rng.normal(index, 0, k, 1);
    }
    double sample1(const CounterRng& rng, std::uint64_t index) const {
        double x;
        sample(rng, index, std::span<double>(&x, 1));
        return x;
    }

private:
    Vec w_;
    std::vector<GaussianDensity> comp_;
};

// Grid of exact mixture snapshots along the forward noising process.
struct MixturePath {
    TimeGrid grid;
    std::vector<GaussianMixture> snapshots;  // one per node, forward-time indexed

    const GaussianMixture& at(std::size_t s) const {
        require(s < snapshots.size(), "MixturePath: node index out of range");
        return snapshots[s];
    }
};

enum class ForwardKind {
    pure_diffusion,  // variance grows by int D dt, means fixed
    ou,              // continuum OU formulas exp(-int beta)
    ddpm,            // exact per-node alpha products (matches ddpm_finite_kernel)
};

// Evolves every component in closed form; weights never change.
inline MixturePath evolve_mixture(const GaussianMixture& mixture,
                                  const NoiseSchedule& schedule,
                                  const TimeGrid& grid, ForwardKind kind) {
    std::vector<GaussianMixture> snaps;
    snaps.reserve(grid.n_nodes());
    const double t0 = grid.t_start();

    // cumulative int D dt on the grid, for the pure-diffusion kind
    Vec cum_d(grid.n_nodes(), 0.0);
    for (std::size_t s = 0; s + 1 < grid.n_nodes(); ++s)
        cum_d[s + 1] = cum_d[s] + 0.5 *
            (schedule.diffusion(grid.node(s)) + schedule.diffusion(grid.node(s + 1))) *
            grid.dt(s);

    for (std::size_t s = 0; s < grid.n_nodes(); ++s) {
        const double t = grid.node(s);
        double mean_scale = 1.0, var_scale = 1.0, added_var = 0.0;
        switch (kind) {
            case ForwardKind::pure_diffusion:
                added_var = cum_d[s];
                break;
            case ForwardKind::ou: {
                const double B = schedule.int_beta(t0, t);
                if (B > 0.0) {
                    require(schedule.beta(t) > 0.0, "evolve_mixture: ou needs beta > 0");
                    mean_scale = std::exp(-0.5 * B);
                    var_scale = std::exp(-B);
                    added_var = schedule.diffusion(t) / schedule.beta(t) *
                                (1.0 - std::exp(-B));
                }
                break;
            }
            case ForwardKind::ddpm: {
                // schedule grid node matching t, exact product
                const double ab = (s == 0 && t == schedule.grid().t_start())
                                      ? 1.0
                                      : schedule.alpha_bar_at_time(t);
                mean_scale = std::sqrt(ab);
                var_scale = ab;
                added_var = 1.0 - ab;
                break;
            }
        }
        std::vector<GaussianDensity> comps;
        comps.reserve(mixture.n_components());
        for (std::size_t i = 0; i < mixture.n_components(); ++i) {
            const auto& c = mixture.component(i);
            Vec m(c.dim()), v(c.dim());
            for (std::size_t k = 0; k < c.dim(); ++k) {
                m[k] = c.mean[k] * mean_scale;
                v[k] = c.var[k] * var_scale + added_var;
            }
            comps.emplace_back(std::move(m), std::move(v));
        }
        snaps.emplace_back(mixture.weights(), std::move(comps));
    }
    return {grid, std::move(snaps)};
}

inline Vec exact_score(const MixturePath& path, std::span<const double> x,
                       std::size_t s) {
    Vec out(x.size());
    path.at(s).score(x, out);
    return out;
}

inline double exact_score1(const MixturePath& path, double x, std::size_t s) {
    return path.at(s).score1(x);
}

// Reverse drift -F(x,t_s) + D(t_s) * score(x,t_s) of the time-reversed SDE.
inline Vec reverse_drift(const ProcessSpec& spec_forward, const MixturePath& path,
                         const NoiseSchedule& schedule, std::span<const double> x,
                         std::size_t s) {
    const double t = path.grid.node(s);
    Vec f(x.size());
    spec_forward.drift(x, t, f);
    Vec sc = exact_score(path, x, s);
    const double d = schedule.diffusion(t);
    Vec out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = -f[k] + d * sc[k];
    return out;
}

// Confining drift F = -V' with constant D has equilibrium P ~ exp(-2V/D).
// Returns max | d ln P_eq / dx - 2F/D | measured on interval midpoints, where
// the discrete derivative of the cumulative-trapezoid potential pairs exactly
// with the midpoint drift average. `potential_override` substitutes a foreign
// V (negative-control hook).
inline double equilibrium_score_check(
    const std::function<double(double)>& drift, double diffusion,
    const Vec& x_grid,
    const std::optional<std::function<double(double)>>& potential_override =
        std::nullopt) {
    require(x_grid.size() >= 3, "equilibrium_score_check: grid too small");
    require(diffusion > 0.0, "equilibrium_score_check: D must be positive");
    const std::size_t m = x_grid.size();
    const double h = x_grid[1] - x_grid[0];

    Vec potential(m, 0.0);
    if (potential_override) {
        for (std::size_t i = 0; i < m; ++i) potential[i] = (*potential_override)(x_grid[i]);
    } else {
        for (std::size_t i = 0; i + 1 < m; ++i)
            potential[i + 1] = potential[i] -
                0.5 * (drift(x_grid[i]) + drift(x_grid[i + 1])) * h;
    }

    // normalizability: the Gibbs weights must decay toward the grid edges
    Vec log_p(m);
    double lp_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        log_p[i] = -2.0 * potential[i] / diffusion;
        lp_max = std::max(lp_max, log_p[i]);
    }
    if (log_p.front() > lp_max - 4.0 || log_p.back() > lp_max - 4.0)
        throw numeric_error(
            "equilibrium_score_check: exp(-2V/D) does not decay on the grid "
            "(non-normalizable equilibrium)");

    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double dlogp = (log_p[i + 1] - log_p[i]) / h;
        const double target = (drift(x_grid[i]) + drift(x_grid[i + 1])) / diffusion;
        worst = std::max(worst, std::abs(dlogp - target));
    }
    return worst;
}

}  // namespace difflab
