#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/mixture.hpp"
#include "difflab/pde.hpp"
#include "difflab/process.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"
#include "difflab/sde.hpp"

namespace difflab {

// Schrodinger's ink-drop bookkeeping: a_l particles start in cell l, b_k are
// found in cell k, and g(k|l) is the inherent transition probability.
struct CellSystem {
    Vec a;      // initial occupancy counts
    Vec b;      // target occupancy counts
    Matrix g;   // g[k][l], columns sum to 1
    double n_particles = 0.0;

    std::size_t cells_from() const { return a.size(); }
    std::size_t cells_to() const { return b.size(); }

    void validate() const {
        require(!a.empty() && !b.empty(), "CellSystem: empty occupancy");
        require(g.size() == b.size(), "CellSystem: g row count mismatch");
        for (const Vec& row : g)
            require(row.size() == a.size(), "CellSystem: g column count mismatch");
        double sa = 0.0, sb = 0.0;
        for (double v : a) { require(v >= 0.0, "CellSystem: negative count"); sa += v; }
        for (double v : b) { require(v >= 0.0, "CellSystem: negative count"); sb += v; }
        require(std::abs(sa - n_particles) <= 1e-9 * std::max(1.0, n_particles),
                "CellSystem: sum a_l != N");
        require(std::abs(sb - n_particles) <= 1e-9 * std::max(1.0, n_particles),
                "CellSystem: sum b_k != N");
        for (std::size_t l = 0; l < a.size(); ++l) {
            double col = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) {
                require(g[k][l] >= 0.0, "CellSystem: negative transition probability");
                col += g[k][l];
            }
            require(std::abs(col - 1.0) <= 1e-12, "CellSystem: g column does not sum to 1");
        }
    }
};

// D_KL(h||g) averaged over the source distribution p_i. Convention
// 0 ln(0/x) = 0; support violations (h > 0 where g = 0) report +infinity.
inline double discrete_kl(const Vec& p_i, const Matrix& h, const Matrix& g) {
    require(h.size() == g.size(), "discrete_kl: shape mismatch");
    double kl = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        require(h[k].size() == p_i.size() && g[k].size() == p_i.size(),
                "discrete_kl: shape mismatch");
        for (std::size_t l = 0; l < p_i.size(); ++l) {
            const double w = p_i[l] * h[k][l];
            if (w == 0.0) continue;
            if (g[k][l] <= 0.0) return std::numeric_limits<double>::infinity();
            kl += w * std::log(h[k][l] / g[k][l]);
        }
    }
    return kl;
}

struct TransferResult {
    Matrix h_star;            // optimal empirical transition h*(k|l)
    double kl_star = 0.0;     // D_KL(h*||g) averaged over p_i
    double log_prob_rate = 0.0;  // -N kl_star
    std::size_t iterations = 0;
    Vec residual_history;     // marginal residual per sweep
    bool stirling_warning = false;  // N not >> cell count
};

namespace sinkhorn_detail {

// Alternating scaling of c_kl = u_k g_kl v_l onto marginals
// sum_k c = p_i(l), sum_l c = p_f(k). Returns the coupling.
inline Matrix coupling(const Vec& p_i, const Vec& p_f, const Matrix& g, double tol,
                       std::size_t max_iter, std::size_t* iters_out = nullptr,
                       Vec* residuals_out = nullptr) {
    const std::size_t K = p_f.size(), L = p_i.size();
    Vec u(K, 1.0), v(L, 1.0);
    double residual = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    for (; it < max_iter; ++it) {
        for (std::size_t l = 0; l < L; ++l) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += g[k][l] * u[k];
            v[l] = s > 0.0 ? p_i[l] / s : 0.0;
        }
        for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t l = 0; l < L; ++l) s += g[k][l] * v[l];
            u[k] = s > 0.0 ? p_f[k] / s : 0.0;
        }
        // row marginal is exact after the u-update; measure the column one
        residual = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += u[k] * g[k][l] * v[l];
            residual = std::max(residual, std::abs(s - p_i[l]));
        }
        if (residuals_out) residuals_out->push_back(residual);
        if (residual < tol) { ++it; break; }
    }
    if (iters_out) *iters_out = it;
    if (residual >= tol)
        throw numeric_error("sinkhorn did not converge: marginal residual " +
                            std::to_string(residual) + " after " +
                            std::to_string(it) + " iterations");
    Matrix c(K, Vec(L, 0.0));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < L; ++l) c[k][l] = u[k] * g[k][l] * v[l];
    return c;
}

inline double kl_of_coupling(const Matrix& c, const Vec& p_i, const Matrix& g) {
    double kl = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k)
        for (std::size_t l = 0; l < p_i.size(); ++l) {
            const double w = c[k][l];
            if (w <= 0.0) continue;
            kl += w * std::log(w / (g[k][l] * p_i[l]));
        }
    return kl;
}

}  // namespace sinkhorn_detail

// Minimizes D_KL(h||g) over empirical transitions h subject to both marginal
// constraints, by Sinkhorn alternating scaling of g. The minimum is the large
// deviation rate: Prob ~ exp(-N kl_star).
inline TransferResult optimal_transfer(const CellSystem& sys, double tol = 1e-12,
                                       std::size_t max_iter = 100000) {
    sys.validate();
    const std::size_t K = sys.cells_to(), L = sys.cells_from();
    Vec p_i(L), p_f(K);
    for (std::size_t l = 0; l < L; ++l) p_i[l] = sys.a[l] / sys.n_particles;
    for (std::size_t k = 0; k < K; ++k) p_f[k] = sys.b[k] / sys.n_particles;

    TransferResult out;
    const Matrix c = sinkhorn_detail::coupling(p_i, p_f, sys.g, tol, max_iter,
                                               &out.iterations, &out.residual_history);
    out.h_star.assign(K, Vec(L, 0.0));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < L; ++l)
            out.h_star[k][l] = p_i[l] > 0.0 ? c[k][l] / p_i[l] : 0.0;
    out.kl_star = sinkhorn_detail::kl_of_coupling(c, p_i, sys.g);
    out.log_prob_rate = -sys.n_particles * out.kl_star;
    out.stirling_warning =
        sys.n_particles < 100.0 * static_cast<double>(std::max(K, L));
    return out;
}

// ---------------------------------------------------------------------------
// Pathwise KL between drift pairs sharing a diffusion coefficient.

namespace kl_detail {

inline void check_shared_diffusion(const ProcessSpec& h, const ProcessSpec& g,
                                   const TimeGrid& grid) {
    for (std::size_t s = 0; s <= grid.n_steps(); ++s) {
        const double t = grid.node(s);
        require(std::abs(h.diffusion(t) - g.diffusion(t)) <=
                    1e-12 * std::max(1.0, std::abs(h.diffusion(t))),
                "pathwise KL requires a shared diffusion coefficient");
    }
}

}  // namespace kl_detail

// sum_s dt_s int P(x,t_s) [ |F_H - F_G|^2 / (2D) + V_G ] dx by quadrature.
// `density` evaluates the marginal of process H at grid node s.
inline double pathwise_kl_closed(
    const ProcessSpec& spec_h, const ProcessSpec& spec_g,
    const std::function<double(double, std::size_t)>& density, const Vec& x_grid,
    const TimeGrid& grid) {
    kl_detail::check_shared_diffusion(spec_h, spec_g, grid);
    require(x_grid.size() >= 3, "pathwise_kl_closed: x grid too small");
    const double h = x_grid[1] - x_grid[0];
    double total = 0.0;
    Vec integrand(x_grid.size()), fh(1), fg(1);
    for (std::size_t s = 0; s < grid.n_steps(); ++s) {
        const double t = grid.node(s);
        const double d = spec_h.diffusion(t);
        for (std::size_t i = 0; i < x_grid.size(); ++i) {
            const std::span<const double> xi(&x_grid[i], 1);
            spec_h.drift(xi, t, fh);
            spec_g.drift(xi, t, fg);
            double val = sqr(fh[0] - fg[0]) / (2.0 * d);
            if (spec_g.has_killing()) val += spec_g.killing(xi, t);
            integrand[i] = density(x_grid[i], s) * val;
        }
        total += grid.dt(s) * trapezoid(integrand, h);
    }
    return total;
}

inline double pathwise_kl_closed(const ProcessSpec& spec_h, const ProcessSpec& spec_g,
                                 const MixturePath& path, const Vec& x_grid) {
    return pathwise_kl_closed(
        spec_h, spec_g,
        [&path](double x, std::size_t s) { return path.at(s).pdf1(x); }, x_grid,
        path.grid);
}

inline double pathwise_kl_closed(const ProcessSpec& spec_h, const ProcessSpec& spec_g,
                                 const Field& density_path) {
    return pathwise_kl_closed(
        spec_h, spec_g,
        [&density_path](double x, std::size_t s) {
            const SpatialGrid& g = density_path.grid;
            const double pos = (x - g.lo) / g.h();
            const auto i = static_cast<std::size_t>(pos);
            if (pos < 0.0 || i + 1 >= g.m) return 0.0;
            const double w = pos - static_cast<double>(i);
            return density_path.at(s)[i] * (1.0 - w) + density_path.at(s)[i + 1] * w;
        },
        density_path.grid.nodes(), density_path.time_grid);
}

// Monte Carlo pathwise KL: simulate under H, accumulate the per-step log
// density ratio ln(H-step / G-step) including G's killing factor.
inline McEstimate pathwise_kl_monte_carlo(const ProcessSpec& spec_h,
                                          const ProcessSpec& spec_g,
                                          const InitSampler& init,
                                          const TimeGrid& grid, std::size_t n_paths,
                                          std::uint64_t seed,
                                          unsigned n_threads = 0) {
    require(n_paths >= 1, "pathwise_kl_monte_carlo: need at least one path");
    kl_detail::check_shared_diffusion(spec_h, spec_g, grid);
    const std::size_t d = spec_h.dimension;
    const std::size_t n = grid.n_steps();
    Vec per_path(n_paths, 0.0);
    const CounterRng rng(seed);
    parallel_for(n_paths, n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec x(d), dw(d), fh(d), fg(d), scratch(d);
        for (std::size_t p = lo; p < hi; ++p) {
            init(rng, p, x);
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const double t = grid.node(s);
                const double dt = grid.dt(s);
                const double diff = spec_h.diffusion(t);
                spec_h.drift(x, t, fh);
                spec_g.drift(x, t, fg);
                if (spec_g.has_killing()) acc += spec_g.killing(x, t) * dt;
                const double scale = std::sqrt(dt);
                for (std::size_t k = 0; k < d; ++k) {
                    dw[k] = scale * rng.normal(p, s, k);
                    const double delta = fh[k] - fg[k];
                    acc += delta * dw[k] / std::sqrt(diff) +
                           sqr(delta) * dt / (2.0 * diff);
                }
                euler_maruyama_step(x, s, spec_h, grid, dw, scratch);
            }
            per_path[p] = acc;
        }
    });
    const MeanVar mv = mean_variance(per_path);
    return {mv.mean, std::sqrt(mv.var / static_cast<double>(n_paths)), n_paths};
}

// ---------------------------------------------------------------------------
// The ink-drop large-deviation experiment.

struct InkConfig {
    CellSystem system;
    std::size_t trials = 1000000;
    std::uint64_t seed = 1;
    unsigned n_threads = 0;
    double sinkhorn_tol = 1e-10;
};

struct InkResult {
    double kl_star = 0.0;        // Sinkhorn rate for the target occupancy
    double log_prob_rate = 0.0;  // -N kl_star
    std::size_t trials = 0;
    std::size_t hits = 0;        // outcomes at least as costly as the target
    double frequency = 0.0;
    double empirical_rate = 0.0;  // -ln(frequency)/N
    double relative_gap = 0.0;    // |empirical - kl_star| / kl_star
};

// Pushes N particles through g `trials` times and counts the macro-outcomes
// whose optimal-transfer cost reaches the target's kl_star. With three cells
// the occupancy fluctuates in two dimensions, where the exceedance
// probability of the rate function is exp(-N kl_star) with no polynomial
// prefactor, so -ln(frequency)/N estimates kl_star directly.
inline InkResult run_ink_experiment(const InkConfig& cfg) {
    cfg.system.validate();
    const std::size_t K = cfg.system.cells_to(), L = cfg.system.cells_from();
    const double N = cfg.system.n_particles;

    const TransferResult target = optimal_transfer(cfg.system, cfg.sinkhorn_tol);
    Vec p_i(L);
    for (std::size_t l = 0; l < L; ++l) p_i[l] = cfg.system.a[l] / N;

    std::atomic<std::uint64_t> total_hits{0};
    const double threshold = target.kl_star * (1.0 - 1e-9);
    parallel_for(cfg.trials, cfg.n_threads, [&](std::size_t lo, std::size_t hi) {
        std::uint64_t local_hits = 0;
        Vec b_emp(K), p_f(K);
        for (std::size_t trial = lo; trial < hi; ++trial) {
            Xoshiro256 eng(rng_detail::mix64(cfg.seed) ^ trial * 0x9e3779b97f4a7c15ULL);
            for (double& v : b_emp) v = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                auto remaining = static_cast<long>(std::llround(cfg.system.a[l]));
                double mass = 1.0;
                for (std::size_t k = 0; k + 1 < K && remaining > 0; ++k) {
                    const double p = std::min(1.0, cfg.system.g[k][l] / mass);
                    std::binomial_distribution<long> bin(remaining, p);
                    const long c = bin(eng);
                    b_emp[k] += static_cast<double>(c);
                    remaining -= c;
                    mass -= cfg.system.g[k][l];
                }
                b_emp[K - 1] += static_cast<double>(remaining);
            }
            for (std::size_t k = 0; k < K; ++k) p_f[k] = b_emp[k] / N;
            const Matrix c =
                sinkhorn_detail::coupling(p_i, p_f, cfg.system.g, 1e-11, 600);
            if (sinkhorn_detail::kl_of_coupling(c, p_i, cfg.system.g) >= threshold)
                ++local_hits;
        }
        total_hits.fetch_add(local_hits, std::memory_order_relaxed);
    });

    InkResult out;
    out.kl_star = target.kl_star;
    out.log_prob_rate = target.log_prob_rate;
    out.trials = cfg.trials;
    out.hits = total_hits.load();
    require(out.hits > 0, "ink experiment: no hits; event too rare for the trial budget");
    out.frequency = static_cast<double>(out.hits) / static_cast<double>(cfg.trials);
    out.empirical_rate = -std::log(out.frequency) / N;
    out.relative_gap = std::abs(out.empirical_rate - out.kl_star) / out.kl_star;
    return out;
}

}  // namespace difflab
