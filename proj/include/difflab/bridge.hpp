#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/divergence.hpp"
#include "difflab/gaussian.hpp"
#include "difflab/mixture.hpp"
#include "difflab/pde.hpp"
#include "difflab/process.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// Kernel matrices are indexed [destination][source]; integrals against the
// source attach the source cell weight, so column j of K holds the density
// G(x_i, t_f | x_j, t_i) over destinations x_i.

// Evaluates a closed-form kernel entry G(x_dest, t_f | x_src, t_i).
using KernelEntryFn = std::function<double(double x_dest, double x_src)>;

inline Matrix discretize_kernel_analytic(const KernelEntryFn& entry,
                                         const SpatialGrid& g) {
    Matrix k(g.m, Vec(g.m));
    for (std::size_t i = 0; i < g.m; ++i)
        for (std::size_t j = 0; j < g.m; ++j) k[i][j] = entry(g.node(i), g.node(j));
    return k;
}

// Kernel columns via one killed Fokker-Planck solve per source node. The
// final kernel must be resolved (at least 8 nodes per standard deviation of
// the accumulated diffusion, checked up front); each column starts from the
// analytic short-time kernel at sigma_0 = 4h with first-order drift and
// killing corrections, which the grid represents exactly, and Crank-Nicolson
// carries it the rest of the way. Columns must keep their mass to 1e-4
// (clipping or leakage beyond that means the kernel is under-resolved).
inline Matrix discretize_kernel_pde(const ProcessSpec& spec_g, const SpatialGrid& g,
                                    const TimeGrid& tg, unsigned n_threads = 0) {
    const double h = g.h();
    const double span = tg.t_end() - tg.t_start();
    // accumulated diffusion variance over the interval
    double var_total = 0.0;
    for (std::size_t s = 0; s < tg.n_steps(); ++s)
        var_total += 0.5 *
                     (spec_g.diffusion(tg.node(s)) + spec_g.diffusion(tg.node(s + 1))) *
                     tg.dt(s);
    require(std::sqrt(var_total) >= 8.0 * h,
            "discretize_kernel: unresolved kernel, needs >= 8 nodes per std");

    // consume t0 of the interval analytically, up to sigma_0 = 8h but at
    // most a quarter of the total variance
    const double sigma0_sq = std::min(64.0 * h * h, 0.25 * var_total);
    double t0 = tg.t_start(), acc = 0.0;
    while (acc < sigma0_sq && t0 < tg.t_end()) {
        const double step = std::min(1e-3 * span, tg.t_end() - t0);
        acc += spec_g.diffusion(t0) * step;
        t0 += step;
    }
    const TimeGrid rest = make_time_grid(t0, tg.t_end(), tg.n_steps());

    Matrix k(g.m, Vec(g.m, 0.0));
    parallel_for(g.m, n_threads, [&](std::size_t lo, std::size_t hi) {
        Vec xj(1), fj(1);
        for (std::size_t j = lo; j < hi; ++j) {
            xj[0] = g.node(j);
            spec_g.drift(xj, tg.t_start(), fj);
            const double warm_dt = t0 - tg.t_start();
            const GaussianDensity seed(g.node(j) + fj[0] * warm_dt, acc);
            const double survival =
                spec_g.has_killing()
                    ? std::exp(-spec_g.killing(xj, tg.t_start()) * warm_dt)
                    : 1.0;
            Vec p0(g.m);
            // reflecting boundaries: fold the seed by the method of images
            for (std::size_t i = 0; i < g.m; ++i) {
                const double x = g.node(i);
                p0[i] = survival * (seed.pdf1(x) + seed.pdf1(2.0 * g.lo - x) +
                                    seed.pdf1(2.0 * g.hi - x));
            }
            PdeStats stats;
            const Field sol = solve_fokker_planck(spec_g, p0, g, rest, {}, &stats);
            const Vec& last = sol.at(rest.n_steps());
            if (!spec_g.has_killing()) {
                const double mass = g.quadrature(last);
                if (std::abs(mass - 1.0) > 1e-4)
                    throw numeric_error(
                        "discretize_kernel: column mass deficit " +
                        std::to_string(std::abs(mass - 1.0)));
            }
            for (std::size_t i = 0; i < g.m; ++i) k[i][j] = last[i];
        }
    });
    return k;
}

struct BridgeSolution {
    SpatialGrid grid;
    Vec log_chi_i, log_chi_f;  // fixed to max 0 (one overall scale is free)
    Vec chi_i, chi_f;
    Matrix h_star;             // optimal kernel H*(x_dest | x_src)
    std::size_t iterations = 0;
    Vec residual_history;      // per-sweep marginal residual
};

// Solves the Schrodinger system for grid marginals p_i, p_f against a
// strictly positive kernel by iterative proportional fitting in log space:
// chi_f <- p_f / (G [p_i / chi_i]),  chi_i <- G^T chi_f, until both the
// pushforward of p_i under H* = G chi_f / chi_i and the row normalization
// of H* hold within tol. Kernel entries span hundreds of orders of
// magnitude across the grid, hence the log-sum-exp arithmetic; its roundoff
// floor sits a little below 1e-10, so tolerances tighter than 1e-9 are not
// reachable.
inline BridgeSolution solve_schrodinger_system(const Vec& p_i, const Vec& p_f,
                                               const Matrix& kernel,
                                               const SpatialGrid& g,
                                               double tol = 1e-9,
                                               std::size_t max_iter = 5000) {
    const std::size_t m = g.m;
    require(p_i.size() == m && p_f.size() == m, "bridge: marginal size mismatch");
    require(kernel.size() == m, "bridge: kernel size mismatch");
    require(std::abs(g.quadrature(p_i) - 1.0) <= 1e-6 &&
                std::abs(g.quadrature(p_f) - 1.0) <= 1e-6,
            "bridge: marginals must be normalized");

    Matrix log_k(m, Vec(m));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            require(kernel[i][j] > 0.0, "bridge: kernel must be strictly positive");
            log_k[i][j] = std::log(kernel[i][j]);
        }
    Vec log_w(m), log_pi(m), log_pf(m);
    for (std::size_t i = 0; i < m; ++i) {
        log_w[i] = std::log(g.cell_width(i));
        log_pi[i] = p_i[i] > 0.0 ? std::log(p_i[i]) : -1e300;
        log_pf[i] = p_f[i] > 0.0 ? std::log(p_f[i]) : -1e300;
    }

    BridgeSolution out{g, Vec(m, 0.0), Vec(m, 0.0), {}, {}, {}, 0, {}};
    Vec& lci = out.log_chi_i;
    Vec& lcf = out.log_chi_f;
    Vec lphi(m), terms(m);
    double residual = std::numeric_limits<double>::infinity();

    for (std::size_t it = 0; it < max_iter; ++it) {
        for (std::size_t j = 0; j < m; ++j) lphi[j] = log_pi[j] - lci[j] + log_w[j];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) terms[j] = log_k[i][j] + lphi[j];
            lcf[i] = log_pf[i] - log_sum_exp(terms);
        }
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < m; ++i)
                terms[i] = log_k[i][j] + log_w[i] + lcf[i];
            lci[j] = log_sum_exp(terms);
        }
        // pushforward residual: the row normalization is exact right after
        // the chi_i update, so convergence is measured on the marginal
        residual = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j)
                terms[j] = log_k[i][j] + lcf[i] - lci[j] + log_pi[j] + log_w[j];
            residual = std::max(residual,
                                std::abs(std::exp(log_sum_exp(terms)) - p_f[i]));
        }
        out.residual_history.push_back(residual);
        ++out.iterations;
        if (residual < tol) break;
    }
    if (residual >= tol)
        throw numeric_error("schrodinger system did not converge: residual " +
                            std::to_string(residual) + " after " +
                            std::to_string(out.iterations) + " iterations");

    // fix the free scale: move it so that max log chi_f = 0; chi_i carries
    // the same factor, leaving H* = G chi_f / chi_i untouched
    double shift = -std::numeric_limits<double>::infinity();
    for (double v : lcf) shift = std::max(shift, v);
    for (double& v : lcf) v -= shift;
    for (double& v : lci) v -= shift;

    out.chi_i.resize(m);
    out.chi_f.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        out.chi_i[i] = std::exp(lci[i]);
        out.chi_f[i] = std::exp(lcf[i]);
    }
    out.h_star.assign(m, Vec(m));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out.h_star[i][j] = std::exp(log_k[i][j] + lcf[i] - lci[j]);
    return out;
}

// Largest deviation of the per-source normalization int H*(x_f|x_i) dx_f = 1.
inline double h_star_normalization_error(const BridgeSolution& sol) {
    double worst = 0.0;
    for (std::size_t j = 0; j < sol.grid.m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < sol.grid.m; ++i)
            s += sol.grid.cell_width(i) * sol.h_star[i][j];
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

// Density path of the bridge: chi(x,t) solved backward from chi_f under the
// reference process, then p_i evolved forward under b + D d/dx ln chi.
inline Field bridge_density_path(const BridgeSolution& sol, const ProcessSpec& spec_g,
                                 const Vec& p_i, const TimeGrid& tg) {
    const SpatialGrid& g = sol.grid;
    const Field chi = solve_backward_kolmogorov(spec_g, sol.chi_f, g, tg);
    // optimal control u = D d/dx ln chi, tabulated per node
    std::vector<Vec> log_chi(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s < tg.n_nodes(); ++s)
        for (std::size_t i = 0; i < g.m; ++i) {
            require(chi.at(s)[i] > 0.0, "bridge_density_path: chi lost positivity");
            log_chi[s][i] = std::log(chi.at(s)[i]);
        }
    std::vector<Vec> ctrl(tg.n_nodes());
    for (std::size_t s = 0; s < tg.n_nodes(); ++s) ctrl[s] = gradient(log_chi[s], g);

    ProcessSpec controlled;
    controlled.dimension = 1;
    controlled.diffusion = spec_g.diffusion;
    controlled.drift = [&spec_g, ctrl = std::move(ctrl), g, tg](
                           std::span<const double> x, double t, std::span<double> out) {
        Vec b(1);
        spec_g.drift(x, t, b);
        // nearest time node and linear interpolation in x
        std::size_t s = 0;
        while (s + 1 < tg.n_nodes() &&
               std::abs(tg.node(s + 1) - t) < std::abs(tg.node(s) - t))
            ++s;
        const double pos = (x[0] - g.lo) / g.h();
        const auto i = static_cast<std::size_t>(
            std::clamp(pos, 0.0, static_cast<double>(g.m - 2)));
        const double w = std::clamp(pos - static_cast<double>(i), 0.0, 1.0);
        const double u = ctrl[s][i] * (1.0 - w) + ctrl[s][i + 1] * w;
        out[0] = b[0] + spec_g.diffusion(t) * u;
    };
    return solve_fokker_planck(controlled, p_i, sol.grid, tg);
}

// ---------------------------------------------------------------------------
// DPM posterior and reverse kernels.

// Q(xi, tau' | x, t'; x0, t_i) over xi_grid: the Bayes posterior of the
// particle position at the intermediate forward time tau'.
inline Vec dpm_posterior_q(const Kernel1D& kernel, double t_i, double tau_p,
                           double t_p, double x0, double x, const Vec& xi_grid) {
    require(t_i < tau_p && tau_p < t_p, "dpm_posterior_q: need t_i < tau' < t'");
    const GaussianDensity full = kernel(x0, t_i, t_p);
    const double log_den = full.log_pdf1(x);
    require(log_den > -700.0,
            "dpm_posterior_q: denominator underflow, x outside kernel support");
    const GaussianDensity early = kernel(x0, t_i, tau_p);
    Vec q(xi_grid.size());
    for (std::size_t i = 0; i < xi_grid.size(); ++i) {
        const GaussianDensity late = kernel(xi_grid[i], tau_p, t_p);
        q[i] = std::exp(late.log_pdf1(x) + early.log_pdf1(xi_grid[i]) - log_den);
    }
    return q;
}

// Closed-form check value: the gaussian posterior of two gaussian factors.
inline GaussianDensity dpm_posterior_q_gaussian(const Kernel1D& kernel, double t_i,
                                                double tau_p, double t_p, double x0,
                                                double x) {
    // late leg N(x; c xi, v2) and early leg N(xi; mu1, v1)
    const GaussianDensity early = kernel(x0, t_i, tau_p);
    const GaussianDensity unit = kernel(1.0, tau_p, t_p);
    const GaussianDensity zero = kernel(0.0, tau_p, t_p);
    const double c = unit.mean1() - zero.mean1();
    const double v2 = unit.var1();
    const double prec = c * c / v2 + 1.0 / early.var1();
    const double mean = (c * x / v2 + early.mean1() / early.var1()) / prec;
    return {mean, 1.0 / prec};
}

struct DpmReverseKernel {
    Vec xi_grid, x_grid;
    Matrix r;             // R(xi, tau | x, t), [xi][x], rows of each source sum to 1
    Vec marginal_tau;     // quadrature marginal at tau'
    Vec marginal_t;       // quadrature marginal at t'
    double normalization_error = 0.0;  // before the exact renormalization
};

// R(xi,tau|x,t) = int dx0 Q(xi|x;x0) joint(x,t;x0) / P(x,t) on grids. The x0
// integral is evaluated with the full-leg kernel cancelled against the joint
// (they share the same factor entry by entry), which keeps far-tail entries
// from dividing 0 by 0; the quadrature content is unchanged.
inline DpmReverseKernel dpm_reverse_kernel_r(
    const Kernel1D& kernel, const std::function<double(double)>& data_density,
    double t_i, double tau_p, double t_p, const Vec& xi_grid, const Vec& x_grid,
    const Vec& x0_grid) {
    require(t_i < tau_p && tau_p < t_p, "dpm_reverse_kernel_r: need t_i < tau' < t'");
    const double w0 = x0_grid[1] - x0_grid[0];

    // marginals at tau' and t' by quadrature over the data density
    auto marginal = [&](const Vec& grid_pts, double t) {
        Vec out(grid_pts.size());
        Vec terms(x0_grid.size());
        for (std::size_t i = 0; i < grid_pts.size(); ++i) {
            for (std::size_t a = 0; a < x0_grid.size(); ++a) {
                const double pf = data_density(x0_grid[a]);
                terms[a] = pf > 0.0
                               ? kernel(x0_grid[a], t_i, t).log_pdf1(grid_pts[i]) +
                                     std::log(pf)
                               : -1e300;
            }
            out[i] = std::exp(log_sum_exp(terms)) * w0;
        }
        return out;
    };
    DpmReverseKernel out;
    out.xi_grid = xi_grid;
    out.x_grid = x_grid;
    out.marginal_tau = marginal(xi_grid, tau_p);
    out.marginal_t = marginal(x_grid, t_p);

    out.r.assign(xi_grid.size(), Vec(x_grid.size(), 0.0));
    for (std::size_t j = 0; j < x_grid.size(); ++j)
        require(out.marginal_t[j] > 1e-290,
                "dpm_reverse_kernel_r: marginal underflow at probe x");

    for (std::size_t i = 0; i < xi_grid.size(); ++i) {
        const double p_tau = out.marginal_tau[i];
        const GaussianDensity late = kernel(xi_grid[i], tau_p, t_p);
        for (std::size_t j = 0; j < x_grid.size(); ++j)
            out.r[i][j] = late.pdf1(x_grid[j]) * p_tau / out.marginal_t[j];
    }

    // per-source normalization check, then exact renormalization
    const double wxi = xi_grid[1] - xi_grid[0];
    for (std::size_t j = 0; j < x_grid.size(); ++j) {
        Vec col(xi_grid.size());
        for (std::size_t i = 0; i < xi_grid.size(); ++i) col[i] = out.r[i][j];
        const double s = trapezoid(col, wxi);
        out.normalization_error = std::max(out.normalization_error, std::abs(s - 1.0));
        for (std::size_t i = 0; i < xi_grid.size(); ++i) out.r[i][j] /= s;
    }
    return out;
}

}  // namespace difflab
