#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "difflab/common.hpp"
#include "difflab/mixture.hpp"
#include "difflab/pde.hpp"
#include "difflab/process.hpp"
#include "difflab/schedule.hpp"
#include "difflab/sde.hpp"

namespace difflab {

using ScalarField2D = std::function<double(double x, double t)>;

// Splits the controlled drift F_H = b + u into the fixed (uncontrolled) part
// b and the control u; V_G is the reference process killing rate.
struct ControlAssignment {
    ScalarField2D u;
    ScalarField2D b;
    ScalarField2D killing;  // empty: V_G = 0

    double v(double x, double t) const { return killing ? killing(x, t) : 0.0; }
    ProcessSpec controlled_process(DiffusionFn diffusion) const {
        return make_process_1d(
            [u = u, b = b](double x, double t) { return b(x, t) + u(x, t); },
            std::move(diffusion));
    }
};

namespace action_detail {

// Crank-Nicolson evolution residual of the density under the controlled
// drift; identically zero for solver output on the same grids.
inline Vec cn_residual(const Field& density, const ProcessSpec& spec_h,
                       std::size_t s) {
    const SpatialGrid& g = density.grid;
    const TimeGrid& tg = density.time_grid;
    const Tridiag a0 = assemble_forward_operator(spec_h, g, tg.node(s));
    const Tridiag a1 = assemble_forward_operator(spec_h, g, tg.node(s + 1));
    Vec l0(g.m), l1(g.m), r(g.m);
    a0.apply(density.at(s), l0);
    a1.apply(density.at(s + 1), l1);
    const double dt = tg.dt(s);
    for (std::size_t i = 0; i < g.m; ++i)
        r[i] = (density.at(s + 1)[i] - density.at(s)[i]) / dt - 0.5 * (l0[i] + l1[i]);
    return r;
}

inline void check_same_grids(const Field& a, const Field& b) {
    require(a.grid.m == b.grid.m && a.grid.lo == b.grid.lo && a.grid.hi == b.grid.hi,
            "action: fields must share the spatial grid");
    require(a.time_grid.n_nodes() == b.time_grid.n_nodes() &&
                a.time_grid.t_start() == b.time_grid.t_start() &&
                a.time_grid.t_end() == b.time_grid.t_end(),
            "action: fields must share the time grid");
}

}  // namespace action_detail

// Integrated-by-parts action: sum_s dt_s < (u^2/2D + V_G) P - lambda R >
// with R the discrete Crank-Nicolson evolution residual of P under b + u.
// The operator is pde_grid's own, so stationarity on solver output is a
// grid-level identity, and a constant lambda shift drops out whenever the
// discrete mass is conserved.
inline double action_value(const Field& lambda_field, const Field& density_path,
                           const ControlAssignment& control,
                           const DiffusionFn& diffusion) {
    action_detail::check_same_grids(lambda_field, density_path);
    const SpatialGrid& g = density_path.grid;
    const TimeGrid& tg = density_path.time_grid;
    const ProcessSpec spec_h = control.controlled_process(diffusion);

    double action = 0.0;
    for (std::size_t s = 0; s < tg.n_steps(); ++s) {
        const double t = tg.node(s);
        const double dt = tg.dt(s);
        const double d = diffusion(t);
        const Vec res = action_detail::cn_residual(density_path, spec_h, s);
        double cost = 0.0, multiplier = 0.0;
        for (std::size_t i = 0; i < g.m; ++i) {
            const double w = g.cell_width(i);
            const double x = g.node(i);
            const double u = control.u(x, t);
            cost += w * density_path.at(s)[i] * (sqr(u) / (2.0 * d) + control.v(x, t));
            multiplier += w * lambda_field.at(s)[i] * res[i];
        }
        action += dt * (cost - multiplier);
    }
    return action;
}

struct StationarityResiduals {
    double fp = 0.0;       // Fokker-Planck evolution of P under b + u
    double hjb = 0.0;      // dynamic-programming equation for lambda
    double control = 0.0;  // u/D + d lambda/dx
    std::optional<double> chi_consistency;  // lambda + ln chi when chi given
};

// Max-norm residuals of the stationarity system on the interior of the grid
// (the two boundary rows encode the reflecting closure, not the PDE).
// `chi` may supply a control field to check lambda = -ln chi against.
inline StationarityResiduals stationarity_residuals(
    const Field& lambda_field, const Field& density_path,
    const ControlAssignment& control, const DiffusionFn& diffusion,
    const Field* chi = nullptr) {
    action_detail::check_same_grids(lambda_field, density_path);
    const SpatialGrid& g = density_path.grid;
    const TimeGrid& tg = density_path.time_grid;
    const ProcessSpec spec_h = control.controlled_process(diffusion);
    // plain generator: drift F_H, no killing inside L
    StationarityResiduals out;

    for (std::size_t s = 0; s < tg.n_steps(); ++s) {
        const double t0 = tg.node(s), t1 = tg.node(s + 1);
        const double dt = tg.dt(s);

        const Vec fp_res = action_detail::cn_residual(density_path, spec_h, s);
        for (std::size_t i = 1; i + 1 < g.m; ++i)
            out.fp = std::max(out.fp, std::abs(fp_res[i]));

        const Tridiag l0 = assemble_backward_operator(spec_h, g, t0);
        const Tridiag l1 = assemble_backward_operator(spec_h, g, t1);
        Vec gl0(g.m), gl1(g.m);
        l0.apply(lambda_field.at(s), gl0);
        l1.apply(lambda_field.at(s + 1), gl1);
        for (std::size_t i = 1; i + 1 < g.m; ++i) {
            const double x = g.node(i);
            const double rhs0 =
                sqr(control.u(x, t0)) / (2.0 * diffusion(t0)) + control.v(x, t0);
            const double rhs1 =
                sqr(control.u(x, t1)) / (2.0 * diffusion(t1)) + control.v(x, t1);
            const double res = (lambda_field.at(s + 1)[i] - lambda_field.at(s)[i]) / dt +
                               0.5 * (gl0[i] + gl1[i]) + 0.5 * (rhs0 + rhs1);
            out.hjb = std::max(out.hjb, std::abs(res));
        }
    }

    for (std::size_t s = 0; s < tg.n_nodes(); ++s) {
        const double t = tg.node(s);
        const Vec grad = gradient(lambda_field.at(s), g);
        for (std::size_t i = 1; i + 1 < g.m; ++i) {
            const double x = g.node(i);
            out.control = std::max(
                out.control, std::abs(control.u(x, t) / diffusion(t) + grad[i]));
        }
        if (chi) {
            double worst = out.chi_consistency.value_or(0.0);
            for (std::size_t i = 0; i < g.m; ++i) {
                const double c = chi->at(s)[i];
                if (c <= 0.0) continue;
                worst = std::max(worst,
                                 std::abs(lambda_field.at(s)[i] + std::log(c)));
            }
            out.chi_consistency = worst;
        }
    }
    return out;
}

// Excess action of a score candidate S against the exact interpolating path:
// (1/2) sum_s D(t_s) dt_s int P(x,t_s) |S(x,t_s) - score(x,t_s)|^2 dx.
// Left-point rule over steps s in [s_lo, s_hi]; quadrature over x_grid.
inline double delta_action(const ScalarField2D& score_candidate,
                           const MixturePath& path, const NoiseSchedule& schedule,
                           const Vec& x_grid, std::size_t s_lo = 0,
                           std::size_t s_hi = static_cast<std::size_t>(-1)) {
    const TimeGrid& tg = path.grid;
    if (s_hi == static_cast<std::size_t>(-1)) s_hi = tg.n_steps() - 1;
    require(s_lo <= s_hi && s_hi < tg.n_steps(), "delta_action: bad step range");
    require(x_grid.size() >= 3, "delta_action: x grid too small");
    const double h = x_grid[1] - x_grid[0];
    double total = 0.0;
    Vec integrand(x_grid.size());
    for (std::size_t s = s_lo; s <= s_hi; ++s) {
        const double t = tg.node(s);
        const GaussianMixture& snap = path.at(s);
        for (std::size_t i = 0; i < x_grid.size(); ++i) {
            const double x = x_grid[i];
            integrand[i] =
                snap.pdf1(x) * sqr(score_candidate(x, t) - snap.score1(x));
        }
        total += 0.5 * schedule.diffusion(t) * tg.dt(s) * trapezoid(integrand, h);
    }
    return total;
}

// Monte Carlo variant: x ~ P(., t_s) instead of quadrature; works in any
// dimension the mixture supports.
inline McEstimate delta_action_monte_carlo(
    const std::function<void(std::span<const double>, double, std::span<double>)>&
        score_candidate,
    const MixturePath& path, const NoiseSchedule& schedule, std::size_t n_samples,
    std::uint64_t seed, std::size_t s_lo = 0,
    std::size_t s_hi = static_cast<std::size_t>(-1)) {
    const TimeGrid& tg = path.grid;
    if (s_hi == static_cast<std::size_t>(-1)) s_hi = tg.n_steps() - 1;
    require(s_lo <= s_hi && s_hi < tg.n_steps(), "delta_action: bad step range");
    require(n_samples >= 2, "delta_action: need at least two samples");
    const std::size_t d = path.at(0).dim();
    const CounterRng rng(seed);
    Vec per_sample(n_samples, 0.0);
    parallel_for(n_samples, 0, [&](std::size_t lo, std::size_t hi) {
        Vec x(d), s_model(d), s_exact(d);
        for (std::size_t j = lo; j < hi; ++j) {
            double acc = 0.0;
            for (std::size_t s = s_lo; s <= s_hi; ++s) {
                const double t = tg.node(s);
                const GaussianMixture& snap = path.at(s);
                snap.sample(rng, j * (s_hi + 1) + s, x);
                score_candidate(x, t, s_model);
                snap.score(x, s_exact);
                double sq = 0.0;
                for (std::size_t k = 0; k < d; ++k) sq += sqr(s_model[k] - s_exact[k]);
                acc += 0.5 * schedule.diffusion(t) * tg.dt(s) * sq;
            }
            per_sample[j] = acc;
        }
    });
    const MeanVar mv = mean_variance(per_sample);
    return {mv.mean, std::sqrt(mv.var / static_cast<double>(n_samples)), n_samples};
}

}  // namespace difflab
