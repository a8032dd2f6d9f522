#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/process.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

// Uniform 1D spatial grid. Node i owns a finite-volume cell of width h
// (h/2 at the two boundaries), which makes the trapezoid rule the natural
// quadrature and lets the discrete operators conserve it exactly.
struct SpatialGrid {
    double lo = -8.0, hi = 8.0;
    std::size_t m = 801;

    SpatialGrid(double lo_, double hi_, std::size_t m_) : lo(lo_), hi(hi_), m(m_) {
        require(lo < hi, "SpatialGrid: lo must be below hi");
        require(m >= 3, "SpatialGrid: need at least 3 nodes");
    }

    double h() const { return (hi - lo) / static_cast<double>(m - 1); }
    double node(std::size_t i) const { return lo + h() * static_cast<double>(i); }
    Vec nodes() const { return linspace(lo, hi, m); }
    double cell_width(std::size_t i) const {
        return (i == 0 || i == m - 1) ? 0.5 * h() : h();
    }
    double quadrature(std::span<const double> f) const {
        require(f.size() == m, "quadrature: size mismatch");
        return trapezoid(f, h());
    }
};

enum class FieldKind { density, control_chi, multiplier_lambda };

// Grid-sampled space-time field: one m-vector per time node.
struct Field {
    SpatialGrid grid;
    TimeGrid time_grid;
    FieldKind kind = FieldKind::density;
    std::vector<Vec> values;  // [time node][space node]

    const Vec& at(std::size_t s) const { return values[s]; }
    Vec& at(std::size_t s) { return values[s]; }
    double mass(std::size_t s) const { return grid.quadrature(values[s]); }
};

struct Tridiag {
    Vec sub, diag, super;  // sub[0] and super[m-1] unused

    explicit Tridiag(std::size_t m) : sub(m, 0.0), diag(m, 0.0), super(m, 0.0) {}
    std::size_t size() const { return diag.size(); }

    void apply(std::span<const double> x, std::span<double> out) const {
        const std::size_t m = size();
        for (std::size_t i = 0; i < m; ++i) {
            double v = diag[i] * x[i];
            if (i > 0) v += sub[i] * x[i - 1];
            if (i + 1 < m) v += super[i] * x[i + 1];
            out[i] = v;
        }
    }
};

// Thomas algorithm; overwrites nothing, returns the solution.
inline Vec solve_tridiag(const Tridiag& A, std::span<const double> rhs) {
    const std::size_t m = A.size();
    Vec c(m), d(m);
    double den = A.diag[0];
    require(std::abs(den) > 1e-300, "solve_tridiag: singular pivot");
    c[0] = A.super[0] / den;
    d[0] = rhs[0] / den;
    for (std::size_t i = 1; i < m; ++i) {
        den = A.diag[i] - A.sub[i] * c[i - 1];
        require(std::abs(den) > 1e-300, "solve_tridiag: singular pivot");
        c[i] = A.super[i] / den;
        d[i] = (rhs[i] - A.sub[i] * d[i - 1]) / den;
    }
    Vec x(m);
    x[m - 1] = d[m - 1];
    for (std::size_t i = m - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    return x;
}

enum class Advection { centered, upwind };
enum class Scheme { crank_nicolson, explicit_euler, rannacher };

// Flux-form forward operator L! at time t with reflecting (zero-flux)
// boundaries: (L!P)_i = (G_{i-1/2} - G_{i+1/2}) / w_i,
// G_{i+1/2} = F_{i+1/2} P_{i+1/2} - (D/2)(P_{i+1}-P_i)/h.
// Centered interface values are second order; the upwind option trades that
// for robustness at large cell Peclet numbers. The trapezoid mass
// sum_i w_i P_i is conserved to machine precision by construction.
inline Tridiag assemble_forward_operator(const ProcessSpec& spec,
                                         const SpatialGrid& g, double t,
                                         Advection adv = Advection::centered) {
    const std::size_t m = g.m;
    const double h = g.h();
    const double d_half = 0.5 * spec.diffusion(t);
    Tridiag A(m);
    Vec fx(1), xv(1);
    for (std::size_t i = 0; i + 1 < m; ++i) {
        xv[0] = g.node(i) + 0.5 * h;
        spec.drift(xv, t, fx);
        const double f = fx[0];
        double alpha = 0.5;
        if (adv == Advection::upwind) alpha = f >= 0.0 ? 1.0 : 0.0;
        const double cl = f * alpha + d_half / h;         // coeff of P_i in G
        const double cr = f * (1.0 - alpha) - d_half / h; // coeff of P_{i+1}
        const double wi = g.cell_width(i), wj = g.cell_width(i + 1);
        A.diag[i] -= cl / wi;
        A.super[i] -= cr / wi;
        A.sub[i + 1] += cl / wj;
        A.diag[i + 1] += cr / wj;
    }
    if (spec.has_killing()) {
        for (std::size_t i = 0; i < m; ++i) {
            xv[0] = g.node(i);
            A.diag[i] -= spec.killing(xv, t);
        }
    }
    return A;
}

// Discrete adjoint of the forward operator with respect to the cell-weighted
// inner product <u,v> = sum_i w_i u_i v_i. This is the backward Kolmogorov
// operator L (plus -V when killing is present); adjointness is exact, so the
// forward/backward duality pairing is conserved to roundoff.
inline Tridiag assemble_backward_operator(const ProcessSpec& spec,
                                          const SpatialGrid& g, double t,
                                          Advection adv = Advection::centered) {
    const Tridiag F = assemble_forward_operator(spec, g, t, adv);
    const std::size_t m = g.m;
    Tridiag B(m);
    for (std::size_t i = 0; i < m; ++i) {
        B.diag[i] = F.diag[i];
        if (i > 0) B.sub[i] = F.super[i - 1] * g.cell_width(i - 1) / g.cell_width(i);
        if (i + 1 < m) B.super[i] = F.sub[i + 1] * g.cell_width(i + 1) / g.cell_width(i);
    }
    return B;
}

struct PdeOptions {
    Scheme scheme = Scheme::crank_nicolson;
    Advection advection = Advection::centered;
    std::size_t rannacher_steps = 2;  // initial steps split into implicit halves
};

struct PdeStats {
    std::size_t negative_clips = 0;  // density values clipped below -1e-12
};

namespace pde_detail {

inline Tridiag scaled(const Tridiag& A, double factor, double diag_shift) {
    Tridiag B(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) {
        B.sub[i] = factor * A.sub[i];
        B.diag[i] = diag_shift + factor * A.diag[i];
        B.super[i] = factor * A.super[i];
    }
    return B;
}

}  // namespace pde_detail

// Density path of dP/dt = L! P from p0. Reflecting boundaries conserve mass
// on the truncated domain.
inline Field solve_fokker_planck(const ProcessSpec& spec, const Vec& p0,
                                 const SpatialGrid& g, const TimeGrid& tg,
                                 const PdeOptions& opt = {},
                                 PdeStats* stats = nullptr) {
    require(p0.size() == g.m, "solve_fokker_planck: p0/grid size mismatch");
    for (double v : p0) require(v >= 0.0, "solve_fokker_planck: p0 must be non-negative");
    if (!spec.has_killing())
        require(std::abs(g.quadrature(p0) - 1.0) <= 1e-6,
                "solve_fokker_planck: p0 must be normalized");

    Field out{g, tg, FieldKind::density, {}};
    out.values.assign(tg.n_nodes(), Vec(g.m, 0.0));
    out.values[0] = p0;
    PdeStats local;

    using pde_detail::scaled;
    for (std::size_t s = 0; s < tg.n_steps(); ++s) {
        const double dt = tg.dt(s);
        const Vec& prev = out.values[s];
        Vec next;
        if (opt.scheme == Scheme::explicit_euler) {
            const double dmax = std::max(spec.diffusion(tg.node(s)), 1e-300);
            require(dt <= g.h() * g.h() / dmax,
                    "solve_fokker_planck: explicit step violates dt <= h^2/D");
            const Tridiag A = assemble_forward_operator(spec, g, tg.node(s), opt.advection);
            next.assign(g.m, 0.0);
            A.apply(prev, next);
            for (std::size_t i = 0; i < g.m; ++i) next[i] = prev[i] + dt * next[i];
        } else if (opt.scheme == Scheme::rannacher && s < opt.rannacher_steps) {
            // two implicit-Euler half steps damp delta-like initial data
            Vec half = prev;
            for (int sub = 0; sub < 2; ++sub) {
                const double th = tg.node(s) + (sub + 1) * 0.5 * dt;
                const Tridiag A = assemble_forward_operator(spec, g, th, opt.advection);
                half = solve_tridiag(scaled(A, -0.5 * dt, 1.0), half);
            }
            next = std::move(half);
        } else {
            const Tridiag A0 = assemble_forward_operator(spec, g, tg.node(s), opt.advection);
            const Tridiag A1 = assemble_forward_operator(spec, g, tg.node(s + 1), opt.advection);
            Vec rhs(g.m);
            scaled(A0, 0.5 * dt, 1.0).apply(prev, rhs);
            next = solve_tridiag(scaled(A1, -0.5 * dt, 1.0), rhs);
        }
        for (std::size_t i = 0; i < g.m; ++i) {
            if (next[i] < 0.0) {
                if (next[i] < -1e-12) ++local.negative_clips;
                next[i] = 0.0;
            }
        }
        out.values[s + 1] = std::move(next);
    }
    if (stats) *stats = local;
    return out;
}

// Terminal value problem for J(xi,tau): dJ/dtau = -(L - V) J backward from
// J(.,t_end) = terminal. Without killing, J(xi,tau) = E[J_1(x(t_end)) |
// x(tau) = xi].
inline Field solve_backward_kolmogorov(const ProcessSpec& spec, const Vec& terminal,
                                       const SpatialGrid& g, const TimeGrid& tg,
                                       const PdeOptions& opt = {}) {
    require(terminal.size() == g.m, "solve_backward_kolmogorov: size mismatch");
    Field out{g, tg, FieldKind::control_chi, {}};
    out.values.assign(tg.n_nodes(), Vec(g.m, 0.0));
    out.values[tg.n_steps()] = terminal;

    using pde_detail::scaled;
    for (std::size_t s = tg.n_steps(); s-- > 0;) {
        const double dt = tg.dt(s);
        const Vec& later = out.values[s + 1];
        Vec earlier;
        if (opt.scheme == Scheme::explicit_euler) {
            const double dmax = std::max(spec.diffusion(tg.node(s + 1)), 1e-300);
            require(dt <= g.h() * g.h() / dmax,
                    "solve_backward_kolmogorov: explicit step violates dt <= h^2/D");
            const Tridiag A = assemble_backward_operator(spec, g, tg.node(s + 1), opt.advection);
            earlier.assign(g.m, 0.0);
            A.apply(later, earlier);
            for (std::size_t i = 0; i < g.m; ++i) earlier[i] = later[i] + dt * earlier[i];
        } else {
            const Tridiag A1 = assemble_backward_operator(spec, g, tg.node(s + 1), opt.advection);
            const Tridiag A0 = assemble_backward_operator(spec, g, tg.node(s), opt.advection);
            Vec rhs(g.m);
            scaled(A1, 0.5 * dt, 1.0).apply(later, rhs);
            earlier = solve_tridiag(scaled(A0, -0.5 * dt, 1.0), rhs);
        }
        out.values[s] = std::move(earlier);
    }
    return out;
}

// Relabels time t <-> t' = t_end + t_start - t without touching values.
// Involutive.
inline Field reverse_time_relabel(const Field& f) {
    const double lo = f.time_grid.t_start(), hi = f.time_grid.t_end();
    Vec nodes(f.time_grid.n_nodes());
    for (std::size_t s = 0; s < nodes.size(); ++s)
        nodes[s] = hi + lo - f.time_grid.node(f.time_grid.n_nodes() - 1 - s);
    Field out{f.grid, TimeGrid(std::move(nodes)), f.kind, {}};
    out.values.assign(f.values.rbegin(), f.values.rend());
    return out;
}

// Second-order first derivative on the grid (central inside, one-sided at
// the boundaries).
inline Vec gradient(std::span<const double> v, const SpatialGrid& g) {
    require(v.size() == g.m, "gradient: size mismatch");
    const double h = g.h();
    Vec d(g.m);
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    for (std::size_t i = 1; i + 1 < g.m; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    d[g.m - 1] = (3.0 * v[g.m - 1] - 4.0 * v[g.m - 2] + v[g.m - 3]) / (2.0 * h);
    return d;
}

}  // namespace difflab
