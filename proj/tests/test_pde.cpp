#include <doctest.h>

#include <cmath>

#include "difflab/gaussian.hpp"
#include "difflab/mixture.hpp"
#include "difflab/pde.hpp"
#include "difflab/sde.hpp"

using namespace difflab;

namespace {

Vec sample_density(const GaussianDensity& g, const SpatialGrid& grid) {
    Vec p(grid.m);
    for (std::size_t i = 0; i < grid.m; ++i) p[i] = g.pdf1(grid.node(i));
    return p;
}

}  // namespace

TEST_CASE("fokker-planck: pure diffusion against the analytic convolution") {
    const SpatialGrid g(-8.0, 8.0, 801);
    const TimeGrid tg = make_time_grid(0.0, 0.5, 256);
    const ProcessSpec spec = make_process_1d(
        [](double, double) { return 0.0; }, [](double) { return 1.0; });

    const Field sol = solve_fokker_planck(spec, sample_density({0.0, 0.25}, g), g, tg);

    // oracle: N(0,0.25) * N(0,0.5) = N(0,0.75)
    const GaussianDensity exact = convolve(GaussianDensity(0.0, 0.25),
                                           GaussianDensity(0.0, 0.5));
    double worst = 0.0;
    for (std::size_t i = 0; i < g.m; ++i)
        worst = std::max(worst, std::abs(sol.at(256)[i] - exact.pdf1(g.node(i))));
    CHECK(worst < 1e-4);
}

TEST_CASE("fokker-planck: OU equilibrium is a fixed point") {
    const SpatialGrid g(-8.0, 8.0, 3201);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 256);
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -x; }, [](double) { return 2.0; });
    const Vec p0 = sample_density({0.0, 1.0}, g);
    const Field sol = solve_fokker_planck(spec, p0, g, tg);
    double worst = 0.0;
    for (std::size_t s = 0; s <= 256; ++s)
        for (std::size_t i = 0; i < g.m; ++i)
            worst = std::max(worst, std::abs(sol.at(s)[i] - p0[i]));
    CHECK(worst < 1e-6);
}

TEST_CASE("fokker-planck conserves mass to machine precision") {
    const SpatialGrid g(-8.0, 8.0, 401);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 64);
    const ProcessSpec spec = make_process_1d(
        [](double x, double t) { return -x + 0.5 * std::sin(t); },
        [](double) { return 1.5; });
    const Field sol = solve_fokker_planck(spec, sample_density({0.3, 0.5}, g), g, tg);
    const double m0 = sol.mass(0);
    for (std::size_t s = 0; s <= 64; ++s)
        CHECK(std::abs(sol.mass(s) - m0) < 1e-12);
}

TEST_CASE("explicit scheme agrees with crank-nicolson and guards stability") {
    const SpatialGrid g(-6.0, 6.0, 241);  // h = 0.05
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });
    const double h2 = g.h() * g.h();
    const std::size_t n = static_cast<std::size_t>(std::ceil(0.5 / (0.8 * h2)));
    const TimeGrid tg = make_time_grid(0.0, 0.5, n);

    PdeOptions ex;
    ex.scheme = Scheme::explicit_euler;
    const Vec p0 = sample_density({0.5, 0.3}, g);
    const Field a = solve_fokker_planck(spec, p0, g, tg, ex);
    const Field b = solve_fokker_planck(spec, p0, g, tg);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.m; ++i)
        worst = std::max(worst, std::abs(a.at(n)[i] - b.at(n)[i]));
    CHECK(worst < 2e-3);  // schemes differ at O(dt)

    const TimeGrid coarse = make_time_grid(0.0, 0.5, 16);
    CHECK_THROWS_AS(solve_fokker_planck(spec, p0, g, coarse, ex), numeric_error);
}

TEST_CASE("backward kolmogorov basics") {
    const SpatialGrid g(-8.0, 8.0, 801);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 128);

    // unit expectation is conserved exactly
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });
    const Field ones = solve_backward_kolmogorov(spec, Vec(g.m, 1.0), g, tg);
    for (std::size_t s = 0; s <= 128; ++s)
        for (std::size_t i = 0; i < g.m; ++i)
            CHECK(std::abs(ones.at(s)[i] - 1.0) < 1e-12);

    // J1(x) = x under OU: J(xi,tau) = xi exp(-beta (t - tau)/2), beta = 1
    Vec lin(g.m);
    for (std::size_t i = 0; i < g.m; ++i) lin[i] = g.node(i);
    const Field mean_field = solve_backward_kolmogorov(spec, lin, g, tg);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.m; ++i) {
        const double x = g.node(i);
        if (std::abs(x) > 6.0) continue;  // truncation affects the outermost band
        worst = std::max(worst,
                         std::abs(mean_field.at(0)[i] - x * std::exp(-0.5)));
    }
    CHECK(worst < 1e-4);

    // constant killing: J = exp(-c (t - tau))
    const double c = 0.9;
    const ProcessSpec killed = make_process_1d(
        [](double, double) { return 0.0; }, [](double) { return 1.0; },
        [c](double, double) { return c; });
    const Field kf = solve_backward_kolmogorov(killed, Vec(g.m, 1.0), g, tg);
    CHECK(kf.at(0)[400] == doctest::Approx(std::exp(-c)).epsilon(1e-5));
}

TEST_CASE("forward/backward duality pairing is constant") {
    const SpatialGrid g(-8.0, 8.0, 401);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 64);
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -x * (x * x - 1.0) * 0.4; },
        [](double) { return 1.3; });

    const Field p = solve_fokker_planck(spec, sample_density({0.2, 0.4}, g), g, tg);
    Vec terminal(g.m);
    for (std::size_t i = 0; i < g.m; ++i)
        terminal[i] = std::tanh(g.node(i)) + 0.3;
    const Field j = solve_backward_kolmogorov(spec, terminal, g, tg);

    Vec pairings(tg.n_nodes());
    for (std::size_t s = 0; s < tg.n_nodes(); ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.m; ++i)
            acc += g.cell_width(i) * p.at(s)[i] * j.at(s)[i];
        pairings[s] = acc;
    }
    for (std::size_t s = 1; s < pairings.size(); ++s)
        CHECK(std::abs(pairings[s] - pairings[0]) < 1e-8);
}

TEST_CASE("killed forward/backward pair agrees with feynman-kac") {
    // F = 0, D = 1, V = x^2 over [0, 0.5]
    const ProcessSpec spec = make_process_1d(
        [](double, double) { return 0.0; }, [](double) { return 1.0; },
        [](double x, double) { return x * x; });
    const SpatialGrid g(-8.0, 8.0, 801);
    const TimeGrid tg = make_time_grid(0.0, 0.5, 512);
    const Field j = solve_backward_kolmogorov(spec, Vec(g.m, 1.0), g, tg);

    const auto unit = [](std::span<const double>) { return 1.0; };
    const McEstimate mc = feynman_kac_expectation(spec, unit, {0.0}, 0.0, tg, 200000, 31);
    const double grid_value = j.at(0)[400];  // xi = 0
    CHECK(std::abs(mc.value - grid_value) < 3.0 * mc.std_error + 1e-4);
}

TEST_CASE("second-order spatial convergence against the OU solution") {
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });
    const GaussianDensity p0(1.0, 0.36);
    // analytic OU evolution of a gaussian: mean e^{-t/2}, var e^{-t} v0 + (1-e^{-t})
    const double t = 0.5;
    const GaussianDensity exact(std::exp(-0.5 * t),
                                std::exp(-t) * 0.36 + (1.0 - std::exp(-t)));

    auto err_at = [&](std::size_t m) {
        const SpatialGrid g(-8.0, 8.0, m);
        const TimeGrid tg = make_time_grid(0.0, t, 2048);
        const Field sol = solve_fokker_planck(spec, sample_density(p0, g), g, tg);
        double worst = 0.0;
        for (std::size_t i = 0; i < g.m; ++i)
            worst = std::max(worst,
                             std::abs(sol.at(2048)[i] - exact.pdf1(g.node(i))));
        return worst;
    };
    const double e_coarse = err_at(201);
    const double e_fine = err_at(401);
    CHECK(e_coarse / e_fine > 3.0);
    CHECK(e_coarse / e_fine < 5.5);
}

TEST_CASE("reverse time relabel") {
    const SpatialGrid g(-4.0, 4.0, 101);
    const TimeGrid tg = make_time_grid(0.5, 2.0, 3);
    Field f{g, tg, FieldKind::density, {}};
    f.values.assign(4, Vec(g.m, 0.0));
    for (std::size_t s = 0; s < 4; ++s) f.values[s][0] = double(s);

    const Field r = reverse_time_relabel(f);
    CHECK(r.time_grid.t_start() == doctest::Approx(0.5));
    CHECK(r.time_grid.t_end() == doctest::Approx(2.0));
    CHECK(r.values[0][0] == 3.0);  // node t_i now carries the t_f slice
    CHECK(r.values[3][0] == 0.0);

    const Field rr = reverse_time_relabel(r);
    for (std::size_t s = 0; s < 4; ++s) CHECK(rr.values[s][0] == f.values[s][0]);
    for (std::size_t s = 0; s < 4; ++s)
        CHECK(rr.time_grid.node(s) == doctest::Approx(tg.node(s)));
}

TEST_CASE("relabeled chi field satisfies the forward equation of the drift") {
    // chi solves the control equation of b = -F with V = -db/dx backward in t;
    // its relabel must evolve under the plain forward operator of F.
    const double beta = 1.0;
    const auto F = [beta](double x, double) { return -0.5 * beta * x; };
    const ProcessSpec spec_g = make_process_1d(
        [beta](double x, double) { return 0.5 * beta * x; },  // b = -F
        [](double) { return 1.0; },
        [beta](double, double) { return -0.5 * beta; });      // V = -db/dx
    const SpatialGrid g(-8.0, 8.0, 1601);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 400);

    const GaussianMixture mix({0.5, 0.5}, {GaussianDensity(-1.0, 0.3),
                                           GaussianDensity(1.0, 0.3)});
    Vec chi_f(g.m);
    for (std::size_t i = 0; i < g.m; ++i) chi_f[i] = mix.pdf1(g.node(i));

    const Field chi = solve_backward_kolmogorov(spec_g, chi_f, g, tg);
    const Field arrow = reverse_time_relabel(chi);

    const ProcessSpec spec_f = make_process_1d(F, [](double) { return 1.0; });
    double worst = 0.0;
    for (std::size_t s = 0; s < tg.n_steps(); ++s) {
        const Tridiag a0 = assemble_forward_operator(spec_f, g, arrow.time_grid.node(s));
        const Tridiag a1 = assemble_forward_operator(spec_f, g, arrow.time_grid.node(s + 1));
        Vec l0(g.m), l1(g.m);
        a0.apply(arrow.at(s), l0);
        a1.apply(arrow.at(s + 1), l1);
        const double dt = arrow.time_grid.dt(s);
        for (std::size_t i = 1; i + 1 < g.m; ++i) {
            const double res =
                (arrow.at(s + 1)[i] - arrow.at(s)[i]) / dt - 0.5 * (l0[i] + l1[i]);
            worst = std::max(worst, std::abs(res));
        }
    }
    CHECK(worst < 1e-4);
}
