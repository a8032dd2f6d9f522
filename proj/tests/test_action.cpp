#include <doctest.h>

#include <cmath>
#include <random>

#include "difflab/action.hpp"

using namespace difflab;

namespace {

// exact mixture path re-labeled to the reverse (bridge) time axis:
// slice s of the bridge corresponds to forward node n - s
struct ReverseFields {
    MixturePath forward_path;
    TimeGrid grid;
    Field density;
    Field lambda;

    ReverseFields(const GaussianMixture& data, double t_end, std::size_t n,
                  const SpatialGrid& g)
        : forward_path(evolve_mixture(
              data,
              ou_schedule([](double) { return 1.0; }, [](double) { return 1.0; },
                          make_time_grid(0.0, t_end, n)),
              make_time_grid(0.0, t_end, n), ForwardKind::ou)),
          grid(make_time_grid(0.0, t_end, n)),
          density{g, grid, FieldKind::density, {}},
          lambda{g, grid, FieldKind::multiplier_lambda, {}},
          n_(n) {
        density.values.assign(n + 1, Vec(g.m));
        lambda.values.assign(n + 1, Vec(g.m));
        for (std::size_t s = 0; s <= n; ++s) {
            const GaussianMixture& snap = forward_path.at(n - s);
            for (std::size_t i = 0; i < g.m; ++i) {
                const double lp = snap.log_pdf1(g.node(i));
                density.values[s][i] = std::exp(lp);
                lambda.values[s][i] = -lp;
            }
        }
    }

    // score of the forward snapshot matching bridge time t
    double score(double x, double t) const {
        const std::size_t s = grid.index_of(t);
        return forward_path.at(n_ - s).score1(x);
    }

    std::size_t n_;
};

}  // namespace

TEST_CASE("action vanishes on solver output with zero control") {
    const SpatialGrid g(-8.0, 8.0, 401);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 64);
    const ProcessSpec spec = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });
    Vec p0(g.m);
    const GaussianDensity init(0.3, 0.5);
    for (std::size_t i = 0; i < g.m; ++i) p0[i] = init.pdf1(g.node(i));
    const Field p = solve_fokker_planck(spec, p0, g, tg);

    // arbitrary smooth multiplier
    Field lam{g, tg, FieldKind::multiplier_lambda, {}};
    lam.values.assign(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s <= 64; ++s)
        for (std::size_t i = 0; i < g.m; ++i)
            lam.values[s][i] = std::sin(g.node(i)) + 0.2 * tg.node(s);

    const ControlAssignment ctrl{
        [](double, double) { return 0.0; },
        [](double x, double) { return -0.5 * x; },
        {}};
    const double a = action_value(lam, p, ctrl, [](double) { return 1.0; });
    CHECK(std::abs(a) < 1e-12);
}

TEST_CASE("constant lambda shift drops out when mass is conserved") {
    const SpatialGrid g(-8.0, 8.0, 401);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 32);
    const GaussianMixture mix({0.6, 0.4}, {GaussianDensity(-0.8, 0.4),
                                           GaussianDensity(1.0, 0.3)});
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; }, tg);
    const MixturePath path = evolve_mixture(mix, sch, tg, ForwardKind::ou);

    Field p{g, tg, FieldKind::density, {}};
    Field lam{g, tg, FieldKind::multiplier_lambda, {}};
    p.values.assign(tg.n_nodes(), Vec(g.m));
    lam.values.assign(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s <= 32; ++s)
        for (std::size_t i = 0; i < g.m; ++i) {
            p.values[s][i] = path.at(s).pdf1(g.node(i));
            lam.values[s][i] = std::cos(0.5 * g.node(i));
        }

    const ControlAssignment ctrl{
        [](double x, double t) { return 0.3 * std::sin(x + t); },
        [](double x, double) { return -0.5 * x; },
        [](double x, double) { return 0.1 + 0.02 * x * x; }};
    const DiffusionFn d = [](double) { return 1.0; };

    const double a0 = action_value(lam, p, ctrl, d);
    for (auto& slice : lam.values)
        for (double& v : slice) v += 123.456;
    const double a1 = action_value(lam, p, ctrl, d);
    CHECK(std::abs(a1 - a0) < 1e-10);
}

TEST_CASE("action matches the boundary-form evaluation of generic fields") {
    // smooth closed-form fields; the oracle evaluates the pre-integration-by-
    // parts form with analytic derivatives of lambda. The boundary term that
    // integration by parts generates is +int(P_i l_i - P_f l_f); the
    // opposite-signed variant differs from the integrated form by exactly
    // twice the boundary term, which this test pins down rather than hides.
    const SpatialGrid g(-8.0, 8.0, 3001);
    const std::size_t n = 4096;
    const TimeGrid tg = make_time_grid(0.0, 0.5, n);
    const double D = 1.0;

    auto p_fn = [](double x, double t) {
        const double v = 2.25 + 0.5 * t;
        return std::exp(-0.5 * (x - 0.2) * (x - 0.2) / v) /
               std::sqrt(2.0 * std::numbers::pi * v);
    };
    auto lam_fn = [](double x, double t) {
        return 0.4 * std::tanh(0.5 * x) + 0.1 * t + 0.05 * std::sin(x);
    };
    const ControlAssignment ctrl{
        [](double x, double t) { return 0.2 * std::cos(0.7 * x) * std::exp(-t); },
        [](double x, double) { return -0.5 * x; },
        [](double x, double) { return 0.05 + 0.01 * x * x; }};

    Field p{g, tg, FieldKind::density, {}}, lam{g, tg, FieldKind::multiplier_lambda, {}};
    p.values.assign(tg.n_nodes(), Vec(g.m));
    lam.values.assign(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s <= n; ++s)
        for (std::size_t i = 0; i < g.m; ++i) {
            p.values[s][i] = p_fn(g.node(i), tg.node(s));
            lam.values[s][i] = lam_fn(g.node(i), tg.node(s));
        }

    const double mine = action_value(lam, p, ctrl, [D](double) { return D; });

    // oracle: boundary form with analytic (d_t + L_H) lambda
    auto dlam_dt = [](double, double) { return 0.1; };
    auto dlam_dx = [](double x, double) {
        const double c = std::cosh(0.5 * x);
        return 0.4 * 0.5 / (c * c) + 0.05 * std::cos(x);
    };
    auto d2lam_dx2 = [](double x, double) {
        const double c = std::cosh(0.5 * x), th = std::tanh(0.5 * x);
        return -0.4 * 0.5 * th / (c * c) - 0.05 * std::sin(x);
    };
    double volume = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double t = tg.node(s);
        Vec integrand(g.m);
        for (std::size_t i = 0; i < g.m; ++i) {
            const double x = g.node(i);
            const double fh = ctrl.b(x, t) + ctrl.u(x, t);
            const double op_lam = dlam_dt(x, t) + fh * dlam_dx(x, t) +
                                  0.5 * D * d2lam_dx2(x, t);
            integrand[i] =
                p_fn(x, t) * (sqr(ctrl.u(x, t)) / (2.0 * D) +
                              ctrl.killing(x, t) + op_lam);
        }
        volume += tg.dt(s) * trapezoid(integrand, g.h());
    }
    Vec boundary(g.m);
    for (std::size_t i = 0; i < g.m; ++i) {
        const double x = g.node(i);
        boundary[i] = p_fn(x, 0.0) * lam_fn(x, 0.0) - p_fn(x, 0.5) * lam_fn(x, 0.5);
    }
    const double pil_minus_pfl = trapezoid(boundary, g.h());
    const double oracle = pil_minus_pfl + volume;
    CHECK(std::abs(mine - oracle) < 1e-6);

    // the opposite boundary sign misses by twice the boundary term
    const double flipped = -pil_minus_pfl + volume;
    CHECK(std::abs((mine - flipped) - 2.0 * pil_minus_pfl) < 1e-6);
}

TEST_CASE("stationarity residuals vanish at the exact reverse-diffusion solution") {
    const GaussianMixture data({0.5, 0.5}, {GaussianDensity(-1.0, 0.5),
                                            GaussianDensity(1.0, 0.5)});
    const SpatialGrid g(-8.0, 8.0, 2001);
    const ReverseFields rf(data, 1.5, 400, g);

    // bridge drift splitting: b = -F = +x/2, u = D * score; V_G = -db/dx
    const ControlAssignment ctrl{
        [&rf](double x, double t) { return rf.score(x, t); },
        [](double x, double) { return 0.5 * x; },
        [](double, double) { return -0.5; }};

    const StationarityResiduals r = stationarity_residuals(
        rf.lambda, rf.density, ctrl, [](double) { return 1.0; }, &rf.density);
    CHECK(r.fp < 1e-3);
    CHECK(r.hjb < 1e-3);
    CHECK(r.control < 1e-3);
    REQUIRE(r.chi_consistency.has_value());
    CHECK(*r.chi_consistency < 1e-12);  // lambda built as -ln chi
}

TEST_CASE("control residual detects u != -D dlambda/dx") {
    const GaussianMixture data({1.0}, {GaussianDensity(0.0, 0.5)});
    const SpatialGrid g(-8.0, 8.0, 401);
    const ReverseFields rf(data, 1.0, 40, g);
    const ControlAssignment ctrl{
        [&rf](double x, double t) { return rf.score(x, t) + 0.5; },  // offset
        [](double x, double) { return 0.5 * x; },
        {}};
    const StationarityResiduals r = stationarity_residuals(
        rf.lambda, rf.density, ctrl, [](double) { return 1.0; });
    CHECK(r.control > 0.4);
}

TEST_CASE("equilibrium with zero control is discretely stationary") {
    const SpatialGrid g(-8.0, 8.0, 801);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 16);
    const double D = 2.0;
    const auto drift = [](double x, double) { return -x; };

    // discrete Gibbs state: zero flux through every interface
    Vec p(g.m, 1.0);
    const double kappa = 0.5 * D / g.h();
    for (std::size_t i = 0; i + 1 < g.m; ++i) {
        const double f = drift(g.node(i) + 0.5 * g.h(), 0.0);
        p[i + 1] = p[i] * (0.5 * f + kappa) / (kappa - 0.5 * f);
    }
    double mass = 0.0;
    for (std::size_t i = 0; i < g.m; ++i) mass += g.cell_width(i) * p[i];
    for (double& v : p) v /= mass;

    Field density{g, tg, FieldKind::density, {}};
    density.values.assign(tg.n_nodes(), p);
    Field lam{g, tg, FieldKind::multiplier_lambda, {}};
    lam.values.assign(tg.n_nodes(), Vec(g.m, 0.7));

    const ControlAssignment ctrl{[](double, double) { return 0.0; }, drift, {}};
    const StationarityResiduals r =
        stationarity_residuals(lam, density, ctrl, [D](double) { return D; });
    CHECK(r.fp < 1e-10);
    CHECK(r.hjb < 1e-10);
    CHECK(r.control < 1e-10);
}

TEST_CASE("delta action of the exact score and of offsets") {
    const GaussianMixture data({0.5, 0.5}, {GaussianDensity(-1.0, 0.04),
                                            GaussianDensity(1.0, 0.04)});
    const TimeGrid tg = make_time_grid(0.0, 2.0, 64);
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; }, tg);
    const MixturePath path = evolve_mixture(data, sch, tg, ForwardKind::ou);
    const Vec x_grid = linspace(-10.0, 10.0, 2001);

    const ScalarField2D exact = [&path, &tg](double x, double t) {
        return path.at(tg.index_of(t)).score1(x);
    };
    CHECK(delta_action(exact, path, sch, x_grid) < 1e-10);

    // constant offset integrates out the density: (eps^2/2) sum D dt
    const double eps = 0.3;
    const ScalarField2D offset = [&](double x, double t) {
        return exact(x, t) + eps;
    };
    double expected = 0.0;
    for (std::size_t s = 0; s < tg.n_steps(); ++s)
        expected += 0.5 * eps * eps * sch.diffusion(tg.node(s)) * tg.dt(s);
    CHECK(delta_action(offset, path, sch, x_grid) ==
          doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("delta action is a pure quadratic form in the perturbation") {
    const GaussianMixture data({0.5, 0.5}, {GaussianDensity(-1.0, 0.09),
                                            GaussianDensity(1.0, 0.09)});
    const TimeGrid tg = make_time_grid(0.0, 1.0, 32);
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; }, tg);
    const MixturePath path = evolve_mixture(data, sch, tg, ForwardKind::ou);
    const Vec x_grid = linspace(-9.0, 9.0, 1501);

    const auto perturbed = [&](double eps) {
        return delta_action(
            [&path, &tg, eps](double x, double t) {
                return path.at(tg.index_of(t)).score1(x) +
                       eps * std::sin(1.3 * x);
            },
            path, sch, x_grid);
    };
    const double r2 = perturbed(1e-2) / 1e-4;
    const double r3 = perturbed(1e-3) / 1e-6;
    CHECK(std::abs(r2 / r3 - 1.0) < 0.01);
    CHECK(perturbed(0.05) > 0.0);

    std::mt19937_64 eng(3);
    std::uniform_real_distribution<double> amp(0.01, 0.2);
    for (int rep = 0; rep < 5; ++rep) {
        const double a = amp(eng), w = amp(eng) * 10.0;
        const double da = delta_action(
            [&path, &tg, a, w](double x, double t) {
                return path.at(tg.index_of(t)).score1(x) + a * std::cos(w * x);
            },
            path, sch, x_grid);
        CHECK(da > 0.0);
    }
}

TEST_CASE("monte carlo delta action agrees with quadrature") {
    const GaussianMixture data({0.5, 0.5}, {GaussianDensity(-1.0, 0.09),
                                            GaussianDensity(1.0, 0.09)});
    const TimeGrid tg = make_time_grid(0.0, 1.0, 16);
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; }, tg);
    const MixturePath path = evolve_mixture(data, sch, tg, ForwardKind::ou);

    const double quad = delta_action(
        [&path, &tg](double x, double t) {
            return path.at(tg.index_of(t)).score1(x) + 0.2 * std::sin(x);
        },
        path, sch, linspace(-9.0, 9.0, 2001));
    const McEstimate mc = delta_action_monte_carlo(
        [&path, &tg](std::span<const double> x, double t, std::span<double> out) {
            out[0] = path.at(tg.index_of(t)).score1(x[0]) + 0.2 * std::sin(x[0]);
        },
        path, sch, 40000, 19);
    CHECK(std::abs(mc.value - quad) <= 3.0 * mc.std_error);
}

TEST_CASE("monte carlo delta action works in two dimensions") {
    const GaussianMixture data(
        {0.5, 0.5}, {GaussianDensity(Vec{-1.0, 0.0}, Vec{0.09, 0.09}),
                     GaussianDensity(Vec{1.0, 0.0}, Vec{0.09, 0.09})});
    const TimeGrid tg = make_time_grid(0.0, 1.0, 12);
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; }, tg);
    const MixturePath path = evolve_mixture(data, sch, tg, ForwardKind::ou);

    // constant offset along one axis: (eps^2 / 2) sum D dt exactly
    const double eps = 0.25;
    const McEstimate mc = delta_action_monte_carlo(
        [&](std::span<const double> x, double t, std::span<double> out) {
            path.at(tg.index_of(t)).score(x, out);
            out[1] += eps;
        },
        path, sch, 30000, 23);
    double expected = 0.0;
    for (std::size_t s = 0; s < tg.n_steps(); ++s)
        expected += 0.5 * eps * eps * sch.diffusion(tg.node(s)) * tg.dt(s);
    CHECK(std::abs(mc.value - expected) <= 3.0 * mc.std_error + 1e-12);
}

TEST_CASE("action is minimized over controls at u = -D dlambda/dx") {
    const SpatialGrid g(-8.0, 8.0, 2001);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 24);
    const double D = 1.0, slope = 0.4;

    const GaussianMixture mix({1.0}, {GaussianDensity(0.0, 1.2)});
    Field p{g, tg, FieldKind::density, {}};
    p.values.assign(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s <= 24; ++s)
        for (std::size_t i = 0; i < g.m; ++i)
            p.values[s][i] = mix.pdf1(g.node(i));
    Field lam{g, tg, FieldKind::multiplier_lambda, {}};
    lam.values.assign(tg.n_nodes(), Vec(g.m));
    for (std::size_t s = 0; s <= 24; ++s)
        for (std::size_t i = 0; i < g.m; ++i)
            lam.values[s][i] = slope * g.node(i) + 0.1;

    const auto act = [&](const ScalarField2D& u) {
        const ControlAssignment ctrl{u, [](double x, double) { return -0.3 * x; }, {}};
        return action_value(lam, p, ctrl, [D](double) { return D; });
    };
    const double at_opt = act([=](double, double) { return -D * slope; });

    std::mt19937_64 eng(8);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        const double a = coef(eng), w = 0.5 + std::abs(coef(eng));
        for (double eps : {1e-3, 1e-2, 0.1, -1e-3, -1e-2, -0.1}) {
            const double val = act([=](double x, double) {
                return -D * slope + eps * (a * std::sin(w * x) + 0.3);
            });
            CHECK(val - at_opt >= -1e-10);
        }
    }
}

TEST_CASE("grid mismatch is rejected") {
    const SpatialGrid g1(-8.0, 8.0, 101), g2(-8.0, 8.0, 201);
    const TimeGrid tg = make_time_grid(0.0, 1.0, 4);
    Field a{g1, tg, FieldKind::density, {}};
    a.values.assign(5, Vec(101, 0.0));
    Field b{g2, tg, FieldKind::multiplier_lambda, {}};
    b.values.assign(5, Vec(201, 0.0));
    const ControlAssignment ctrl{[](double, double) { return 0.0; },
                                 [](double, double) { return 0.0; },
                                 {}};
    CHECK_THROWS_AS(action_value(b, a, ctrl, [](double) { return 1.0; }),
                    numeric_error);
}
