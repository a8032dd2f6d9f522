#include <doctest.h>

#include <cmath>
#include <limits>

#include "difflab/schedule.hpp"

using namespace difflab;

TEST_CASE("uniform grid places equispaced nodes") {
    const TimeGrid g = make_time_grid(0.0, 1.0, 4);
    REQUIRE(g.n_nodes() == 5);
    CHECK(g.node(0) == doctest::Approx(0.0));
    CHECK(g.node(1) == doctest::Approx(0.25));
    CHECK(g.node(2) == doctest::Approx(0.5));
    CHECK(g.node(3) == doctest::Approx(0.75));
    CHECK(g.node(4) == doctest::Approx(1.0));
}

TEST_CASE("single step grid") {
    const TimeGrid g = make_time_grid(0.0, 1.0, 1);
    REQUIRE(g.n_nodes() == 2);
    CHECK(g.node(0) == 0.0);
    CHECK(g.node(1) == 1.0);
}

TEST_CASE("geometric grid: summation oracle and step ratio") {
    const std::size_t n = 1000;
    const TimeGrid g = make_time_grid(0.0, 1.0, n, Spacing::geometric, 100.0);
    REQUIRE(g.n_steps() == n);

    // oracle: direct summation of the geometric series dt_0 r^s
    const double r = std::pow(100.0, -1.0 / 999.0);
    double sum = 0.0, term = 1.0;
    for (std::size_t s = 0; s < n; ++s) {
        sum += term;
        term *= r;
    }
    const double dt0 = 1.0 / sum;
    for (std::size_t s : {std::size_t{0}, std::size_t{1}, std::size_t{500}, n - 1})
        CHECK(g.dt(s) == doctest::Approx(dt0 * std::pow(r, double(s))).epsilon(1e-9));

    CHECK(g.dt(0) / g.dt(n - 1) == doctest::Approx(100.0).epsilon(1e-9));
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) total += g.dt(s);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(g.t_start() == 0.0);
    CHECK(g.t_end() == 1.0);
}

TEST_CASE("grid construction errors") {
    CHECK_THROWS_AS(make_time_grid(0.0, 1.0, 0), numeric_error);
    CHECK_THROWS_AS(make_time_grid(1.0, 0.0, 4), numeric_error);
    CHECK_THROWS_AS(
        make_time_grid(0.0, std::numeric_limits<double>::infinity(), 4),
        numeric_error);
    CHECK_THROWS_AS(
        make_time_grid(std::numeric_limits<double>::quiet_NaN(), 1.0, 4),
        numeric_error);
}

TEST_CASE("ddpm schedule with beta = 0 is noiseless") {
    // beta >= 0 with D > 0 requires a separate diffusion for the zero-beta case
    const TimeGrid g = make_time_grid(0.0, 1.0, 8);
    const NoiseSchedule sch =
        ou_schedule([](double) { return 0.0; }, [](double) { return 1.0; }, g);
    for (std::size_t s = 0; s < g.n_steps(); ++s) CHECK(sch.alpha_step(s) == 1.0);
    for (std::size_t s = 0; s <= g.n_steps(); ++s) CHECK(sch.alpha_bar(s) == 1.0);
}

TEST_CASE("ddpm schedule abar vs closed-form exponential") {
    const TimeGrid g = make_time_grid(0.0, 1.0, 1000);
    const NoiseSchedule sch = ddpm_schedule([](double) { return 1.0; }, g);
    // oracle: exact per-step product against exp(-int beta)
    double prod = 1.0;
    for (std::size_t s = 0; s < g.n_steps(); ++s) prod *= 1.0 - g.dt(s);
    CHECK(sch.alpha_bar(g.n_steps()) == doctest::Approx(prod).epsilon(1e-14));
    CHECK(std::abs(sch.alpha_bar(g.n_steps()) - std::exp(-1.0)) / std::exp(-1.0) <=
          1e-3);
    CHECK(sch.diffusion(0.5) == sch.beta(0.5));
}

TEST_CASE("ddpm schedule two-step product") {
    const TimeGrid g = make_time_grid(0.0, 1.0, 2);
    const NoiseSchedule sch = ddpm_schedule([](double) { return 1.0; }, g);
    CHECK(sch.alpha_bar(2) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("ddpm schedule rejects coarse grids") {
    const TimeGrid g = make_time_grid(0.0, 1.0, 2);  // dt = 0.5, beta dt = 1.5
    CHECK_THROWS_AS(ddpm_schedule([](double) { return 3.0; }, g), numeric_error);
}

TEST_CASE("product/exponential gap converges at first order") {
    auto gap = [](std::size_t n) {
        const TimeGrid g = make_time_grid(0.0, 1.0, n);
        const NoiseSchedule sch = ddpm_schedule([](double) { return 1.0; }, g);
        double ib = 0.0;
        for (std::size_t s = 0; s < n; ++s) ib += 1.0 * g.dt(s);
        return std::abs(sch.alpha_bar(n) - std::exp(-ib));
    };
    const double ratio = gap(100) / gap(200);
    CHECK(ratio > 1.6);
    CHECK(ratio < 2.6);
}

TEST_CASE("grid refinement preserves endpoints and abar monotonicity") {
    for (std::size_t n : {16, 32, 64}) {
        const TimeGrid g = make_time_grid(0.25, 2.0, n, Spacing::geometric, 10.0);
        CHECK(g.t_start() == 0.25);
        CHECK(g.t_end() == 2.0);
        const NoiseSchedule sch =
            ddpm_schedule([](double t) { return 0.1 + t; }, g);
        for (std::size_t s = 0; s < n; ++s) {
            CHECK(sch.alpha_bar(s + 1) <= sch.alpha_bar(s));
            CHECK(sch.alpha_bar(s + 1) > 0.0);
        }
    }
}

TEST_CASE("int_beta quadrature is exact for linear beta") {
    const TimeGrid g = make_time_grid(0.0, 2.0, 50);
    const NoiseSchedule sch =
        ou_schedule([](double t) { return 0.5 + 2.0 * t; },
                    [](double) { return 1.0; }, g);
    // int_0.2^1.4 (0.5 + 2t) dt = 0.5*1.2 + (1.4^2 - 0.2^2) = 0.6 + 1.92
    CHECK(sch.int_beta(0.2, 1.4) == doctest::Approx(2.52).epsilon(1e-12));
}
