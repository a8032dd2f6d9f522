#include <doctest.h>

#include <cmath>

#include "difflab/action.hpp"
#include "difflab/sampler.hpp"
#include "difflab/stats.hpp"

using namespace difflab;

namespace {

struct TwoBumpWorld {
    GaussianMixture data{{0.5, 0.5}, {GaussianDensity(-1.0, 0.04),
                                      GaussianDensity(1.0, 0.04)}};
    NoiseSchedule schedule;
    MixturePath path;
    ProcessSpec forward;

    // geometric spacing concentrates steps near t = 0, where the score
    // stiffens and uniform Euler steps inflate the terminal variance
    explicit TwoBumpWorld(double t_end = 4.0, std::size_t n = 500)
        : schedule(ou_schedule([](double) { return 1.0; }, [](double) { return 1.0; },
                               make_time_grid(0.0, t_end, n, Spacing::geometric, 0.01))),
          path(evolve_mixture(data, schedule, schedule.grid(), ForwardKind::ou)),
          forward(make_process_1d([](double x, double) { return -0.5 * x; },
                                  [](double) { return 1.0; })) {}

    ScoreFn exact_score_fn() const {
        return [this](std::span<const double> x, double t, std::span<double> out) {
            const std::size_t s = nearest_node(t);
            path.at(s).score(x, out);
        };
    }
    std::size_t nearest_node(double t) const {
        const TimeGrid& g = schedule.grid();
        std::size_t s = 0;
        while (s + 1 < g.n_nodes() &&
               std::abs(g.node(s + 1) - t) < std::abs(g.node(s) - t))
            ++s;
        return s;
    }
    InitSampler terminal_init() const {
        const GaussianMixture terminal = path.at(schedule.grid().n_steps());
        return [terminal](const CounterRng& rng, std::uint64_t p,
                          std::span<double> out) {
            terminal.sample(rng, p ^ 0xFEEDULL, out);
        };
    }
};

}  // namespace

TEST_CASE("zero reverse steps return the tractable draws unchanged") {
    const TwoBumpWorld w(2.0, 100);
    SamplerOptions opt;
    opt.eps_min_fraction = 1.0;  // stop immediately
    const GenerationRun run = sample_reverse(w.exact_score_fn(), w.forward,
                                             w.schedule, w.schedule.grid(), 500, 3,
                                             w.terminal_init(), opt);
    CHECK(run.stop_node == w.schedule.grid().n_steps());
    Vec direct(500);
    const CounterRng rng(3);
    for (std::size_t p = 0; p < 500; ++p)
        direct[p] = w.path.at(100).sample1(rng, p ^ 0xFEEDULL);
    CHECK(run.samples1() == direct);
}

TEST_CASE("gaussian-to-gaussian reversal reproduces the data moments") {
    const GaussianMixture data({1.0}, {GaussianDensity(0.6, 0.25)});
    const NoiseSchedule sch = ou_schedule(
        [](double) { return 1.0; }, [](double) { return 1.0; },
        make_time_grid(0.0, 4.0, 512));
    const MixturePath path = evolve_mixture(data, sch, sch.grid(), ForwardKind::ou);
    const ProcessSpec fwd = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });
    const ScoreFn score = [&](std::span<const double> x, double t,
                              std::span<double> out) {
        const std::size_t s = sch.grid().index_of(t);
        path.at(s).score(x, out);
    };
    const GaussianMixture terminal = path.at(512);
    const InitSampler init = [&terminal](const CounterRng& rng, std::uint64_t p,
                                         std::span<double> out) {
        terminal.sample(rng, p ^ 0xFEEDULL, out);
    };
    const GenerationRun run =
        sample_reverse(score, fwd, sch, sch.grid(), 100000, 11, init);
    const MeanVar mv = mean_variance(run.samples1());
    CHECK(std::abs(mv.mean - 0.6) < 0.01);
    CHECK(std::abs(mv.var - 0.25) < 0.012);
}

TEST_CASE("exact-score reversal of the two-bump mixture passes the ks test") {
    const TwoBumpWorld w;
    const std::size_t n_samples = 20000;
    const GenerationRun run =
        sample_reverse(w.exact_score_fn(), w.forward, w.schedule, w.schedule.grid(),
                       n_samples, 21, w.terminal_init());

    Vec direct(n_samples);
    const CounterRng rng(1234);
    for (std::size_t p = 0; p < n_samples; ++p)
        direct[p] = w.data.sample1(rng, p);
    const double d = ks_statistic_two_sample(run.samples1(), direct);
    CHECK(ks_p_value_two_sample(d, n_samples, n_samples) > 0.01);

    const MeanVar mv = mean_variance(run.samples1());
    CHECK(std::abs(mv.mean) < 0.02);
    CHECK(std::abs(mv.var - 1.04) / 1.04 < 0.03);
}

TEST_CASE("intermediate snapshots follow the exact marginals") {
    const TwoBumpWorld w;
    SamplerOptions opt;
    opt.retain_snapshots = true;
    const std::size_t n_samples = 50000;
    const GenerationRun run =
        sample_reverse(w.exact_score_fn(), w.forward, w.schedule, w.schedule.grid(),
                       n_samples, 31, w.terminal_init(), opt);

    for (std::size_t snap : {std::size_t{100}, std::size_t{250}, std::size_t{400}}) {
        const std::size_t node = run.snapshot_nodes[snap];
        const GaussianMixture& marginal = w.path.at(node);
        const double l1 = histogram_l1(
            run.snapshots[snap], [&](double x) { return marginal.cdf1(x); }, -5.0,
            5.0, 100);
        CHECK(l1 < 0.03);
    }
}

TEST_CASE("terminal moment error converges at weak order one") {
    const GaussianMixture data({1.0}, {GaussianDensity(0.8, 0.09)});
    const ProcessSpec fwd = make_process_1d(
        [](double x, double) { return -0.5 * x; }, [](double) { return 1.0; });

    auto terminal_mean_error = [&](std::size_t n) {
        const NoiseSchedule sch = ou_schedule(
            [](double) { return 1.0; }, [](double) { return 1.0; },
            make_time_grid(0.0, 2.0, n));
        const MixturePath path = evolve_mixture(data, sch, sch.grid(), ForwardKind::ou);
        const ScoreFn score = [&sch, &path](std::span<const double> x, double t,
                                            std::span<double> out) {
            path.at(sch.grid().index_of(t)).score(x, out);
        };
        const GaussianMixture terminal = path.at(n);
        const InitSampler init = [&terminal](const CounterRng& rng, std::uint64_t p,
                                             std::span<double> out) {
            terminal.sample(rng, p ^ 0xFEEDULL, out);
        };
        SamplerOptions opt;
        opt.eps_min_fraction = 0.0;
        const GenerationRun run =
            sample_reverse(score, fwd, sch, sch.grid(), 400000, 77, init, opt);
        const MeanVar mv = mean_variance(run.samples1());
        return std::abs(mv.mean - 0.8);
    };
    const double e16 = terminal_mean_error(16);
    const double e32 = terminal_mean_error(32);
    CHECK(e16 / e32 > 1.5);
    CHECK(e16 / e32 < 2.8);
}

TEST_CASE("generation quality degrades with the excess action of the score") {
    const TwoBumpWorld w(4.0, 250);
    const Vec x_grid = linspace(-9.0, 9.0, 1201);
    Vec direct(20000);
    const CounterRng rng(55);
    for (std::size_t p = 0; p < direct.size(); ++p) direct[p] = w.data.sample1(rng, p);

    Vec actions, distances;
    for (double eps : {0.0, 0.6, 2.5}) {
        const ScoreFn perturbed = [&w, eps](std::span<const double> x, double t,
                                            std::span<double> out) {
            const std::size_t s = w.nearest_node(t);
            w.path.at(s).score(x, out);
            out[0] += eps * std::sin(x[0]);
        };
        actions.push_back(delta_action(
            [&w, eps](double x, double t) {
                return w.path.at(w.nearest_node(t)).score1(x) + eps * std::sin(x);
            },
            w.path, w.schedule, x_grid));
        const GenerationRun run = sample_reverse(
            perturbed, w.forward, w.schedule, w.schedule.grid(), 20000, 91,
            w.terminal_init());
        distances.push_back(ks_statistic_two_sample(run.samples1(), direct));
    }
    CHECK(actions[0] < actions[1]);
    CHECK(actions[1] < actions[2]);
    CHECK(distances[2] > distances[0]);
    CHECK(distances[2] > distances[1]);
    CHECK(distances[1] > distances[0] - 0.005);  // monotone within noise
}

TEST_CASE("explosion guard trips on a mis-specified score") {
    const TwoBumpWorld w(2.0, 50);
    const ScoreFn bad = [](std::span<const double> x, double, std::span<double> out) {
        out[0] = 1e7 * (1.0 + x[0] * x[0]);
    };
    CHECK_THROWS_AS(sample_reverse(bad, w.forward, w.schedule, w.schedule.grid(),
                                   16, 5, w.terminal_init()),
                    numeric_error);
}
