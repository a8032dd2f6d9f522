// Configuration-driven experiment runner: simulation, verification,
// the ink-drop experiment, score training and reverse-SDE sampling.
//
// Exit codes: 0 success, 1 failed checks or runtime error, 2 config error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "difflab/checks.hpp"
#include "difflab/io.hpp"
#include "difflab/sampler.hpp"
#include "difflab/training.hpp"

namespace fs = std::filesystem;
using namespace difflab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "difflab-out";
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
};

json load_config(const CommonArgs& args, json defaults) {
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw numeric_error("config error: cannot open " + args.config_path);
        try {
            json j;
            in >> j;
            return j;
        } catch (const json::exception& e) {
            throw numeric_error(std::string("config error: invalid JSON: ") + e.what());
        }
    }
    return defaults;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    std::uint64_t seed, unsigned threads) {
    json manifest;
    manifest["version"] = kVersion;
    manifest["command"] = command;
    manifest["config"] = config;
    manifest["seed"] = seed;
    manifest["threads"] = threads;
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
}

fs::path prepare_out(const CommonArgs& args) {
    const fs::path dir(args.out_dir);
    fs::create_directories(dir);
    return dir;
}

// flag wins over the config field; 0 means all cores
unsigned resolve_threads(const CommonArgs& args, const ConfigCursor& c) {
    if (args.threads != 0) return args.threads;
    return static_cast<unsigned>(c.count("threads", 0));
}

int run_checks(const CommonArgs& args, const std::vector<std::string>& ids,
               const std::string& command) {
    const fs::path dir = prepare_out(args);
    write_manifest(dir, command, json::object(), args.seed.value_or(0), args.threads);
    json results = json::array();
    bool all_pass = true;
    for (const auto& entry : checks::registry()) {
        bool wanted = false;
        for (const auto& id : ids) wanted = wanted || id == entry.id;
        if (!wanted) continue;
        const checks::CheckResult r = entry.fn(args.threads);
        std::cout << r.id << (r.pass ? " PASS  " : " FAIL  ") << r.title << " ("
                  << r.detail << ")\n";
        results.push_back({{"id", r.id},
                           {"title", r.title},
                           {"pass", r.pass},
                           {"detail", r.detail}});
        all_pass = all_pass && r.pass;
    }
    std::ofstream os(dir / "results.json");
    os << results.dump(2) << '\n';
    std::cout << (all_pass ? "summary: PASS" : "summary: FAIL") << '\n';
    return all_pass ? 0 : 1;
}

ProcessSpec forward_process(const NoiseSchedule& sch, const std::string& kind) {
    if (kind == "ou")
        return make_process_1d(
            [&sch](double x, double t) { return -0.5 * sch.beta(t) * x; },
            [&sch](double t) { return sch.diffusion(t); });
    if (kind == "pure_diffusion")
        return make_process_1d([](double, double) { return 0.0; },
                               [&sch](double t) { return sch.diffusion(t); });
    throw numeric_error("config error at process: expected ou or pure_diffusion");
}

int cmd_simulate(const CommonArgs& args) {
    const json defaults = {
        {"mixture",
         {{"weights", {0.5, 0.5}}, {"means", {-1.0, 1.0}}, {"variances", {0.04, 0.04}}}},
        {"schedule",
         {{"type", "ou_const"}, {"beta", 1.0}, {"diffusion", 1.0}, {"t_end", 2.0}, {"n", 200}}},
        {"process", "ou"},
        {"n_paths", 20000},
        {"seed", 1},
        {"retain", "endpoints"},
    };
    const json cfg = load_config(args, defaults);
    const ConfigCursor c(cfg);
    const NoiseSchedule sch = schedule_from_config(c.at("schedule"));
    const GaussianMixture mix = mixture_from_config(c.at("mixture"));
    const std::uint64_t seed = args.seed.value_or(
        static_cast<std::uint64_t>(c.number_or("seed", 1.0)));
    const std::size_t n_paths = c.count("n_paths", 20000);
    const ProcessSpec spec = forward_process(sch, c.text_or("process", "ou"));

    std::vector<std::size_t> retain;
    if (c.text_or("retain", "endpoints") == "all_nodes")
        for (std::size_t s = 0; s <= sch.grid().n_steps(); ++s) retain.push_back(s);

    const InitSampler init = [&mix](const CounterRng& rng, std::uint64_t p,
                                    std::span<double> out) {
        mix.sample(rng, p ^ 0x51D0ULL, out);
    };
    SimulateOptions opt;
    opt.n_threads = resolve_threads(args, c);
    const Ensemble ens =
        simulate_ensemble(spec, init, sch.grid(), n_paths, seed, retain, opt);

    const fs::path dir = prepare_out(args);
    write_manifest(dir, "simulate", cfg, seed, args.threads);
    {
        std::ofstream os(dir / "ensemble.csv");
        ensemble_to_csv(os, ens);
    }
    {
        std::ofstream os(dir / "schedule.json");
        os << schedule_to_json(sch).dump(2) << '\n';
    }
    std::cout << "wrote " << (dir / "ensemble.csv").string() << " (" << n_paths
              << " paths)\n";
    return 0;
}

int cmd_ink(const CommonArgs& args) {
    const json defaults = {
        {"system",
         {{"a", {4000.0, 3500.0, 2500.0}},
          {"b", {4200.0, 3100.0, 2700.0}},
          {"g", {{0.70, 0.25, 0.15}, {0.20, 0.50, 0.25}, {0.10, 0.25, 0.60}}},
          {"n_particles", 10000.0}}},
        {"trials", 1000000},
        {"seed", 2024},
    };
    const json cfg = load_config(args, defaults);
    const ConfigCursor c(cfg);
    const ConfigCursor sysc = c.at("system");

    CellSystem sys;
    sys.a = sysc.at("a").numbers();
    sys.b = sysc.at("b").numbers();
    sys.n_particles = sysc.at("n_particles").number();
    const json& gj = sysc.at("g").raw();
    for (const auto& row : gj) {
        Vec r;
        for (const auto& v : row) r.push_back(v.get<double>());
        sys.g.push_back(std::move(r));
    }

    InkConfig icfg;
    icfg.system = sys;
    icfg.trials = c.count("trials", 1000000);
    icfg.seed = args.seed.value_or(static_cast<std::uint64_t>(c.number_or("seed", 2024.0)));
    icfg.n_threads = resolve_threads(args, c);

    const TransferResult tr = optimal_transfer(sys);
    const InkResult ink = run_ink_experiment(icfg);

    const fs::path dir = prepare_out(args);
    write_manifest(dir, "ink", cfg, icfg.seed, args.threads);
    {
        std::ofstream os(dir / "h_star.csv");
        matrix_to_csv(os, tr.h_star);
    }
    json report = transfer_report(tr);
    report["trials"] = ink.trials;
    report["hits"] = ink.hits;
    report["frequency"] = ink.frequency;
    report["empirical_rate"] = ink.empirical_rate;
    report["relative_gap"] = ink.relative_gap;
    {
        std::ofstream os(dir / "report.json");
        os << report.dump(2) << '\n';
    }
    const bool pass = ink.relative_gap < 0.15;
    std::cout << "A4 " << (pass ? "PASS" : "FAIL") << "  ink experiment: kl*="
              << ink.kl_star << " empirical=" << ink.empirical_rate
              << " rel gap=" << ink.relative_gap << " (hits " << ink.hits << "/"
              << ink.trials << ")\n";
    return pass ? 0 : 1;
}

json default_train_config() {
    return {
        {"data",
         {{"mixture",
           {{"weights", {0.5, 0.5}}, {"means", {-1.0, 1.0}}, {"variances", {0.04, 0.04}}}},
          {"n_samples", 10000},
          {"seed", 2026}}},
        {"schedule",
         {{"type", "ddpm_linear"},
          {"beta0", 0.6},
          {"beta1", 3.8},
          {"t_end", 2.0},
          {"n", 32},
          {"spacing", "geometric"},
          {"ratio", 16.0}}},
        {"model",
         {{"kind", "rbf"},
          {"z_min", -4.5},
          {"z_max", 4.5},
          {"n_centers", 46},
          {"bandwidth", 0.26},
          {"data_variance_hint", 1.04}}},
        {"optimizer",
         {{"algo", "adam"},
          {"lr", 1.5e-2},
          {"lr_schedule", "cosine"},
          {"batch", 512},
          {"steps", 24000},
          {"eval_interval", 1000},
          {"seed", 5}}},
        {"oracle", true},
    };
}

int cmd_train(const CommonArgs& args) {
    const json cfg = load_config(args, default_train_config());
    const ConfigCursor c(cfg);

    const NoiseSchedule sch = schedule_from_config(c.at("schedule"));
    const ConfigCursor dc = c.at("data");
    const GaussianMixture mix = mixture_from_config(dc.at("mixture"));
    const Vec data = [&] {
        const std::size_t n = dc.count("n_samples", 10000);
        const CounterRng rng(static_cast<std::uint64_t>(dc.number_or("seed", 2026.0)));
        Vec d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = mix.sample1(rng, i);
        return d;
    }();

    const ConfigCursor mc = c.at("model");
    const std::string kind = mc.text_or("kind", "rbf");
    ScoreModel model = [&] {
        if (kind == "rbf") {
            RbfArchitecture arch;
            arch.z_centers = linspace(mc.number_or("z_min", -4.5),
                                      mc.number_or("z_max", 4.5),
                                      mc.count("n_centers", 46));
            arch.bandwidth = mc.number_or("bandwidth", 0.26);
            arch.data_variance_hint = mc.number_or("data_variance_hint", 1.0);
            return ScoreModel::make_rbf(arch, sch);
        }
        if (kind == "mlp") {
            MlpArchitecture arch;
            arch.dim = 1;
            arch.width = mc.count("width", 64);
            return ScoreModel::make_mlp(
                arch, sch, static_cast<std::uint64_t>(mc.number_or("init_seed", 7.0)));
        }
        throw numeric_error("config error at model.kind: expected rbf or mlp");
    }();

    const ConfigCursor oc = c.at("optimizer");
    OptimizerConfig ocfg;
    const std::string algo = oc.text_or("algo", "adam");
    if (algo == "adam") ocfg.algo = OptimizerConfig::Algo::adam;
    else if (algo == "sgd") ocfg.algo = OptimizerConfig::Algo::sgd_momentum;
    else throw numeric_error("config error at optimizer.algo: expected adam or sgd");
    ocfg.lr_schedule = oc.text_or("lr_schedule", "constant") == "cosine"
                           ? OptimizerConfig::LrSchedule::cosine
                           : OptimizerConfig::LrSchedule::constant;
    ocfg.learning_rate = oc.number_or("lr", 3e-3);
    ocfg.batch_size = oc.count("batch", 256);
    ocfg.steps = oc.count("steps", 4000);
    ocfg.eval_interval = oc.count("eval_interval", 250);
    ocfg.seed = args.seed.value_or(
        static_cast<std::uint64_t>(oc.number_or("seed", 1.0)));

    std::optional<MixturePath> oracle;
    const Vec x_grid = linspace(-8.0, 8.0, 2001);
    if (c.has("oracle") && c.at("oracle").raw().is_boolean() &&
        c.at("oracle").raw().get<bool>())
        oracle = evolve_mixture(mix, sch, sch.grid(), ForwardKind::ddpm);

    const TrainResult log = train(model, data, sch, ocfg,
                                  oracle ? &*oracle : nullptr,
                                  oracle ? &x_grid : nullptr);

    const fs::path dir = prepare_out(args);
    write_manifest(dir, "train", cfg, ocfg.seed, args.threads);
    {
        std::ofstream os(dir / "checkpoint.json");
        os << checkpoint_to_json(model, cfg.at("schedule")).dump() << '\n';
    }
    {
        std::ofstream os(dir / "metrics.jsonl");
        for (const TrainRecord& rec : log.log) {
            json line = {{"step", rec.step}, {"loss", rec.loss}};
            if (rec.score_error) line["score_err"] = *rec.score_error;
            if (rec.delta_action) line["delta_action"] = *rec.delta_action;
            os << line.dump() << '\n';
        }
    }
    std::cout << "wrote " << (dir / "checkpoint.json").string() << " after "
              << ocfg.steps << " steps; final loss " << log.log.back().loss;
    if (log.log.back().score_error)
        std::cout << ", score error " << *log.log.back().score_error;
    std::cout << '\n';
    return 0;
}

int cmd_sample(const CommonArgs& args) {
    const json defaults = {
        {"checkpoint", "difflab-out/checkpoint.json"},
        {"n_samples", 10000},
        {"seed", 777},
        {"grid", {{"t_end", 2.0}, {"n", 500}, {"spacing", "geometric"}, {"ratio", 0.01}}},
        {"eps_min_fraction", 1e-3},
        {"snapshots", false},
    };
    const json cfg = load_config(args, defaults);
    const ConfigCursor c(cfg);

    const std::string ckpt_path = c.at("checkpoint").text();
    std::ifstream in(ckpt_path);
    if (!in) throw numeric_error("config error: cannot open checkpoint " + ckpt_path);
    json ckpt;
    in >> ckpt;
    const ScoreModel model = checkpoint_from_json(ckpt);
    const NoiseSchedule sch =
        schedule_from_config(ConfigCursor(ckpt.at("schedule"), "schedule"));

    const TimeGrid sgrid = grid_from_config(c.at("grid"));
    const ProcessSpec fwd = forward_process(sch, "ou");
    SamplerOptions opt;
    opt.eps_min_fraction = c.number_or("eps_min_fraction", 1e-3);
    opt.retain_snapshots = c.has("snapshots") && c.at("snapshots").raw().get<bool>();
    opt.n_threads = resolve_threads(args, c);
    const std::uint64_t seed =
        args.seed.value_or(static_cast<std::uint64_t>(c.number_or("seed", 777.0)));
    const std::size_t n_samples = c.count("n_samples", 10000);

    const GenerationRun run = sample_reverse(model_score_fn(model), fwd, sch, sgrid,
                                             n_samples, seed,
                                             gaussian_init({0.0}, {1.0}), opt);

    const fs::path dir = prepare_out(args);
    write_manifest(dir, "sample", cfg, seed, args.threads);
    {
        std::ofstream os(dir / "samples.csv");
        os << "sample_id,x\n";
        for (std::size_t p = 0; p < run.n_samples; ++p)
            os << p << ',' << format_double(run.samples[p]) << '\n';
    }
    if (opt.retain_snapshots) {
        for (std::size_t i = 0; i < run.snapshot_nodes.size();
             i += std::max<std::size_t>(1, run.snapshot_nodes.size() / 20)) {
            std::ofstream os(dir / ("snapshot_" +
                                    std::to_string(run.snapshot_nodes[i]) + ".csv"));
            for (double v : run.snapshots[i]) os << format_double(v) << '\n';
        }
    }
    std::cout << "wrote " << (dir / "samples.csv").string() << " (stopped at node "
              << run.stop_node << ", t = "
              << format_double(run.grid.node(run.stop_node)) << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"difflab: diffusion, optimal control and score matching laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    std::uint64_t seed_arg = 0;
    bool seed_given = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON experiment configuration");
        sub->add_option("--out", args.out_dir, "output directory");
        sub->add_option("--seed", seed_arg, "seed override")
            ->each([&](const std::string&) { seed_given = true; });
        sub->add_option("--threads", args.threads, "worker threads (0 = all cores)");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "forward SDE ensemble");
    CLI::App* vk = app.add_subcommand("verify-kernels",
                                      "kernel, relaxation and Feynman-Kac checks (A1-A3)");
    CLI::App* va = app.add_subcommand("verify-action",
                                      "action stationarity and excess-action checks (A5-A6)");
    CLI::App* vb = app.add_subcommand("verify-bridge",
                                      "Schrodinger bridge and DPM kernel checks (A10)");
    CLI::App* vd = app.add_subcommand("verify-dpm", "DDPM equivalence checks (A7)");
    CLI::App* ink = app.add_subcommand("ink", "large-deviation ink experiment (A4)");
    CLI::App* tr = app.add_subcommand("train", "denoising score matching (A8)");
    CLI::App* sa = app.add_subcommand("sample", "reverse-SDE generation (A9)");
    for (CLI::App* sub : {simulate, vk, va, vb, vd, ink, tr, sa}) add_common(sub);

    CLI11_PARSE(app, argc, argv);
    if (seed_given) args.seed = seed_arg;

    try {
        if (simulate->parsed()) return cmd_simulate(args);
        if (vk->parsed()) return run_checks(args, {"A1", "A2", "A3"}, "verify-kernels");
        if (va->parsed()) {
            const StationarityResiduals r = checks::action_residual_report();
            const fs::path dir = prepare_out(args);
            json report = {{"fp", r.fp},
                           {"hjb", r.hjb},
                           {"control", r.control},
                           {"grid_meta",
                            {{"x_lo", -8.0}, {"x_hi", 8.0}, {"m", 2501},
                             {"t_end", 1.5}, {"n", 4000}}}};
            std::ofstream os(dir / "residuals.json");
            os << report.dump(2) << '\n';
            return run_checks(args, {"A5", "A6"}, "verify-action");
        }
        if (vb->parsed()) {
            const checks::BridgeReport br = checks::bridge_report();
            const fs::path dir = prepare_out(args);
            json report = {{"iterations", br.iterations},
                           {"marginal_residuals", br.marginal_residuals},
                           {"chi_endpoint_cosine", br.chi_endpoint_cosine},
                           {"hstar_row_norm_max_err", br.hstar_row_norm_max_err}};
            std::ofstream os(dir / "bridge.json");
            os << report.dump(2) << '\n';
            return run_checks(args, {"A10"}, "verify-bridge");
        }
        if (vd->parsed()) return run_checks(args, {"A7"}, "verify-dpm");
        if (ink->parsed()) return cmd_ink(args);
        if (tr->parsed()) return cmd_train(args);
        if (sa->parsed()) return cmd_sample(args);
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return std::string(e.what()).find("config error") != std::string::npos ? 2 : 1;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
