#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "difflab/bridge.hpp"
#include "difflab/divergence.hpp"
#include "difflab/mixture.hpp"
#include "difflab/pde.hpp"
#include "difflab/schedule.hpp"
#include "difflab/score_model.hpp"
#include "difflab/sde.hpp"

namespace difflab {

using json = nlohmann::json;

inline constexpr const char* kVersion = "difflab 0.1.0";

// Shortest decimal representation that round-trips; locale-independent.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_csv_row(std::ostream& os, std::span<const double> row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ',';
        os << format_double(row[i]);
    }
    os << '\n';
}

// --- config parsing -------------------------------------------------------

// Field lookup that reports the full path of what is missing or mistyped.
class ConfigCursor {
public:
    ConfigCursor(const json& j, std::string path = "") : j_(&j), path_(std::move(path)) {}

    ConfigCursor at(const std::string& key) const {
        if (!j_->is_object() || !j_->contains(key))
            throw numeric_error("config error at " + join(key) + ": missing field");
        return {(*j_)[key], join(key)};
    }
    bool has(const std::string& key) const {
        return j_->is_object() && j_->contains(key);
    }
    double number() const {
        if (!j_->is_number())
            throw numeric_error("config error at " + path_ + ": expected a number");
        return j_->get<double>();
    }
    double number_or(const std::string& key, double fallback) const {
        return has(key) ? at(key).number() : fallback;
    }
    std::size_t count(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const double v = at(key).number();
        if (v < 0 || v != std::floor(v))
            throw numeric_error("config error at " + join(key) +
                                ": expected a non-negative integer");
        return static_cast<std::size_t>(v);
    }
    std::string text() const {
        if (!j_->is_string())
            throw numeric_error("config error at " + path_ + ": expected a string");
        return j_->get<std::string>();
    }
    std::string text_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? at(key).text() : fallback;
    }
    Vec numbers() const {
        if (!j_->is_array())
            throw numeric_error("config error at " + path_ + ": expected an array");
        Vec out;
        for (const auto& v : *j_) {
            if (!v.is_number())
                throw numeric_error("config error at " + path_ +
                                    ": expected numeric entries");
            out.push_back(v.get<double>());
        }
        return out;
    }
    const json& raw() const { return *j_; }
    const std::string& path() const { return path_; }

private:
    std::string join(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }
    const json* j_;
    std::string path_;
};

// --- schedules -------------------------------------------------------------

// {"type": "ddpm_linear"|"ddpm_const"|"ou_const"|"pure_diffusion", ...,
//  "t_start", "t_end", "n", "spacing": "uniform"|"geometric", "ratio"}
inline TimeGrid grid_from_config(const ConfigCursor& c) {
    const double t_start = c.number_or("t_start", 0.0);
    const double t_end = c.number_or("t_end", 1.0);
    const std::size_t n = c.count("n", 100);
    const std::string spacing = c.text_or("spacing", "uniform");
    if (spacing == "uniform") return make_time_grid(t_start, t_end, n);
    if (spacing == "geometric")
        return make_time_grid(t_start, t_end, n, Spacing::geometric,
                              c.number_or("ratio", 100.0));
    throw numeric_error("config error at " + c.path() +
                        ".spacing: expected uniform or geometric");
}

inline NoiseSchedule schedule_from_config(const ConfigCursor& c) {
    const TimeGrid grid = grid_from_config(c);
    const std::string type = c.at("type").text();
    if (type == "ddpm_linear") {
        const double b0 = c.at("beta0").number();
        const double b1 = c.at("beta1").number();
        const double span = grid.t_end() - grid.t_start();
        const double t0 = grid.t_start();
        return ddpm_schedule(
            [b0, b1, t0, span](double t) { return b0 + (b1 - b0) * (t - t0) / span; },
            grid);
    }
    if (type == "ddpm_const") {
        const double b = c.at("beta").number();
        require(b > 0.0, "config error at " + c.path() + ".beta: must be positive");
        return ddpm_schedule([b](double) { return b; }, grid);
    }
    if (type == "ou_const") {
        const double b = c.at("beta").number();
        const double d = c.at("diffusion").number();
        require(d > 0.0,
                "config error at " + c.path() + ".diffusion: must be positive");
        return ou_schedule([b](double) { return b; }, [d](double) { return d; }, grid);
    }
    if (type == "pure_diffusion") {
        const double d = c.at("diffusion").number();
        require(d > 0.0,
                "config error at " + c.path() + ".diffusion: must be positive");
        return ou_schedule([](double) { return 0.0; }, [d](double) { return d; }, grid);
    }
    throw numeric_error("config error at " + c.path() + ".type: unknown schedule type '" +
                        type + "'");
}

inline json schedule_to_json(const NoiseSchedule& s) {
    json out;
    const TimeGrid& g = s.grid();
    out["t_nodes"] = g.nodes();
    Vec beta(g.n_nodes());
    for (std::size_t i = 0; i < g.n_nodes(); ++i) beta[i] = s.beta(g.node(i));
    out["beta"] = beta;
    out["alpha_bar"] = s.alpha_bar_nodes();
    return out;
}

// --- mixtures ---------------------------------------------------------------

// {"weights": [...], "means": [...], "variances": [...]}; means/variances may
// be scalars (1D) or per-component vectors.
inline GaussianMixture mixture_from_config(const ConfigCursor& c) {
    const Vec weights = c.at("weights").numbers();
    const json& jm = c.at("means").raw();
    const json& jv = c.at("variances").raw();
    if (!jm.is_array() || !jv.is_array() || jm.size() != weights.size() ||
        jv.size() != weights.size())
        throw numeric_error("config error at " + c.path() +
                            ": weights/means/variances must be arrays of equal length");
    std::vector<GaussianDensity> comps;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        Vec m, v;
        if (jm[i].is_number()) m = {jm[i].get<double>()};
        else for (const auto& x : jm[i]) m.push_back(x.get<double>());
        if (jv[i].is_number()) v = {jv[i].get<double>()};
        else for (const auto& x : jv[i]) v.push_back(x.get<double>());
        comps.emplace_back(std::move(m), std::move(v));
    }
    return {weights, std::move(comps)};
}

inline json gaussian_to_json(const GaussianDensity& g) {
    return {{"mean", g.mean}, {"variance", g.var}};
}

inline json mixture_to_json(const GaussianMixture& mix) {
    json out;
    out["weights"] = mix.weights();
    json means = json::array(), variances = json::array();
    for (std::size_t i = 0; i < mix.n_components(); ++i) {
        means.push_back(mix.component(i).mean);
        variances.push_back(mix.component(i).var);
    }
    out["means"] = means;
    out["variances"] = variances;
    return out;
}

// --- data products ----------------------------------------------------------

// one row per path per retained node: path_id, t, x_0..x_{d-1}, weight
inline void ensemble_to_csv(std::ostream& os, const Ensemble& ens) {
    os << "path_id,t";
    for (std::size_t k = 0; k < ens.dim; ++k) os << ",x_" << k;
    os << ",weight\n";
    for (std::size_t r = 0; r < ens.retained.size(); ++r) {
        const double t = ens.grid.node(ens.retained[r]);
        for (std::size_t p = 0; p < ens.n_paths; ++p) {
            os << p << ',' << format_double(t);
            for (std::size_t k = 0; k < ens.dim; ++k)
                os << ',' << format_double(ens.states[r][p * ens.dim + k]);
            os << ',' << format_double(ens.weights[r][p]) << '\n';
        }
    }
}

// rows = time nodes, cols = x nodes
inline void field_to_csv(std::ostream& os, const Field& f) {
    for (const Vec& row : f.values) write_csv_row(os, row);
}

inline json field_sidecar(const Field& f) {
    json out;
    out["x_lo"] = f.grid.lo;
    out["x_hi"] = f.grid.hi;
    out["m"] = f.grid.m;
    out["t_nodes"] = f.time_grid.nodes();
    out["kind"] = f.kind == FieldKind::density ? "density"
                  : f.kind == FieldKind::control_chi ? "control_chi"
                                                     : "multiplier_lambda";
    return out;
}

inline void matrix_to_csv(std::ostream& os, const Matrix& m) {
    for (const Vec& row : m) write_csv_row(os, row);
}

inline json transfer_report(const TransferResult& r) {
    json out;
    out["kl_star"] = r.kl_star;
    out["rate"] = r.log_prob_rate;
    out["iterations"] = r.iterations;
    out["marginal_residual"] =
        r.residual_history.empty() ? 0.0 : r.residual_history.back();
    if (r.stirling_warning)
        out["warning"] = "N is not large compared to the cell count; the "
                         "Stirling regime is marginal";
    return out;
}

// --- model checkpoints -------------------------------------------------------

// Versioned flat parameter vector plus the architecture descriptor. The
// noise schedule is carried as its config object so a checkpoint can be
// reloaded without the original experiment file.
inline json checkpoint_to_json(const ScoreModel& model, const json& schedule_config) {
    json out;
    out["version"] = kVersion;
    out["schedule"] = schedule_config;
    json arch;
    if (model.kind() == ModelKind::rbf) {
        arch["kind"] = "rbf";
        arch["z_centers"] = model.rbf().z_centers;
        arch["bandwidth"] = model.rbf().bandwidth;
        arch["data_variance_hint"] = model.rbf().data_variance_hint;
        arch["include_affine"] = model.rbf().include_affine;
    } else {
        arch["kind"] = "mlp";
        arch["dim"] = model.mlp().dim;
        arch["width"] = model.mlp().width;
    }
    out["architecture"] = arch;
    out["theta"] = model.parameters();
    return out;
}

inline ScoreModel checkpoint_from_json(const json& j) {
    const ConfigCursor c(j);
    const std::string version = c.at("version").text();
    require(version == kVersion,
            "checkpoint version '" + version + "' does not match " + kVersion);
    const NoiseSchedule schedule = schedule_from_config(c.at("schedule"));
    const ConfigCursor arch = c.at("architecture");
    const std::string kind = arch.at("kind").text();
    ScoreModel model = [&] {
        if (kind == "rbf") {
            RbfArchitecture a;
            a.z_centers = arch.at("z_centers").numbers();
            a.bandwidth = arch.at("bandwidth").number();
            a.data_variance_hint = arch.at("data_variance_hint").number();
            a.include_affine = arch.at("include_affine").raw().get<bool>();
            return ScoreModel::make_rbf(a, schedule);
        }
        if (kind == "mlp") {
            MlpArchitecture a;
            a.dim = arch.count("dim", 1);
            a.width = arch.count("width", 64);
            return ScoreModel::make_mlp(a, schedule, 0);
        }
        throw numeric_error("checkpoint: unknown model kind '" + kind + "'");
    }();
    const Vec theta = c.at("theta").numbers();
    require(theta.size() == model.n_params(),
            "checkpoint: parameter count mismatch");
    model.parameters() = theta;
    return model;
}

}  // namespace difflab
