#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "difflab/common.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"

namespace difflab {

enum class ModelKind { rbf, mlp };

// Per-time-node radial basis expansion in the variance-normalized coordinate
// z = x / s_t, with s_t^2 = abar_t * var_hint + (1 - abar_t). The score of a
// noised distribution scales like 1/s_t and its features live at z = O(1),
// so one modest basis serves every noise level. Linear in the parameters:
// the least-squares optimum is computable in closed form. 1D only.
struct RbfArchitecture {
    Vec z_centers;
    double bandwidth = 0.3;
    double data_variance_hint = 1.0;
    // constant and linear features alongside the gaussians: the score of any
    // noised mixture is asymptotically linear in z, so these carry the
    // far-field exactly and the bumps only shape the interior
    bool include_affine = true;

    std::size_t n_centers() const { return z_centers.size(); }
    std::size_t n_features() const {
        return z_centers.size() + (include_affine ? 2 : 0);
    }
};

// Two hidden layers with tanh activations; the time enters as concatenated
// scalar features (t/T, sqrt(abar_t), sqrt(1-abar_t)). Any dimension.
struct MlpArchitecture {
    std::size_t dim = 1;
    std::size_t width = 64;

    static constexpr std::size_t time_features = 3;
    std::size_t n_inputs() const { return dim + time_features; }
    std::size_t n_params() const {
        const std::size_t n0 = n_inputs(), h = width, d = dim;
        return h * n0 + h + h * h + h + d * h + d;
    }
};

// Parametric score model S_theta(x, t). Evaluation is deterministic in
// (theta, x, t); gradients with respect to theta are analytic (the mlp path
// is hand-written reverse mode, permanently guarded by finite-difference
// checks in the test suite).
class ScoreModel {
public:
    static ScoreModel make_rbf(RbfArchitecture arch, const NoiseSchedule& schedule) {
        ScoreModel m;
        m.kind_ = ModelKind::rbf;
        m.rbf_ = std::move(arch);
        m.init_schedule_tables(schedule);
        m.theta_.assign(m.rbf_.n_features() * m.n_blocks(), 0.0);
        return m;
    }

    static ScoreModel make_mlp(MlpArchitecture arch, const NoiseSchedule& schedule,
                               std::uint64_t seed) {
        ScoreModel m;
        m.kind_ = ModelKind::mlp;
        m.mlp_ = arch;
        m.init_schedule_tables(schedule);
        m.theta_.resize(arch.n_params());
        const CounterRng rng(seed);
        const std::size_t n0 = arch.n_inputs(), h = arch.width, d = arch.dim;
        std::size_t p = 0;
        auto fill = [&](std::size_t rows, std::size_t cols, double scale) {
            for (std::size_t i = 0; i < rows * cols; ++i, ++p)
                m.theta_[p] = scale * rng.normal(0x51CEULL ^ p, p, 7);
        };
        fill(h, n0, 1.0 / std::sqrt(double(n0)));
        for (std::size_t i = 0; i < h; ++i, ++p) m.theta_[p] = 0.0;
        fill(h, h, 1.0 / std::sqrt(double(h)));
        for (std::size_t i = 0; i < h; ++i, ++p) m.theta_[p] = 0.0;
        fill(d, h, 1.0 / std::sqrt(double(h)));
        for (std::size_t i = 0; i < d; ++i, ++p) m.theta_[p] = 0.0;
        return m;
    }

    ModelKind kind() const { return kind_; }
    std::size_t dim() const { return kind_ == ModelKind::rbf ? 1 : mlp_.dim; }
    std::size_t n_params() const { return theta_.size(); }
    Vec& parameters() { return theta_; }
    const Vec& parameters() const { return theta_; }
    const RbfArchitecture& rbf() const { return rbf_; }
    const MlpArchitecture& mlp() const { return mlp_; }
    const Vec& node_times() const { return node_times_; }

    // Scratch for allocation-free evaluation; one per thread.
    struct Workspace {
        Vec a0, z1, a1, z2, a2, phi;
    };

    void eval(std::span<const double> x, double t, std::span<double> out,
              Workspace& ws) const {
        check_time(t);
        if (kind_ == ModelKind::rbf) {
            eval_rbf(x[0], t, out, ws);
        } else {
            forward_mlp(x, t, ws);
            const std::size_t d = mlp_.dim, h = mlp_.width;
            const std::size_t off = offset_w3();
            for (std::size_t k = 0; k < d; ++k) {
                double v = theta_[off + d * h + k];  // b3
                for (std::size_t j = 0; j < h; ++j)
                    v += theta_[off + k * h + j] * ws.a2[j];
                out[k] = v;
            }
        }
    }

    double eval1(double x, double t, Workspace& ws) const {
        double s = 0.0;
        eval(std::span<const double>(&x, 1), t, std::span<double>(&s, 1), ws);
        return s;
    }

    // grad += d(cot . S_theta(x,t)) / d theta
    void accumulate_param_grad(std::span<const double> x, double t,
                               std::span<const double> cot, std::span<double> grad,
                               Workspace& ws) const {
        check_time(t);
        if (kind_ == ModelKind::rbf) {
            const auto [s0, s1, w] = bracket(t);
            accumulate_rbf_block(x[0], s0, (1.0 - w) * cot[0], grad, ws);
            if (w > 0.0 && s1 != s0)
                accumulate_rbf_block(x[0], s1, w * cot[0], grad, ws);
        } else {
            forward_mlp(x, t, ws);
            backward_mlp(cot, grad, ws);
        }
    }

    // rbf feature row for the least-squares path: S = (phi . theta_block).
    // Features carry the conditional-score scale 1/(s_t sqrt(1-abar_s)), so
    // the optimal coefficients stay O(1) at every noise level (the epsilon
    // parameterization, absorbed into the basis).
    void rbf_features(double x, std::size_t block, std::span<double> phi) const {
        const double s_t = node_scale_[block + 1];
        const double out = output_scale_[block + 1];
        const double z = x / s_t;
        std::size_t c0 = 0;
        if (rbf_.include_affine) {
            phi[0] = out;
            phi[1] = z * out;
            c0 = 2;
        }
        for (std::size_t c = 0; c < rbf_.n_centers(); ++c)
            phi[c0 + c] =
                std::exp(-0.5 * sqr((z - rbf_.z_centers[c]) / rbf_.bandwidth)) * out;
    }

    // schedule node s -> parameter block (node 0 carries no block: the
    // zero-noise node has no conditional target)
    std::size_t block_of_node(std::size_t s) const {
        require(s >= 1 && s <= n_blocks(), "score model: node out of range");
        return s - 1;
    }
    std::size_t n_blocks() const { return node_times_.size() - 1; }

    std::span<double> rbf_block(std::size_t block) {
        return {theta_.data() + block * rbf_.n_features(), rbf_.n_features()};
    }

private:
    void init_schedule_tables(const NoiseSchedule& schedule) {
        const TimeGrid& g = schedule.grid();
        node_times_ = g.nodes();
        node_scale_.resize(g.n_nodes());
        output_scale_.resize(g.n_nodes());
        for (std::size_t s = 0; s < g.n_nodes(); ++s) {
            const double ab = schedule.alpha_bar(s);
            node_scale_[s] =
                std::sqrt(ab * rbf_.data_variance_hint + (1.0 - ab));
            output_scale_[s] =
                1.0 / (node_scale_[s] * std::sqrt(std::max(1.0 - ab, 1e-300)));
        }
        t_lo_ = g.t_start();
        t_hi_ = g.t_end();
        // mlp time features
        abar_nodes_.resize(g.n_nodes());
        for (std::size_t s = 0; s < g.n_nodes(); ++s)
            abar_nodes_[s] = schedule.alpha_bar(s);
    }

    void check_time(double t) const {
        require(t >= t_lo_ - 1e-12 && t <= t_hi_ + 1e-12,
                "score model: t outside the schedule range");
    }

    // bracketing trained nodes (clamped to [1, n]) and interpolation weight
    struct Bracket {
        std::size_t s0, s1;
        double w;
    };
    Bracket bracket(double t) const {
        const std::size_t n = node_times_.size() - 1;
        if (t <= node_times_[1]) return {1, 1, 0.0};
        if (t >= node_times_[n]) return {n, n, 0.0};
        std::size_t s = 1;
        while (s + 1 <= n && node_times_[s + 1] <= t) ++s;
        if (node_times_[s] == t || s == n) return {s, s, 0.0};
        const double w = (t - node_times_[s]) / (node_times_[s + 1] - node_times_[s]);
        return {s, s + 1, w};
    }

    void eval_rbf(double x, double t, std::span<double> out, Workspace& ws) const {
        const auto [s0, s1, w] = bracket(t);
        const std::size_t k = rbf_.n_features();
        ws.phi.resize(k);
        auto block_value = [&](std::size_t s) {
            const std::size_t b = block_of_node(s);
            rbf_features(x, b, ws.phi);
            double v = 0.0;
            for (std::size_t c = 0; c < k; ++c) v += theta_[b * k + c] * ws.phi[c];
            return v;
        };
        double v = (1.0 - w) * block_value(s0);
        if (w > 0.0 && s1 != s0) v += w * block_value(s1);
        out[0] = v;
    }

    void accumulate_rbf_block(double x, std::size_t s, double cot,
                              std::span<double> grad, Workspace& ws) const {
        const std::size_t b = block_of_node(s);
        const std::size_t k = rbf_.n_features();
        ws.phi.resize(k);
        rbf_features(x, b, ws.phi);
        for (std::size_t c = 0; c < k; ++c) grad[b * k + c] += cot * ws.phi[c];
    }

    std::size_t offset_w2() const {
        return mlp_.width * mlp_.n_inputs() + mlp_.width;
    }
    std::size_t offset_w3() const {
        return offset_w2() + mlp_.width * mlp_.width + mlp_.width;
    }

    double time_feature(double t, int which) const {
        // abar interpolated linearly between nodes for feature purposes
        const std::size_t n = node_times_.size() - 1;
        std::size_t s = 0;
        while (s + 1 < n && node_times_[s + 1] <= t) ++s;
        const double w = std::clamp(
            (t - node_times_[s]) / (node_times_[s + 1] - node_times_[s]), 0.0, 1.0);
        const double ab = abar_nodes_[s] * (1.0 - w) + abar_nodes_[s + 1] * w;
        switch (which) {
            case 0: return (t - t_lo_) / (t_hi_ - t_lo_);
            case 1: return std::sqrt(std::max(0.0, ab));
            default: return std::sqrt(std::max(0.0, 1.0 - ab));
        }
    }

    void forward_mlp(std::span<const double> x, double t, Workspace& ws) const {
        const std::size_t n0 = mlp_.n_inputs(), h = mlp_.width, d = mlp_.dim;
        ws.a0.resize(n0);
        ws.z1.resize(h);
        ws.a1.resize(h);
        ws.z2.resize(h);
        ws.a2.resize(h);
        for (std::size_t k = 0; k < d; ++k) ws.a0[k] = x[k];
        for (int f = 0; f < 3; ++f) ws.a0[d + f] = time_feature(t, f);
        const double* w1 = theta_.data();
        const double* b1 = w1 + h * n0;
        for (std::size_t i = 0; i < h; ++i) {
            double v = b1[i];
            for (std::size_t j = 0; j < n0; ++j) v += w1[i * n0 + j] * ws.a0[j];
            ws.z1[i] = v;
            ws.a1[i] = std::tanh(v);
        }
        const double* w2 = theta_.data() + offset_w2();
        const double* b2 = w2 + h * h;
        for (std::size_t i = 0; i < h; ++i) {
            double v = b2[i];
            for (std::size_t j = 0; j < h; ++j) v += w2[i * h + j] * ws.a1[j];
            ws.z2[i] = v;
            ws.a2[i] = std::tanh(v);
        }
    }

    void backward_mlp(std::span<const double> cot, std::span<double> grad,
                      Workspace& ws) const {
        const std::size_t n0 = mlp_.n_inputs(), h = mlp_.width, d = mlp_.dim;
        const std::size_t o3 = offset_w3(), o2 = offset_w2();
        // output layer
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t j = 0; j < h; ++j)
                grad[o3 + k * h + j] += cot[k] * ws.a2[j];
            grad[o3 + d * h + k] += cot[k];
        }
        Vec g2(h, 0.0);
        for (std::size_t j = 0; j < h; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < d; ++k) v += theta_[o3 + k * h + j] * cot[k];
            g2[j] = v * (1.0 - sqr(ws.a2[j]));
        }
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < h; ++j)
                grad[o2 + i * h + j] += g2[i] * ws.a1[j];
            grad[o2 + h * h + i] += g2[i];
        }
        Vec g1(h, 0.0);
        const double* w2 = theta_.data() + o2;
        for (std::size_t j = 0; j < h; ++j) {
            double v = 0.0;
            for (std::size_t i = 0; i < h; ++i) v += w2[i * h + j] * g2[i];
            g1[j] = v * (1.0 - sqr(ws.a1[j]));
        }
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < n0; ++j)
                grad[i * n0 + j] += g1[i] * ws.a0[j];
            grad[h * n0 + i] += g1[i];
        }
    }

    ModelKind kind_ = ModelKind::rbf;
    RbfArchitecture rbf_;
    MlpArchitecture mlp_;
    Vec theta_;
    Vec node_times_, node_scale_, output_scale_, abar_nodes_;
    double t_lo_ = 0.0, t_hi_ = 1.0;
};

}  // namespace difflab
