#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difflab/action.hpp"
#include "difflab/mixture.hpp"
#include "difflab/rng.hpp"
#include "difflab/schedule.hpp"
#include "difflab/score_model.hpp"

namespace difflab {

// Noised batch: x_s = sqrt(abar_s) x_d + sqrt(1 - abar_s) eps, each element
// exactly reproducible from (x_d, s, eps). s = 0 never appears (the
// conditional score is undefined at zero noise).
struct TrainingBatch {
    std::size_t dim = 1;
    std::vector<std::size_t> node;  // schedule node per element, in [1, n-1]
    Vec x_data;                     // flattened [element][dim]
    Vec eps;
    Vec x_noised;

    std::size_t size() const { return node.size(); }
};

// Uniform node draw over {1..n-1} with the D dt weight kept inside the loss:
// the unbiased estimator of the full sum over s.
inline TrainingBatch make_batch(std::span<const double> data, std::size_t dim,
                                const NoiseSchedule& schedule, std::size_t batch_size,
                                std::uint64_t step, std::uint64_t seed) {
    require(batch_size >= 1, "make_batch: empty batch");
    require(data.size() % dim == 0, "make_batch: data size not a multiple of dim");
    const std::size_t n_data = data.size() / dim;
    require(n_data >= 1, "make_batch: no data");
    const std::size_t n = schedule.grid().n_steps();
    require(n >= 2, "make_batch: schedule needs at least two steps");

    TrainingBatch b;
    b.dim = dim;
    b.node.resize(batch_size);
    b.x_data.resize(batch_size * dim);
    b.eps.resize(batch_size * dim);
    b.x_noised.resize(batch_size * dim);
    const CounterRng rng(seed);
    for (std::size_t e = 0; e < batch_size; ++e) {
        const std::uint64_t key = step * 0x9e3779b97f4a7c15ULL + e;
        const double u_pick = rng.uniform(key, 0, 0, 8);
        const double u_node = rng.uniform(key, 0, 1, 8);
        const auto pick = std::min(n_data - 1,
                                   static_cast<std::size_t>(u_pick * double(n_data)));
        const auto s =
            1 + std::min(n - 2, static_cast<std::size_t>(u_node * double(n - 1)));
        b.node[e] = s;
        const double ab = schedule.alpha_bar(s);
        for (std::size_t k = 0; k < dim; ++k) {
            const double xd = data[pick * dim + k];
            const double z = rng.normal(key, 1, k, 5);
            b.x_data[e * dim + k] = xd;
            b.eps[e * dim + k] = z;
            b.x_noised[e * dim + k] =
                std::sqrt(ab) * xd + std::sqrt(1.0 - ab) * z;
        }
    }
    return b;
}

struct LossValue {
    double loss = 0.0;
    Vec grad;  // d loss / d theta
};

// Per-node weight of the matching objective; the default (1/2) D(t_s) dt_s
// recovers the excess-action objective. Other weightings (the SMLD family)
// plug in here; no claims are attached to them.
using WeightFn = std::function<double(std::size_t s, const NoiseSchedule&)>;

inline double action_weight(std::size_t s, const NoiseSchedule& schedule) {
    const double t = schedule.grid().node(s);
    return 0.5 * schedule.diffusion(t) * schedule.grid().dt(s);
}

// Denoising score matching: (n-1) * mean over the batch of
// weight(s) || S_theta(x_s, t_s) + eps / sqrt(1 - abar_s) ||^2.
// The target is the conditional score of the noising kernel; gradients flow
// through the model only.
inline LossValue dsm_loss(const ScoreModel& model, const TrainingBatch& batch,
                          const NoiseSchedule& schedule, bool want_grad = true,
                          const WeightFn& weight = {}) {
    const std::size_t d = batch.dim;
    const std::size_t n = schedule.grid().n_steps();
    LossValue out;
    if (want_grad) out.grad.assign(model.n_params(), 0.0);
    ScoreModel::Workspace ws;
    Vec s_val(d), cot(d);
    const double scale = double(n - 1) / double(batch.size());
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const std::size_t s = batch.node[e];
        require(s >= 1, "dsm_loss: batch contains the zero-noise node");
        const double t = schedule.grid().node(s);
        const double ab = schedule.alpha_bar(s);
        const double w = weight ? weight(s, schedule) : action_weight(s, schedule);
        const std::span<const double> x(&batch.x_noised[e * d], d);
        model.eval(x, t, s_val, ws);
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double target = -batch.eps[e * d + k] / std::sqrt(1.0 - ab);
            const double diff = s_val[k] - target;
            sq += diff * diff;
            cot[k] = scale * w * 2.0 * diff;
        }
        out.loss += scale * w * sq;
        if (want_grad) model.accumulate_param_grad(x, t, cot, out.grad, ws);
    }
    return out;
}

// DDPM parameterization of the same objective:
// (n-1) * mean of beta_ts / (2 (1 - abar)) || eps - eps_theta ||^2 with
// eps_theta = -sqrt(1 - abar) S_theta. Requires D(t) = beta(t); the two
// losses are then the same expression algebraically.
inline LossValue ddpm_loss(const ScoreModel& model, const TrainingBatch& batch,
                           const NoiseSchedule& schedule, bool want_grad = true) {
    const std::size_t d = batch.dim;
    const std::size_t n = schedule.grid().n_steps();
    for (std::size_t s = 1; s < n; ++s) {
        const double t = schedule.grid().node(s);
        require(std::abs(schedule.diffusion(t) - schedule.beta(t)) <=
                    1e-12 * std::max(1.0, schedule.beta(t)),
                "ddpm_loss: schedule must have D(t) = beta(t)");
    }
    LossValue out;
    if (want_grad) out.grad.assign(model.n_params(), 0.0);
    ScoreModel::Workspace ws;
    Vec s_val(d), cot(d);
    const double scale = double(n - 1) / double(batch.size());
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const std::size_t s = batch.node[e];
        require(s >= 1, "ddpm_loss: batch contains the zero-noise node");
        const double t = schedule.grid().node(s);
        const double ab = schedule.alpha_bar(s);
        const double root = std::sqrt(1.0 - ab);
        const double beta_ts = schedule.beta(t) * schedule.grid().dt(s);
        const double w = beta_ts / (2.0 * (1.0 - ab));
        const std::span<const double> x(&batch.x_noised[e * d], d);
        model.eval(x, t, s_val, ws);
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double eps_theta = -root * s_val[k];
            const double diff = batch.eps[e * d + k] - eps_theta;
            sq += diff * diff;
            // d diff / d theta = root * dS/d theta
            cot[k] = scale * w * 2.0 * diff * root;
        }
        out.loss += scale * w * sq;
        if (want_grad) model.accumulate_param_grad(x, t, cot, out.grad, ws);
    }
    return out;
}

// Closed-form optimum of the dsm objective for the rbf model: independent
// per-node normal equations accumulated over a freshly sampled design set.
// Optional replacement for the conditional-score target: maps (element
// index, batch) to the regression target. Used to compare the denoising
// objective against explicit regression on the true marginal score.
using TargetFn = std::function<double(std::size_t, const TrainingBatch&)>;

inline ScoreModel fit_rbf_least_squares(const RbfArchitecture& arch,
                                        std::span<const double> data,
                                        const NoiseSchedule& schedule,
                                        std::size_t n_samples, std::uint64_t seed,
                                        double ridge = 1e-8,
                                        const TargetFn& target_override = {}) {
    ScoreModel model = ScoreModel::make_rbf(arch, schedule);
    const std::size_t k = arch.n_features();
    const std::size_t blocks = model.n_blocks();
    std::vector<Matrix> a(blocks, Matrix(k, Vec(k, 0.0)));
    Matrix b(blocks, Vec(k, 0.0));

    const TrainingBatch batch = make_batch(data, 1, schedule, n_samples, 0, seed);
    Vec phi(k);
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const std::size_t blk = model.block_of_node(batch.node[e]);
        const double ab = schedule.alpha_bar(batch.node[e]);
        const double target =
            target_override ? target_override(e, batch)
                            : -batch.eps[e] / std::sqrt(1.0 - ab);
        model.rbf_features(batch.x_noised[e], blk, phi);
        for (std::size_t i = 0; i < k; ++i) {
            b[blk][i] += phi[i] * target;
            for (std::size_t j = 0; j <= i; ++j) a[blk][i][j] += phi[i] * phi[j];
        }
    }
    // cholesky solve per block
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        Matrix& m = a[blk];
        double tr = 0.0;
        for (std::size_t i = 0; i < k; ++i) tr += m[i][i];
        const double lam = ridge * std::max(tr / double(k), 1e-30);
        for (std::size_t i = 0; i < k; ++i) {
            m[i][i] += lam;
            for (std::size_t j = i + 1; j < k; ++j) m[i][j] = m[j][i];
        }
        // in-place cholesky
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double s = m[i][j];
                for (std::size_t p = 0; p < j; ++p) s -= m[i][p] * m[j][p];
                if (i == j) {
                    require(s > 0.0, "fit_rbf_least_squares: gram matrix not positive");
                    m[i][i] = std::sqrt(s);
                } else {
                    m[i][j] = s / m[j][j];
                }
            }
        }
        Vec y(k);
        for (std::size_t i = 0; i < k; ++i) {
            double s = b[blk][i];
            for (std::size_t p = 0; p < i; ++p) s -= m[i][p] * y[p];
            y[i] = s / m[i][i];
        }
        const std::span<double> blk_theta = model.rbf_block(blk);
        for (std::size_t i = k; i-- > 0;) {
            double s = y[i];
            for (std::size_t p = i + 1; p < k; ++p) s -= m[p][i] * blk_theta[p];
            blk_theta[i] = s / m[i][i];
        }
    }
    return model;
}

struct OptimizerConfig {
    enum class Algo { adam, sgd_momentum };
    enum class LrSchedule { constant, cosine };
    Algo algo = Algo::adam;
    LrSchedule lr_schedule = LrSchedule::constant;
    double learning_rate = 3e-3;
    double momentum = 0.9;        // sgd only
    std::size_t batch_size = 256;
    std::size_t steps = 4000;
    std::uint64_t seed = 1;
    std::size_t eval_interval = 250;
    // averaging the parameter iterates over the final fraction of the run
    // strips the residual stochastic-gradient noise
    double average_tail_fraction = 0.0;

    double lr_at(std::size_t step) const {
        if (lr_schedule == LrSchedule::constant) return learning_rate;
        const double frac = double(step) / double(std::max<std::size_t>(steps, 1));
        return learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
    }
};

struct TrainRecord {
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<double> score_error;   // time-averaged L2(P) gap to the oracle
    std::optional<double> delta_action;  // excess action of the current model
};

struct TrainResult {
    std::vector<TrainRecord> log;
};

// Time-averaged L2(P) error sqrt( sum_s dt int P |S - score|^2 / sum_s dt )
// over the trained node range.
inline double model_score_error(const ScoreModel& model, const MixturePath& path,
                                const Vec& x_grid) {
    const TimeGrid& tg = path.grid;
    ScoreModel::Workspace ws;
    double num = 0.0, den = 0.0;
    Vec integrand(x_grid.size());
    for (std::size_t s = 1; s < tg.n_steps(); ++s) {
        const double t = tg.node(s);
        for (std::size_t i = 0; i < x_grid.size(); ++i) {
            const double x = x_grid[i];
            integrand[i] = path.at(s).pdf1(x) *
                           sqr(model.eval1(x, t, ws) - path.at(s).score1(x));
        }
        num += tg.dt(s) * trapezoid(integrand, x_grid[1] - x_grid[0]);
        den += tg.dt(s);
    }
    return std::sqrt(num / den);
}

inline double model_delta_action(const ScoreModel& model, const MixturePath& path,
                                 const NoiseSchedule& schedule, const Vec& x_grid) {
    ScoreModel::Workspace ws;
    return delta_action(
        [&model, &ws](double x, double t) {
            return const_cast<ScoreModel&>(model).eval1(x, t, ws);
        },
        path, schedule, x_grid, 1, path.grid.n_steps() - 1);
}

// Stochastic minimization of the dsm objective with fresh resampling every
// step. Metric log records the loss and, when an exact oracle is supplied,
// the true score error and excess action at eval intervals. Aborts when the
// loss blows past 1000x its initial value.
inline TrainResult train(ScoreModel& model, std::span<const double> data,
                         const NoiseSchedule& schedule, const OptimizerConfig& cfg,
                         const MixturePath* oracle_path = nullptr,
                         const Vec* oracle_grid = nullptr) {
    require(!data.empty(), "train: empty data set");
    TrainResult out;
    const std::size_t np = model.n_params();
    Vec m1(np, 0.0), m2(np, 0.0), velocity(np, 0.0);
    double initial_loss = 0.0;
    Vec theta_avg(np, 0.0);
    std::size_t avg_count = 0;
    const std::size_t avg_from =
        cfg.average_tail_fraction > 0.0
            ? static_cast<std::size_t>(double(cfg.steps) *
                                       (1.0 - cfg.average_tail_fraction))
            : cfg.steps;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const TrainingBatch batch = make_batch(data, model.dim(), schedule,
                                               cfg.batch_size, step + 1, cfg.seed);
        LossValue lv = dsm_loss(model, batch, schedule);
        if (step == 0) initial_loss = lv.loss;
        if (lv.loss > 1e3 * std::max(initial_loss, 1e-12))
            throw numeric_error("train: loss diverged at step " +
                                std::to_string(step) + " (loss " +
                                std::to_string(lv.loss) + ", initial " +
                                std::to_string(initial_loss) + ")");

        Vec& theta = model.parameters();
        const double lr = cfg.lr_at(step);
        if (cfg.algo == OptimizerConfig::Algo::adam) {
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double t = double(step + 1);
            for (std::size_t p = 0; p < np; ++p) {
                m1[p] = b1 * m1[p] + (1.0 - b1) * lv.grad[p];
                m2[p] = b2 * m2[p] + (1.0 - b2) * lv.grad[p] * lv.grad[p];
                const double mhat = m1[p] / (1.0 - std::pow(b1, t));
                const double vhat = m2[p] / (1.0 - std::pow(b2, t));
                theta[p] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        } else {
            for (std::size_t p = 0; p < np; ++p) {
                velocity[p] = cfg.momentum * velocity[p] - lr * lv.grad[p];
                theta[p] += velocity[p];
            }
        }

        if (step >= avg_from) {
            ++avg_count;
            for (std::size_t p = 0; p < np; ++p) theta_avg[p] += theta[p];
        }

        if (step % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
            TrainRecord rec;
            rec.step = step;
            rec.loss = lv.loss;
            if (oracle_path && oracle_grid) {
                rec.score_error = model_score_error(model, *oracle_path, *oracle_grid);
                rec.delta_action =
                    model_delta_action(model, *oracle_path, schedule, *oracle_grid);
            }
            out.log.push_back(rec);
        }
    }
    if (avg_count > 0)
        for (std::size_t p = 0; p < np; ++p)
            model.parameters()[p] = theta_avg[p] / double(avg_count);
    return out;
}

}  // namespace difflab
