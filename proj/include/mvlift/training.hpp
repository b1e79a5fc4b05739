#pragma once

// Training loops for the line-conditioned (single-view) and cross-view
// denoisers: Adam with global-norm gradient clipping, data-parallel gradient
// evaluation across the batch, and a single serialized parameter update per
// step. Every random draw comes from a stream forked off the run seed by the
// global sample index, so results are identical for any thread count and
// resuming from a checkpoint continues the exact same sequence of batches.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvlift/checkpoint.hpp"
#include "mvlift/denoiser.hpp"
#include "mvlift/diffusion.hpp"
#include "mvlift/errors.hpp"
#include "mvlift/geometry.hpp"
#include "mvlift/parallel.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global-norm clip; <= 0 disables
};

struct Adam {
    AdamConfig cfg;
    ParamStore m, v;
    std::uint64_t t = 0;

    Adam(const ParamStore& params, const AdamConfig& cfg_) : cfg(cfg_) {
        m = params.zeros_like();
        v = params.zeros_like();
    }

    void step(ParamStore& params, ParamStore& grads) {
        if (cfg.grad_clip > 0.0) {
            double norm = std::sqrt(grads.squared_norm());
            if (norm > cfg.grad_clip) grads.scale(cfg.grad_clip / norm);
        }
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (const auto& name : params.names) {
            auto& p = params.at(name);
            auto& g = grads.at(name);
            auto& mm = m.at(name);
            auto& vv = v.at(name);
            mm = cfg.beta1 * mm + (1.0 - cfg.beta1) * g;
            vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * g.cwiseProduct(g);
            p.array() -=
                cfg.lr * (mm.array() / bc1) / ((vv.array() / bc2).sqrt() + cfg.eps);
        }
    }
};

struct TrainLog {
    std::vector<TrainingLossParts> steps;

    std::string to_text() const {
        std::string out = "step total recon line\n";
        for (std::size_t i = 0; i < steps.size(); ++i)
            out += std::to_string(i) + " " + format_g9(steps[i].total) + " " +
                   format_g9(steps[i].recon) + " " + format_g9(steps[i].line) + "\n";
        return out;
    }
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainLog log;
};

struct LcdTrainOptions {
    DenoiserConfig model;  // view_count must be 1; n_steps is the schedule length
    double beta_start = 1e-4;
    double beta_end = 0.02;
    TrainingConfig train;
    Rect epipole_bounds{-2.5, -1.5, 2.5, 1.5};
    double epipole_guard = 0.05;
};

namespace detail {

inline Pose2DSequence draw_training_window(const Pose2DSequence& full, int max_T, Rng& rng) {
    const int T = full.frame_count();
    if (T <= max_T) return full;
    int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(T - max_T + 1)));
    return Pose2DSequence(full.data.middleRows(start, max_T));
}

inline Pose2DSequence draw_noise(int T, int J, Rng& rng) {
    Pose2DSequence eps = Pose2DSequence::zeros(T, J);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 2 * J; ++c) eps.data(t, c) = rng.normal();
    return eps;
}

// d(total)/d(pred) for the Stage-1 objective: L1 reconstruction averaged over
// all coordinates plus lambda times the mean per-joint line distance.
inline Eigen::MatrixXd lcd_loss_grad(const Pose2DSequence& pred, const Pose2DSequence& x0,
                                     const LineSet& L, double lambda) {
    const int T = pred.frame_count(), J = pred.joint_count();
    const double recon_w = 1.0 / (static_cast<double>(T) * 2.0 * J);
    const double line_w = lambda / (static_cast<double>(T) * J);
    Eigen::MatrixXd dY(T, 2 * J);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            double dx = recon_w * sgn(pred.x(t, j) - x0.x(t, j));
            double dy = recon_w * sgn(pred.y(t, j) - x0.y(t, j));
            double g = L.a(t, j) * pred.x(t, j) + L.b(t, j) * pred.y(t, j) + L.c(t, j);
            dx += line_w * sgn(g) * L.a(t, j);
            dy += line_w * sgn(g) * L.b(t, j);
            dY(t, 2 * j) = dx;
            dY(t, 2 * j + 1) = dy;
        }
    }
    return dY;
}

inline void check_finite_loss(double total, std::uint64_t step, const TrainLog& log) {
    if (std::isfinite(total)) return;
    std::vector<double> trace;
    for (const auto& s : log.steps) trace.push_back(s.total);
    trace.push_back(total);
    throw OptimizationDivergedError(
        "training: non-finite loss at step " + std::to_string(step), trace);
}

}  // namespace detail

// `resume`, when non-null, supplies initial parameters, optimizer state and
// the absolute step counter; the continued run draws the same batches the
// uninterrupted run would have.
inline TrainResult train_lcdm(const std::vector<Pose2DSequence>& data,
                              const LcdTrainOptions& opts, const Checkpoint* resume = nullptr,
                              const std::function<void(std::uint64_t, const TrainingLossParts&)>&
                                  on_step = {}) {
    opts.model.validate();
    opts.train.validate();
    if (opts.model.view_count != 1)
        throw ArgumentError("train_lcdm: model config must have view_count == 1");
    if (data.empty()) throw EmptyDatasetError("train_lcdm: empty training set");
    for (const auto& seq : data) {
        seq.validate();
        if (seq.joint_count() != opts.model.joint_count)
            throw ArgumentError("train_lcdm: sequence joint count " +
                                std::to_string(seq.joint_count()) + " does not match model");
    }

    NoiseSchedule sched = make_schedule(opts.model.n_steps, opts.beta_start, opts.beta_end);
    Rng base(opts.train.seed);

    Checkpoint ckpt;
    ckpt.model_kind = "lcdm";
    ckpt.config = opts.model;
    ckpt.beta_start = opts.beta_start;
    ckpt.beta_end = opts.beta_end;
    AdamConfig acfg;
    acfg.lr = opts.train.learning_rate;
    if (resume) {
        if (resume->model_kind != "lcdm") throw CheckpointError("train_lcdm: checkpoint is not an lcdm model");
        ckpt.params = resume->params;
        ckpt.steps_done = resume->steps_done;
    } else {
        Rng init_rng = base.fork(0);
        ckpt.params = init_params(opts.model, init_rng);
    }
    Adam adam(ckpt.params, acfg);
    if (resume && resume->has_optimizer()) {
        adam.m = resume->opt_m;
        adam.v = resume->opt_v;
        adam.t = resume->opt_t;
    }

    const int B = opts.train.batch_size;
    std::vector<ParamStore> grad_slots(B, ckpt.params.zeros_like());
    std::vector<LcdTape> tapes(B);
    std::vector<TrainingLossParts> parts(B);
    ParamStore grad_sum = ckpt.params.zeros_like();
    TrainLog log;

    for (int local = 0; local < opts.train.steps; ++local) {
        std::uint64_t step = ckpt.steps_done + static_cast<std::uint64_t>(local);
        parallel_for(B, [&](std::size_t i) {
            Rng rng = base.fork(step * static_cast<std::uint64_t>(B) + i + 1);
            const Pose2DSequence& full = data[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::uint64_t>(data.size())))];
            Pose2DSequence x0 = detail::draw_training_window(full, opts.model.max_T, rng);
            Point2D e = sample_virtual_epipole(rng, opts.epipole_bounds, x0, opts.epipole_guard);
            LineSet L = lines_to_epipole(x0, e);
            int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.N)));
            Pose2DSequence eps = detail::draw_noise(x0.frame_count(), x0.joint_count(), rng);
            Pose2DSequence x_n = q_sample(x0, n, eps, sched);
            Pose2DSequence pred = lcd_forward_tape(opts.model, ckpt.params, x_n, n, L, tapes[i]);

            const double elems = static_cast<double>(x0.data.size());
            parts[i].recon = (pred.data - x0.data).cwiseAbs().sum() / elems;
            parts[i].line = line_matching_loss(pred, L) /
                            (static_cast<double>(x0.frame_count()) * x0.joint_count());
            parts[i].total = parts[i].recon + opts.train.lambda_line * parts[i].line;

            Eigen::MatrixXd dY = detail::lcd_loss_grad(pred, x0, L, opts.train.lambda_line);
            grad_slots[i].set_zero();
            lcd_backward(opts.model, ckpt.params, tapes[i], dY, grad_slots[i]);
        });

        grad_sum.set_zero();
        TrainingLossParts mean{0.0, 0.0, 0.0};
        for (int i = 0; i < B; ++i) {
            grad_sum.accumulate(grad_slots[i], 1.0 / B);
            mean.total += parts[i].total / B;
            mean.recon += parts[i].recon / B;
            mean.line += parts[i].line / B;
        }
        detail::check_finite_loss(mean.total, step, log);
        adam.step(ckpt.params, grad_sum);
        log.steps.push_back(mean);
        if (on_step) on_step(step, mean);
    }

    ckpt.steps_done += static_cast<std::uint64_t>(opts.train.steps);
    ckpt.opt_m = adam.m;
    ckpt.opt_v = adam.v;
    ckpt.opt_t = adam.t;
    return TrainResult{std::move(ckpt), std::move(log)};
}

struct MvTrainOptions {
    DenoiserConfig model;  // view_count >= 2
    double beta_start = 1e-4;
    double beta_end = 0.02;
    TrainingConfig train;  // lambda_line is unused by the cross-view objective
};

// One training item: the conditioning view followed by the generated views.
using MvGroup = std::vector<Pose2DSequence>;

inline TrainResult train_mvdm(const std::vector<MvGroup>& groups, const MvTrainOptions& opts,
                              const Checkpoint* resume = nullptr,
                              const std::function<void(std::uint64_t, const TrainingLossParts&)>&
                                  on_step = {}) {
    opts.model.validate();
    opts.train.validate();
    const int V = opts.model.view_count;
    if (V < 2) throw ArgumentError("train_mvdm: model config must have view_count >= 2");
    if (groups.empty()) throw EmptyDatasetError("train_mvdm: empty training set");
    for (const auto& g : groups) {
        if (static_cast<int>(g.size()) != V)
            throw ArgumentError("train_mvdm: group has " + std::to_string(g.size()) +
                                " views, expected " + std::to_string(V));
        for (const auto& seq : g) {
            seq.validate();
            if (seq.joint_count() != opts.model.joint_count ||
                seq.frame_count() != g[0].frame_count())
                throw ArgumentError("train_mvdm: inconsistent group shapes");
        }
    }

    NoiseSchedule sched = make_schedule(opts.model.n_steps, opts.beta_start, opts.beta_end);
    Rng base(opts.train.seed);

    Checkpoint ckpt;
    ckpt.model_kind = "mvdm";
    ckpt.config = opts.model;
    ckpt.beta_start = opts.beta_start;
    ckpt.beta_end = opts.beta_end;
    AdamConfig acfg;
    acfg.lr = opts.train.learning_rate;
    if (resume) {
        if (resume->model_kind != "mvdm") throw CheckpointError("train_mvdm: checkpoint is not an mvdm model");
        ckpt.params = resume->params;
        ckpt.steps_done = resume->steps_done;
    } else {
        Rng init_rng = base.fork(0);
        ckpt.params = init_params(opts.model, init_rng);
    }
    Adam adam(ckpt.params, acfg);
    if (resume && resume->has_optimizer()) {
        adam.m = resume->opt_m;
        adam.v = resume->opt_v;
        adam.t = resume->opt_t;
    }

    const int B = opts.train.batch_size;
    std::vector<ParamStore> grad_slots(B, ckpt.params.zeros_like());
    std::vector<MvTape> tapes(B);
    std::vector<TrainingLossParts> parts(B);
    ParamStore grad_sum = ckpt.params.zeros_like();
    TrainLog log;

    for (int local = 0; local < opts.train.steps; ++local) {
        std::uint64_t step = ckpt.steps_done + static_cast<std::uint64_t>(local);
        parallel_for(B, [&](std::size_t i) {
            Rng rng = base.fork(step * static_cast<std::uint64_t>(B) + i + 1);
            const MvGroup& group = groups[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::uint64_t>(groups.size())))];
            const int T = group[0].frame_count(), J = group[0].joint_count();
            int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.N)));
            std::vector<Pose2DSequence> x_n(V, Pose2DSequence::zeros(T, J));
            for (int v = 1; v < V; ++v) {
                Pose2DSequence eps = detail::draw_noise(T, J, rng);
                x_n[v] = q_sample(group[v], n, eps, sched);
            }
            std::vector<Pose2DSequence> pred =
                mv_forward_tape(opts.model, ckpt.params, x_n, n, group[0], tapes[i]);

            const double denom = static_cast<double>(V - 1) * T * 2.0 * J;
            double recon = 0.0;
            std::vector<Eigen::MatrixXd> dY;
            dY.reserve(V - 1);
            for (int v = 1; v < V; ++v) {
                recon += (pred[v - 1].data - group[v].data).cwiseAbs().sum();
                dY.push_back(
                    (pred[v - 1].data - group[v].data).unaryExpr([](double d) { return sgn(d); }) /
                    denom);
            }
            parts[i].recon = recon / denom;
            parts[i].line = 0.0;
            parts[i].total = parts[i].recon;

            grad_slots[i].set_zero();
            mv_backward(opts.model, ckpt.params, tapes[i], dY, grad_slots[i]);
        });

        grad_sum.set_zero();
        TrainingLossParts mean{0.0, 0.0, 0.0};
        for (int i = 0; i < B; ++i) {
            grad_sum.accumulate(grad_slots[i], 1.0 / B);
            mean.total += parts[i].total / B;
            mean.recon += parts[i].recon / B;
            mean.line += parts[i].line / B;
        }
        detail::check_finite_loss(mean.total, step, log);
        adam.step(ckpt.params, grad_sum);
        log.steps.push_back(mean);
        if (on_step) on_step(step, mean);
    }

    ckpt.steps_done += static_cast<std::uint64_t>(opts.train.steps);
    ckpt.opt_m = adam.m;
    ckpt.opt_v = adam.v;
    ckpt.opt_t = adam.t;
    return TrainResult{std::move(ckpt), std::move(log)};
}

}  // namespace mvlift
