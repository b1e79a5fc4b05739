#pragma once

// Stage 2: given a fixed observed view, jointly optimize the five unobserved
// 2D sequences with score distillation against the line-conditioned denoiser
// plus the epipolar multi-view consistency loss over all view pairs.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvlift/diffusion.hpp"
#include "mvlift/errors.hpp"
#include "mvlift/geometry.hpp"
#include "mvlift/parallel.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

struct MVOptState {
    std::vector<Pose2DSequence> phi;  // views 1..5, optimized in place
    Pose2DSequence input_seq;         // view 0, held fixed
    CameraRig rig;
    int iterations = 500;
    double step_size = 1e-2;
    double w_sds = 1.0;
    double w_mv = 10.0;
    int n_min = 0;  // 0: auto, round(0.02 N) clamped to [1, N]
    int n_max = 0;  // 0: auto, round(0.98 N)
    std::uint64_t seed = 0;

    void validate() const {
        if (rig.view_count() != 6)
            throw ArgumentError("MVOptState: rig must have exactly 6 views");
        for (int v = 1; v < 6; ++v) {
            double a0 = std::atan2(rig.views[v - 1].center().y(), rig.views[v - 1].center().x());
            double a1 = std::atan2(rig.views[v].center().y(), rig.views[v].center().x());
            double gap = std::remainder(a1 - a0, 2.0 * M_PI);
            if (std::abs(std::abs(gap) - M_PI / 3.0) > 1e-9)
                throw ArgumentError("MVOptState: rig views must be spaced 60 degrees apart");
        }
        if (static_cast<int>(phi.size()) != 5)
            throw ArgumentError("MVOptState: expected 5 unobserved-view sequences");
        for (const auto& s : phi)
            if (s.frame_count() != input_seq.frame_count() ||
                s.joint_count() != input_seq.joint_count())
                throw ArgumentError("MVOptState: sequence shape mismatch with the input view");
        if (w_sds < 0.0 || w_mv < 0.0) throw ArgumentError("MVOptState: weights must be >= 0");
        if (iterations < 0 || !(step_size > 0.0))
            throw ArgumentError("MVOptState: bad iteration count or step size");
    }
};

// One SDS step: perturb phi_k to noise level n, ask the denoiser for x0, and
// take omega(n) * (eps_hat - eps) as the gradient, never differentiating
// through the denoiser itself.
inline Eigen::MatrixXd sds_gradient(const Pose2DSequence& phi_k, const LineSet& L_k,
                                    const DenoiserFn& denoiser, const NoiseSchedule& sched,
                                    Rng& rng, int n_min, int n_max,
                                    const std::function<double(int)>& omega = {}) {
    if (n_min < 1 || n_min > n_max || n_max > sched.N)
        throw ArgumentError("sds_gradient: need 1 <= n_min <= n_max <= N");
    const int T = phi_k.frame_count(), J = phi_k.joint_count();
    int n = n_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_max - n_min + 1)));
    Pose2DSequence eps = Pose2DSequence::zeros(T, J);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 2 * J; ++c) eps.data(t, c) = rng.normal();
    Pose2DSequence x_n = q_sample(phi_k, n, eps, sched);
    Pose2DSequence x0_hat = denoiser(x_n, n, L_k);
    if (x0_hat.data.rows() != T || x0_hat.data.cols() != 2 * J)
        throw ArgumentError("sds_gradient: denoiser output shape mismatch");
    Pose2DSequence eps_hat = x0_to_eps(x0_hat, x_n, n, sched);
    double w = omega ? omega(n) : 1.0;
    return w * (eps_hat.data - eps.data);
}

namespace detail {

// Adds the directed epipolar term v->w (and its gradients when requested):
// sum over (t, j) of the perpendicular distance from the view-w joint to the
// epipolar line of the view-v joint.
inline double directed_epipolar_term(const Pose2DSequence& sv, const Pose2DSequence& sw,
                                     const Eigen::Matrix3d& F, Eigen::MatrixXd* grad_v,
                                     Eigen::MatrixXd* grad_w) {
    const int T = sv.frame_count(), J = sv.joint_count();
    double term = 0.0;
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            Eigen::Vector3d xv(sv.x(t, j), sv.y(t, j), 1.0);
            Eigen::Vector3d xw(sw.x(t, j), sw.y(t, j), 1.0);
            Eigen::Vector3d u = F * xv;
            double rho = std::hypot(u.x(), u.y());
            if (rho <= 1e-12)
                throw DegenerateGeometryError(
                    "multiview_consistency_loss: joint (" + std::to_string(t) + ", " +
                    std::to_string(j) + ") sits on the epipole");
            double g = u.dot(xw) / rho;
            term += std::abs(g);
            // Subgradient 0 near the kink: residuals at rounding-noise scale
            // would otherwise contribute O(1) sign noise and destroy the
            // zero-gradient fixpoint at exactly consistent inputs.
            double s = std::abs(g) < 1e-12 ? 0.0 : sgn(g);
            if (s == 0.0) continue;
            if (grad_w) {
                (*grad_w)(t, 2 * j) += s * u.x() / rho;
                (*grad_w)(t, 2 * j + 1) += s * u.y() / rho;
            }
            if (grad_v) {
                Eigen::Vector3d dg_du = xw / rho;
                dg_du.x() -= u.dot(xw) * u.x() / (rho * rho * rho);
                dg_du.y() -= u.dot(xw) * u.y() / (rho * rho * rho);
                Eigen::Vector3d dg_dxv = F.transpose() * dg_du;
                (*grad_v)(t, 2 * j) += s * dg_dxv.x();
                (*grad_v)(t, 2 * j + 1) += s * dg_dxv.y();
            }
        }
    }
    return term;
}

}  // namespace detail

// Mean directed epipolar residual over all ordered view pairs: with M
// unordered pairs the normalizer is 2M directed terms. When `grads` is given
// it receives d(loss)/d(sequence) for every view, one T x 2J matrix each.
inline double multiview_consistency_loss(const std::vector<Pose2DSequence>& seqs,
                                         const CameraRig& rig,
                                         std::vector<Eigen::MatrixXd>* grads = nullptr) {
    const int V = static_cast<int>(seqs.size());
    if (V < 2) throw ArgumentError("multiview_consistency_loss: need at least 2 views");
    if (rig.view_count() != V)
        throw ArgumentError("multiview_consistency_loss: rig has " +
                            std::to_string(rig.view_count()) + " views, got " +
                            std::to_string(V) + " sequences");
    const int T = seqs[0].frame_count(), J = seqs[0].joint_count();
    for (const auto& s : seqs)
        if (s.frame_count() != T || s.joint_count() != J)
            throw ArgumentError("multiview_consistency_loss: sequence shape mismatch");

    if (grads) grads->assign(V, Eigen::MatrixXd::Zero(T, 2 * J));
    const double M = V * (V - 1) / 2.0;
    double sum = 0.0;
    for (int v = 0; v < V; ++v) {
        for (int w = v + 1; w < V; ++w) {
            sum += detail::directed_epipolar_term(seqs[v], seqs[w], rig.fundamental_of(v, w),
                                                  grads ? &(*grads)[v] : nullptr,
                                                  grads ? &(*grads)[w] : nullptr);
            sum += detail::directed_epipolar_term(seqs[w], seqs[v], rig.fundamental_of(w, v),
                                                  grads ? &(*grads)[w] : nullptr,
                                                  grads ? &(*grads)[v] : nullptr);
        }
    }
    if (grads)
        for (auto& g : *grads) g /= 2.0 * M;
    return sum / (2.0 * M);
}

// Largest single point-to-epipolar-line distance over all ordered pairs; the
// strict-consistency check used by dataset construction.
inline double max_pairwise_epipolar_residual(const std::vector<Pose2DSequence>& seqs,
                                             const CameraRig& rig) {
    const int V = static_cast<int>(seqs.size());
    const int T = seqs[0].frame_count(), J = seqs[0].joint_count();
    double worst = 0.0;
    for (int v = 0; v < V; ++v) {
        for (int w = 0; w < V; ++w) {
            if (v == w) continue;
            const Eigen::Matrix3d& F = rig.fundamental_of(v, w);
            for (int t = 0; t < T; ++t) {
                for (int j = 0; j < J; ++j) {
                    Line2D l = epipolar_line(F, Point2D(seqs[v].x(t, j), seqs[v].y(t, j)));
                    worst = std::max(worst, std::abs(l.a * seqs[w].x(t, j) +
                                                     l.b * seqs[w].y(t, j) + l.c));
                }
            }
        }
    }
    return worst;
}

// Epipolar lines in view k of every input-view joint; the conditioning used
// both to initialize Stage 2 and inside its SDS term.
inline LineSet lines_from_input_view(const Pose2DSequence& input_seq, const CameraRig& rig,
                                     int view_k) {
    const int T = input_seq.frame_count(), J = input_seq.joint_count();
    const Eigen::Matrix3d& F = rig.fundamental_of(0, view_k);
    LineSet L = LineSet::zeros(T, J);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            Line2D l = epipolar_line(F, Point2D(input_seq.x(t, j), input_seq.y(t, j)));
            L.set(t, j, l.a, l.b, l.c);
        }
    }
    return L;
}

struct MVOptResult {
    std::vector<Pose2DSequence> phi;
    std::vector<double> consistency_trace;  // loss before each update, then final
    Eigen::MatrixXd sds_norms;              // iterations x 5

    std::string trace_to_text() const {
        std::string out = "iter consistency";
        for (int k = 0; k < sds_norms.cols(); ++k) out += " sds_norm_v" + std::to_string(k + 1);
        out += "\n";
        for (std::size_t i = 0; i < consistency_trace.size(); ++i) {
            out += std::to_string(i) + " " + format_g9(consistency_trace[i]);
            for (int k = 0; k < sds_norms.cols(); ++k)
                out += " " + (static_cast<Eigen::Index>(i) < sds_norms.rows()
                                  ? format_g9(sds_norms(i, k))
                                  : std::string("-"));
            out += "\n";
        }
        return out;
    }
};

inline MVOptResult optimize_multiview(const MVOptState& state, const DenoiserFn& denoiser,
                                      const NoiseSchedule& sched) {
    state.validate();
    int n_min = state.n_min > 0 ? state.n_min
                                : std::max(1, static_cast<int>(std::lround(0.02 * sched.N)));
    int n_max = state.n_max > 0 ? state.n_max
                                : std::min(sched.N, static_cast<int>(std::lround(0.98 * sched.N)));
    if (n_min < 1 || n_min > n_max || n_max > sched.N)
        throw ArgumentError("optimize_multiview: bad SDS noise range");

    const int K = static_cast<int>(state.phi.size());
    Rng base(state.seed);
    MVOptResult res;
    res.phi = state.phi;
    res.sds_norms = Eigen::MatrixXd::Zero(state.iterations, K);

    std::vector<Eigen::MatrixXd> sds(K);
    std::vector<Pose2DSequence> all(K + 1, state.input_seq);

    for (int it = 0; it < state.iterations; ++it) {
        all[0] = state.input_seq;
        for (int k = 0; k < K; ++k) all[k + 1] = res.phi[k];

        std::vector<Eigen::MatrixXd> mv_grads;
        double loss = multiview_consistency_loss(all, state.rig, &mv_grads);
        res.consistency_trace.push_back(loss);
        if (loss > 1e6)
            throw OptimizationDivergedError(
                "optimize_multiview: consistency loss diverged at iteration " +
                    std::to_string(it),
                res.consistency_trace);

        if (state.w_sds > 0.0) {
            parallel_for(static_cast<std::size_t>(K), [&](std::size_t k) {
                Rng rng = base.fork(static_cast<std::uint64_t>(it) * K + k + 1);
                LineSet L =
                    lines_from_input_view(state.input_seq, state.rig, static_cast<int>(k) + 1);
                sds[k] = sds_gradient(res.phi[k], L, denoiser, sched, rng, n_min, n_max);
            });
        } else {
            for (int k = 0; k < K; ++k)
                sds[k] = Eigen::MatrixXd::Zero(state.input_seq.frame_count(),
                                               2 * state.input_seq.joint_count());
        }

        for (int k = 0; k < K; ++k) {
            res.sds_norms(it, k) = sds[k].norm();
            res.phi[k].data -=
                state.step_size * (state.w_sds * sds[k] + state.w_mv * mv_grads[k + 1]);
        }
    }

    all[0] = state.input_seq;
    for (int k = 0; k < K; ++k) all[k + 1] = res.phi[k];
    res.consistency_trace.push_back(multiview_consistency_loss(all, state.rig));
    return res;
}

}  // namespace mvlift
