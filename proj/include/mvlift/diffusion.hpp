#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>

#include "mvlift/errors.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"

namespace mvlift {

// Subgradient convention for the L1 terms: sgn(0) = 0.
inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// beta/sigma are indexed by step n in [1, N]; alpha_bar additionally has the
// empty-product entry alpha_bar(0) = 1.
struct NoiseSchedule {
    int N = 0;
    Eigen::VectorXd beta;       // size N
    Eigen::VectorXd alpha_bar;  // size N+1
    Eigen::VectorXd sigma;      // size N

    double beta_at(int n) const { return beta(n - 1); }
    double sigma_at(int n) const { return sigma(n - 1); }
    double alpha_bar_at(int n) const { return alpha_bar(n); }
};

inline NoiseSchedule make_schedule(int N, double beta_start, double beta_end) {
    if (N < 1) throw ArgumentError("make_schedule: N must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ArgumentError("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.N = N;
    s.beta.resize(N);
    s.alpha_bar.resize(N + 1);
    s.sigma.resize(N);
    s.alpha_bar(0) = 1.0;
    for (int n = 1; n <= N; ++n) {
        double b = N == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * (n - 1) / (N - 1);
        s.beta(n - 1) = b;
        s.alpha_bar(n) = s.alpha_bar(n - 1) * (1.0 - b);
        s.sigma(n - 1) = std::sqrt(b);
    }
    return s;
}

// x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) eps
inline Pose2DSequence q_sample(const Pose2DSequence& x0, int n, const Pose2DSequence& eps,
                               const NoiseSchedule& sched) {
    if (n < 0 || n > sched.N)
        throw ArgumentError("q_sample: step " + std::to_string(n) + " outside [0, " +
                            std::to_string(sched.N) + "]");
    if (eps.data.rows() != x0.data.rows() || eps.data.cols() != x0.data.cols())
        throw ArgumentError("q_sample: eps shape mismatch");
    double ab = sched.alpha_bar_at(n);
    return Pose2DSequence(std::sqrt(ab) * x0.data + std::sqrt(1.0 - ab) * eps.data);
}

// eps_hat = (x_n - sqrt(alpha_bar_n) x0_hat) / sqrt(1 - alpha_bar_n)
inline Pose2DSequence x0_to_eps(const Pose2DSequence& x0_hat, const Pose2DSequence& x_n, int n,
                                const NoiseSchedule& sched) {
    if (n < 1 || n > sched.N)
        throw ArgumentError("x0_to_eps: step " + std::to_string(n) + " outside [1, " +
                            std::to_string(sched.N) + "]");
    if (x0_hat.data.rows() != x_n.data.rows() || x0_hat.data.cols() != x_n.data.cols())
        throw ArgumentError("x0_to_eps: shape mismatch");
    double ab = sched.alpha_bar_at(n);
    return Pose2DSequence((x_n.data - std::sqrt(ab) * x0_hat.data) / std::sqrt(1.0 - ab));
}

// Sum over (t, j) of |a x + b y + c|; with unit-normalized lines this is the
// total perpendicular distance.
inline double line_matching_loss(const Pose2DSequence& pred, const LineSet& L) {
    const int T = pred.frame_count(), J = pred.joint_count();
    if (L.frame_count() != T || L.joint_count() != J)
        throw ArgumentError("line_matching_loss: shape mismatch");
    double sum = 0.0;
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j)
            sum += std::abs(L.a(t, j) * pred.x(t, j) + L.b(t, j) * pred.y(t, j) + L.c(t, j));
    return sum;
}

struct TrainingConfig {
    double lambda_line = 0.1;
    int batch_size = 16;
    int steps = 2000;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda_line < 0.0) throw ArgumentError("TrainingConfig: lambda_line must be >= 0");
        if (batch_size < 1 || steps < 0) throw ArgumentError("TrainingConfig: bad batch/steps");
        if (!(learning_rate > 0.0)) throw ArgumentError("TrainingConfig: bad learning rate");
    }
};

struct TrainingLossParts {
    double total;
    double recon;
    double line;
};

using DenoiserFn =
    std::function<Pose2DSequence(const Pose2DSequence& x_n, int n, const LineSet& L)>;

// recon is the element-mean L1 between the prediction and x0; line is the
// per-joint mean perpendicular distance, so lambda_line keeps one meaning
// regardless of T and J.
inline TrainingLossParts training_loss(const Pose2DSequence& x0, int n, const LineSet& L,
                                       const DenoiserFn& denoiser, const Pose2DSequence& eps,
                                       const NoiseSchedule& sched, const TrainingConfig& cfg) {
    Pose2DSequence x_n = q_sample(x0, n, eps, sched);
    Pose2DSequence pred = denoiser(x_n, n, L);
    if (pred.data.rows() != x0.data.rows() || pred.data.cols() != x0.data.cols())
        throw ArgumentError("training_loss: denoiser output shape mismatch");
    const double elems = static_cast<double>(x0.data.rows()) * x0.data.cols();
    TrainingLossParts parts{};
    parts.recon = (pred.data - x0.data).cwiseAbs().sum() / elems;
    parts.line = line_matching_loss(pred, L) /
                 (static_cast<double>(x0.frame_count()) * x0.joint_count());
    parts.total = parts.recon + cfg.lambda_line * parts.line;
    return parts;
}

// Ancestral DDPM sampling with x0-parameterized denoiser. Posterior mean
//   mu = sqrt(alpha_bar_{n-1}) beta_n / (1 - alpha_bar_n) * x0_hat
//      + sqrt(alpha_n) (1 - alpha_bar_{n-1}) / (1 - alpha_bar_n) * x_n
// collapses to x0_hat exactly at n = 1.
// Denoiser for the cross-view model: takes all V noisy views (slot 0 is
// ignored; the clean conditioning view is bound inside the callable) and
// returns x0 predictions for views 1..V-1.
using MvDenoiserFn =
    std::function<std::vector<Pose2DSequence>(const std::vector<Pose2DSequence>& x_n_views, int n)>;

inline Pose2DSequence sample(const DenoiserFn& denoiser, const LineSet& L,
                             const NoiseSchedule& sched, Rng& rng) {
    const int T = L.frame_count(), J = L.joint_count();
    Pose2DSequence x = Pose2DSequence::zeros(T, J);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < 2 * J; ++c) x.data(t, c) = rng.normal();

    for (int n = sched.N; n >= 1; --n) {
        Pose2DSequence x0_hat = denoiser(x, n, L);
        if (x0_hat.data.rows() != T || x0_hat.data.cols() != 2 * J)
            throw ArgumentError("sample: denoiser output shape mismatch");
        double ab_n = sched.alpha_bar_at(n);
        double ab_prev = sched.alpha_bar_at(n - 1);
        double beta_n = sched.beta_at(n);
        double alpha_n = 1.0 - beta_n;
        double c0 = std::sqrt(ab_prev) * beta_n / (1.0 - ab_n);
        double c1 = std::sqrt(alpha_n) * (1.0 - ab_prev) / (1.0 - ab_n);
        x.data = c0 * x0_hat.data + c1 * x.data;
        if (n > 1) {
            double s = sched.sigma_at(n);
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < 2 * J; ++c) x.data(t, c) += s * rng.normal();
        }
    }
    return x;
}

// The same ancestral loop run jointly over views 1..V-1. Noise draws happen
// in view order, so the result is a pure function of (denoiser, seed).
inline std::vector<Pose2DSequence> mv_sample(const MvDenoiserFn& denoiser, int V, int T, int J,
                                             const NoiseSchedule& sched, Rng& rng) {
    if (V < 2) throw ArgumentError("mv_sample: need view_count >= 2");
    if (T < 1 || J < 1) throw ArgumentError("mv_sample: empty shape");
    std::vector<Pose2DSequence> x(V, Pose2DSequence::zeros(T, J));
    for (int v = 1; v < V; ++v)
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < 2 * J; ++c) x[v].data(t, c) = rng.normal();

    for (int n = sched.N; n >= 1; --n) {
        std::vector<Pose2DSequence> x0_hat = denoiser(x, n);
        if (static_cast<int>(x0_hat.size()) != V - 1)
            throw ArgumentError("mv_sample: denoiser must return V-1 predictions");
        double ab_n = sched.alpha_bar_at(n);
        double ab_prev = sched.alpha_bar_at(n - 1);
        double beta_n = sched.beta_at(n);
        double alpha_n = 1.0 - beta_n;
        double c0 = std::sqrt(ab_prev) * beta_n / (1.0 - ab_n);
        double c1 = std::sqrt(alpha_n) * (1.0 - ab_prev) / (1.0 - ab_n);
        for (int v = 1; v < V; ++v) {
            const Eigen::MatrixXd& pred = x0_hat[v - 1].data;
            if (pred.rows() != T || pred.cols() != 2 * J)
                throw ArgumentError("mv_sample: denoiser output shape mismatch");
            x[v].data = c0 * pred + c1 * x[v].data;
            if (n > 1) {
                double s = sched.sigma_at(n);
                for (int t = 0; t < T; ++t)
                    for (int c = 0; c < 2 * J; ++c) x[v].data(t, c) += s * rng.normal();
            }
        }
    }
    return std::vector<Pose2DSequence>(x.begin() + 1, x.end());
}

}  // namespace mvlift
