#pragma once

// Evaluation metrics. The scalar operations work in raw world / normalized
// image units; MetricReport stores everything scaled by 1000 (milli-units).

#include <cmath>
#include <string>
#include <vector>

#include "mvlift/errors.hpp"
#include "mvlift/geometry.hpp"
#include "mvlift/motion.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

namespace detail {

inline void check_same_shape(const Pose3DSequence& pred, const Pose3DSequence& gt,
                             const char* op) {
    if (pred.frame_count() != gt.frame_count() || pred.joint_count() != gt.joint_count())
        throw ArgumentError(std::string(op) + ": shape mismatch");
    if (pred.root_index != gt.root_index)
        throw ArgumentError(std::string(op) + ": root index mismatch");
}

}  // namespace detail

// Root-relative mean per-joint position error.
inline double mpjpe(const Pose3DSequence& pred, const Pose3DSequence& gt) {
    detail::check_same_shape(pred, gt, "mpjpe");
    const int T = pred.frame_count(), J = pred.joint_count();
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        Eigen::Vector3d rp = pred.root(t), rg = gt.root(t);
        for (int j = 0; j < J; ++j)
            acc += ((pred.joint(t, j) - rp) - (gt.joint(t, j) - rg)).norm();
    }
    return acc / (static_cast<double>(T) * J);
}

// MPJPE after per-frame similarity alignment of pred onto gt.
inline double pa_mpjpe(const Pose3DSequence& pred, const Pose3DSequence& gt) {
    detail::check_same_shape(pred, gt, "pa_mpjpe");
    const int T = pred.frame_count(), J = pred.joint_count();
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        Eigen::MatrixXd A(J, 3), B(J, 3);
        for (int j = 0; j < J; ++j) {
            A.row(j) = pred.joint(t, j).transpose();
            B.row(j) = gt.joint(t, j).transpose();
        }
        SimilarityTransform s = procrustes_align(A, B);
        for (int j = 0; j < J; ++j)
            acc += (s.apply(pred.joint(t, j)) - gt.joint(t, j)).norm();
    }
    return acc / (static_cast<double>(T) * J);
}

// Mean world-coordinate root distance.
inline double t_root(const Pose3DSequence& pred, const Pose3DSequence& gt) {
    detail::check_same_shape(pred, gt, "t_root");
    const int T = pred.frame_count();
    double acc = 0.0;
    for (int t = 0; t < T; ++t) acc += (pred.root(t) - gt.root(t)).norm();
    return acc / T;
}

// Mean 2D joint distance between the projection of pred3d and gt2d.
inline double j2d(const Pose3DSequence& pred3d, const Pose2DSequence& gt2d,
                  const CameraRig& rig, int view) {
    if (pred3d.frame_count() != gt2d.frame_count() ||
        pred3d.joint_count() != gt2d.joint_count())
        throw ArgumentError("j2d: shape mismatch");
    Pose2DSequence proj = project_sequence(pred3d, rig, view);
    const int T = proj.frame_count(), J = proj.joint_count();
    double acc = 0.0;
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j)
            acc += std::hypot(proj.x(t, j) - gt2d.x(t, j), proj.y(t, j) - gt2d.y(t, j));
    return acc / (static_cast<double>(T) * J);
}

// j2d after moving each sequence's per-frame 2D root to the origin.
inline double j2d_centered(const Pose3DSequence& pred3d, const Pose2DSequence& gt2d,
                           const CameraRig& rig, int view) {
    if (pred3d.frame_count() != gt2d.frame_count() ||
        pred3d.joint_count() != gt2d.joint_count())
        throw ArgumentError("j2d_centered: shape mismatch");
    Pose2DSequence proj = project_sequence(pred3d, rig, view);
    const int T = proj.frame_count(), J = proj.joint_count();
    const int r = pred3d.root_index;
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
        double prx = proj.x(t, r), pry = proj.y(t, r);
        double grx = gt2d.x(t, r), gry = gt2d.y(t, r);
        for (int j = 0; j < J; ++j)
            acc += std::hypot((proj.x(t, j) - prx) - (gt2d.x(t, j) - grx),
                              (proj.y(t, j) - pry) - (gt2d.y(t, j) - gry));
    }
    return acc / (static_cast<double>(T) * J);
}

struct SequenceMetrics {
    std::string id;
    double t_root = 0.0, mpjpe = 0.0, pa_mpjpe = 0.0;  // milli-units
    bool has_2d = false;
    double j2d = 0.0, j2d_centered = 0.0;  // normalized units x 1000
};

struct MetricReport {
    double t_root = 0.0, mpjpe = 0.0, pa_mpjpe = 0.0;
    double j2d = 0.0, j2d_centered = 0.0;
    int sequences_with_2d = 0;
    std::vector<SequenceMetrics> per_sequence;

    void validate() const {
        auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
        if (!nonneg(t_root) || !nonneg(mpjpe) || !nonneg(pa_mpjpe) || !nonneg(j2d) ||
            !nonneg(j2d_centered))
            throw ArgumentError("MetricReport: metrics must be finite and non-negative");
        if (pa_mpjpe > mpjpe + 1e-9)
            throw ArgumentError("MetricReport: pa_mpjpe exceeds mpjpe");
    }

    std::string summary_text() const {
        std::string out;
        out += "t_root " + format_g9(t_root) + "\n";
        out += "mpjpe " + format_g9(mpjpe) + "\n";
        out += "pa_mpjpe " + format_g9(pa_mpjpe) + "\n";
        out += "j2d " + format_g9(j2d) + "\n";
        out += "j2d_centered " + format_g9(j2d_centered) + "\n";
        out += "sequences " + std::to_string(per_sequence.size()) + "\n";
        return out;
    }

    std::string detail_text() const {
        std::string out = "id t_root mpjpe pa_mpjpe j2d j2d_centered\n";
        for (const auto& s : per_sequence) {
            out += s.id + " " + format_g9(s.t_root) + " " + format_g9(s.mpjpe) + " " +
                   format_g9(s.pa_mpjpe);
            if (s.has_2d)
                out += " " + format_g9(s.j2d) + " " + format_g9(s.j2d_centered);
            else
                out += " - -";
            out += "\n";
        }
        return out;
    }
};

// Aggregates per-sequence metrics (already in milli-units) into a report:
// plain means, with the 2D columns averaged over sequences that have them.
inline MetricReport aggregate_metrics(std::vector<SequenceMetrics> per_sequence) {
    MetricReport rep;
    rep.per_sequence = std::move(per_sequence);
    if (rep.per_sequence.empty()) return rep;
    const double n = static_cast<double>(rep.per_sequence.size());
    for (const auto& s : rep.per_sequence) {
        rep.t_root += s.t_root / n;
        rep.mpjpe += s.mpjpe / n;
        rep.pa_mpjpe += s.pa_mpjpe / n;
        if (s.has_2d) {
            rep.j2d += s.j2d;
            rep.j2d_centered += s.j2d_centered;
            ++rep.sequences_with_2d;
        }
    }
    if (rep.sequences_with_2d > 0) {
        rep.j2d /= rep.sequences_with_2d;
        rep.j2d_centered /= rep.sequences_with_2d;
    }
    return rep;
}

}  // namespace mvlift
