#pragma once

// Stage 3: triangulate roughly consistent multi-view 2D sequences into 3D,
// refine with a sparse Gauss-Newton pass (reprojection + temporal smoothness
// + soft bone-length terms), optionally snap bone lengths exactly, and
// reproject into a strictly consistent four-view dataset.

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvlift/errors.hpp"
#include "mvlift/geometry.hpp"
#include "mvlift/motion.hpp"
#include "mvlift/mv_optimize.hpp"
#include "mvlift/parallel.hpp"
#include "mvlift/sequence.hpp"

namespace mvlift {

struct LiftOptions {
    double smoothness = 1e-2;   // weight on squared second temporal differences
    double bone_weight = 1e-1;  // weight on (length - median initial length)^2
    int max_iterations = 50;
    double tolerance = 1e-10;

    void validate() const {
        if (smoothness < 0.0 || bone_weight < 0.0)
            throw ArgumentError("LiftOptions: weights must be >= 0");
        if (max_iterations < 0 || !(tolerance > 0.0))
            throw ArgumentError("LiftOptions: bad iteration cap or tolerance");
    }
};

struct RecoverReport {
    Eigen::MatrixXd joint_residual_rms;  // T x J, RMS reprojection distance over views
    std::vector<double> cost_trace;      // accepted total squared cost per iteration
    bool converged = true;
    int iterations = 0;
};

struct RecoverResult {
    Pose3DSequence seq;
    RecoverReport report;
};

namespace detail {

struct LiftProblem {
    const std::vector<Pose2DSequence>& views;
    const CameraRig& rig;
    const LiftOptions& opts;
    const SkeletonDef* skeleton;
    int T, J, V;
    std::vector<double> bone_target;  // per child joint, median initial length

    int var(int t, int j) const { return 3 * (t * J + j); }

    // Total squared cost; +inf when any joint falls behind a camera.
    double cost(const Eigen::VectorXd& x) const {
        double c = 0.0;
        for (int v = 0; v < V; ++v) {
            const CameraPose& pose = rig.views[v];
            for (int t = 0; t < T; ++t) {
                for (int j = 0; j < J; ++j) {
                    Eigen::Vector3d p = x.segment<3>(var(t, j));
                    Eigen::Vector3d pc = pose.rotation * p + pose.translation;
                    if (!(pc.z() > 1e-9)) return std::numeric_limits<double>::infinity();
                    double u = rig.intrinsics.fx * pc.x() / pc.z() + rig.intrinsics.cx;
                    double w = rig.intrinsics.fy * pc.y() / pc.z() + rig.intrinsics.cy;
                    double du = u - views[v].x(t, j), dw = w - views[v].y(t, j);
                    c += du * du + dw * dw;
                }
            }
        }
        if (opts.smoothness > 0.0) {
            for (int t = 1; t + 1 < T; ++t)
                for (int j = 0; j < J; ++j)
                    c += opts.smoothness * (x.segment<3>(var(t + 1, j)) -
                                            2.0 * x.segment<3>(var(t, j)) +
                                            x.segment<3>(var(t - 1, j)))
                                               .squaredNorm();
        }
        if (skeleton && opts.bone_weight > 0.0) {
            for (int j = 0; j < J; ++j) {
                int p = skeleton->parent[j];
                if (p == j) continue;
                for (int t = 0; t < T; ++t) {
                    double len =
                        (x.segment<3>(var(t, j)) - x.segment<3>(var(t, p))).norm();
                    double d = len - bone_target[j];
                    c += opts.bone_weight * d * d;
                }
            }
        }
        return c;
    }

    // Gauss-Newton normal equations H delta = -g accumulated in place.
    void accumulate_normal_equations(const Eigen::VectorXd& x,
                                     std::vector<Eigen::Triplet<double>>& trips,
                                     Eigen::VectorXd& g) const {
        auto add_block = [&](int vi, int vj, const Eigen::Matrix3d& B) {
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    if (B(r, c) != 0.0) trips.emplace_back(vi + r, vj + c, B(r, c));
        };

        for (int v = 0; v < V; ++v) {
            const CameraPose& pose = rig.views[v];
            for (int t = 0; t < T; ++t) {
                for (int j = 0; j < J; ++j) {
                    int vi = var(t, j);
                    Eigen::Vector3d p = x.segment<3>(vi);
                    Eigen::Vector3d pc = pose.rotation * p + pose.translation;
                    double z = pc.z();
                    double u = rig.intrinsics.fx * pc.x() / z + rig.intrinsics.cx;
                    double w = rig.intrinsics.fy * pc.y() / z + rig.intrinsics.cy;
                    Eigen::Vector2d r(u - views[v].x(t, j), w - views[v].y(t, j));
                    Eigen::Matrix<double, 2, 3> Jc;
                    Jc << rig.intrinsics.fx / z, 0.0, -rig.intrinsics.fx * pc.x() / (z * z),
                        0.0, rig.intrinsics.fy / z, -rig.intrinsics.fy * pc.y() / (z * z);
                    Eigen::Matrix<double, 2, 3> Jp = Jc * pose.rotation;
                    add_block(vi, vi, Jp.transpose() * Jp);
                    g.segment<3>(vi) += Jp.transpose() * r;
                }
            }
        }
        if (opts.smoothness > 0.0) {
            const double sw = opts.smoothness;
            const double coef[3] = {1.0, -2.0, 1.0};
            for (int t = 1; t + 1 < T; ++t) {
                for (int j = 0; j < J; ++j) {
                    int vi[3] = {var(t - 1, j), var(t, j), var(t + 1, j)};
                    Eigen::Vector3d r = x.segment<3>(vi[2]) - 2.0 * x.segment<3>(vi[1]) +
                                        x.segment<3>(vi[0]);
                    for (int a = 0; a < 3; ++a) {
                        g.segment<3>(vi[a]) += sw * coef[a] * r;
                        for (int b = 0; b < 3; ++b)
                            add_block(vi[a], vi[b],
                                      sw * coef[a] * coef[b] * Eigen::Matrix3d::Identity());
                    }
                }
            }
        }
        if (skeleton && opts.bone_weight > 0.0) {
            const double bw = opts.bone_weight;
            for (int j = 0; j < J; ++j) {
                int p = skeleton->parent[j];
                if (p == j) continue;
                for (int t = 0; t < T; ++t) {
                    int vc = var(t, j), vp = var(t, p);
                    Eigen::Vector3d d = x.segment<3>(vc) - x.segment<3>(vp);
                    double len = d.norm();
                    if (len < 1e-12) continue;
                    Eigen::Vector3d u = d / len;
                    double r = len - bone_target[j];
                    Eigen::Matrix3d uu = bw * (u * u.transpose());
                    add_block(vc, vc, uu);
                    add_block(vp, vp, uu);
                    add_block(vc, vp, -uu);
                    add_block(vp, vc, -uu);
                    g.segment<3>(vc) += bw * r * u;
                    g.segment<3>(vp) -= bw * r * u;
                }
            }
        }
    }
};

}  // namespace detail

inline RecoverResult recover_3d(const std::vector<Pose2DSequence>& views, const CameraRig& rig,
                                const LiftOptions& opts, const SkeletonDef* skeleton = nullptr) {
    opts.validate();
    const int V = static_cast<int>(views.size());
    if (V < 2) throw InsufficientViewsError("recover_3d: need at least 2 views");
    if (rig.view_count() != V)
        throw ArgumentError("recover_3d: rig view count does not match sequence count");
    const int T = views[0].frame_count(), J = views[0].joint_count();
    for (const auto& s : views)
        if (s.frame_count() != T || s.joint_count() != J)
            throw ArgumentError("recover_3d: view shape mismatch");
    if (skeleton) {
        skeleton->validate();
        if (skeleton->joint_count != J)
            throw ArgumentError("recover_3d: skeleton joint count mismatch");
    }

    Eigen::VectorXd x(3 * T * J);
    parallel_for(static_cast<std::size_t>(T) * J, [&](std::size_t i) {
        int t = static_cast<int>(i) / J, j = static_cast<int>(i) % J;
        std::map<int, Point2D> obs;
        for (int v = 0; v < V; ++v) obs.emplace(v, Point2D(views[v].x(t, j), views[v].y(t, j)));
        x.segment<3>(3 * static_cast<int>(i)) = triangulate(obs, rig).point;
    });

    detail::LiftProblem prob{views, rig, opts, skeleton, T, J, V, {}};
    if (skeleton && opts.bone_weight > 0.0) {
        prob.bone_target.assign(J, 0.0);
        for (int j = 0; j < J; ++j) {
            int p = skeleton->parent[j];
            if (p == j) continue;
            std::vector<double> lens(T);
            for (int t = 0; t < T; ++t)
                lens[t] =
                    (x.segment<3>(prob.var(t, j)) - x.segment<3>(prob.var(t, p))).norm();
            std::nth_element(lens.begin(), lens.begin() + T / 2, lens.end());
            prob.bone_target[j] = lens[T / 2];
        }
    }

    RecoverReport report;
    double current = prob.cost(x);
    report.cost_trace.push_back(current);
    const int n_vars = 3 * T * J;
    Eigen::SparseMatrix<double> H(n_vars, n_vars);
    for (int it = 0; it < opts.max_iterations; ++it) {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(n_vars) * 12);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(n_vars);
        prob.accumulate_normal_equations(x, trips, g);
        for (int i = 0; i < n_vars; ++i) trips.emplace_back(i, i, 1e-12);
        H.setFromTriplets(trips.begin(), trips.end());

        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H);
        if (solver.info() != Eigen::Success)
            throw DegenerateGeometryError("recover_3d: singular normal equations");
        Eigen::VectorXd delta = solver.solve(-g);

        double alpha = 1.0;
        double next = prob.cost(x + delta);
        int halvings = 0;
        while (next > current && halvings < 25) {
            alpha *= 0.5;
            next = prob.cost(x + alpha * delta);
            ++halvings;
        }
        ++report.iterations;
        if (next > current) {  // no acceptable step; keep the best iterate
            report.converged = (alpha * delta.norm()) < opts.tolerance;
            break;
        }
        x += alpha * delta;
        current = next;
        report.cost_trace.push_back(current);
        if ((alpha * delta.norm()) < opts.tolerance) {
            report.converged = true;
            break;
        }
        if (it + 1 == opts.max_iterations) report.converged = false;
    }

    Eigen::MatrixXd data(T, 3 * J);
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j)
            data.block<1, 3>(t, 3 * j) = x.segment<3>(prob.var(t, j)).transpose();
    Pose3DSequence seq(std::move(data), skeleton ? skeleton->root() : 0);

    // Joints the optimizer could not pull in front of every camera get an
    // infinite residual instead of aborting the recovery; the caller decides
    // what to do with such sequences.
    report.joint_residual_rms = Eigen::MatrixXd::Zero(T, J);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            double acc = 0.0;
            try {
                for (int v = 0; v < V; ++v) {
                    Point2D p = project(seq.joint(t, j), rig, v);
                    acc += (p - Point2D(views[v].x(t, j), views[v].y(t, j))).squaredNorm();
                }
                report.joint_residual_rms(t, j) = std::sqrt(acc / V);
            } catch (const BehindCameraError&) {
                report.joint_residual_rms(t, j) = std::numeric_limits<double>::infinity();
            }
        }
    }
    return RecoverResult{std::move(seq), std::move(report)};
}

// Snap each child joint onto the sphere of its skeleton bone length around
// its (already adjusted) parent, root outward. Root positions are untouched.
inline Pose3DSequence enforce_bone_lengths(const Pose3DSequence& seq,
                                           const SkeletonDef& skeleton) {
    skeleton.validate();
    if (skeleton.joint_count != seq.joint_count())
        throw ArgumentError("enforce_bone_lengths: skeleton joint count mismatch");
    Pose3DSequence out = seq;
    out.root_index = skeleton.root();
    const int T = seq.frame_count();
    for (int t = 0; t < T; ++t) {
        for (int j : skeleton.topological_order()) {
            int p = skeleton.parent[j];
            if (p == j) continue;
            Eigen::Vector3d parent = out.joint(t, p);
            Eigen::Vector3d dir = seq.joint(t, j) - parent;
            double len = dir.norm();
            if (len < 1e-12)
                throw DegenerateGeometryError("enforce_bone_lengths: joint " +
                                              std::to_string(j) + " coincides with its parent at frame " +
                                              std::to_string(t));
            out.set_joint(t, j, parent + skeleton.bone_lengths[j] * dir / len);
        }
    }
    return out;
}

struct MVEntry {
    std::string id;
    std::vector<Pose2DSequence> views;
};

struct MVDataset {
    std::vector<MVEntry> entries;
    std::vector<std::pair<std::string, std::string>> skipped;  // (id, reason)
};

inline MVDataset build_mv_dataset(const std::vector<Pose3DSequence>& seqs,
                                  const std::vector<std::string>& ids, const CameraRig& rig4) {
    if (rig4.view_count() != 4)
        throw ArgumentError("build_mv_dataset: rig must have exactly 4 views");
    if (seqs.size() != ids.size())
        throw ArgumentError("build_mv_dataset: ids do not match sequences");

    MVDataset ds;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        std::vector<Pose2DSequence> views;
        try {
            for (int v = 0; v < 4; ++v) views.push_back(project_sequence(seqs[i], rig4, v));
        } catch (const BehindCameraError& e) {
            ds.skipped.emplace_back(ids[i], e.what());
            continue;
        }
        double resid = max_pairwise_epipolar_residual(views, rig4);
        if (!(resid < 1e-9))
            throw Error("build_mv_dataset: consistency invariant violated for '" + ids[i] +
                        "' (residual " + format_g9(resid) + ")");
        ds.entries.push_back(MVEntry{ids[i], std::move(views)});
    }
    if (ds.entries.empty())
        throw EmptyDatasetError("build_mv_dataset: every sequence was skipped");
    return ds;
}

}  // namespace mvlift
