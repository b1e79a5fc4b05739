#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvlift/errors.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

using Point2D = Eigen::Vector2d;
using Point3D = Eigen::Vector3d;

struct CameraIntrinsics {
    double fx = 1.2;
    double fy = 1.2;
    double cx = 0.0;
    double cy = 0.0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw ArgumentError("CameraIntrinsics: focal lengths must be positive");
    }

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d K;
        K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return K;
    }

    Eigen::Matrix3d inverse_matrix() const {
        Eigen::Matrix3d Ki;
        Ki << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
        return Ki;
    }
};

// World-to-camera: X_cam = rotation * X_world + translation.
struct CameraPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    void validate(double tol = 1e-9) const {
        Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
        if (err.cwiseAbs().maxCoeff() > tol || std::abs(rotation.determinant() - 1.0) > tol)
            throw ArgumentError("CameraPose: rotation is not a proper rotation matrix");
    }

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
};

// a*x + b*y + c = 0 with a^2 + b^2 = 1, so |a*x + b*y + c| is the
// perpendicular distance.
struct Line2D {
    double a, b, c;

    Line2D(double a_, double b_, double c_) {
        double n = std::hypot(a_, b_);
        if (!(n > 1e-12))
            throw DegenerateGeometryError("Line2D: zero direction (a, b)");
        a = a_ / n;
        b = b_ / n;
        c = c_ / n;
    }

    double distance(const Point2D& p) const { return std::abs(a * p.x() + b * p.y() + c); }
};

struct Rect {
    double x_min, y_min, x_max, y_max;

    void validate() const {
        if (!(x_min <= x_max) || !(y_min <= y_max))
            throw ArgumentError("Rect: empty bounds");
    }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d S;
    S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return S;
}

// Relative pose from v to w: X_w = R_rel * X_v + t_rel.
inline Eigen::Matrix3d essential_matrix(const CameraPose& pose_v, const CameraPose& pose_w) {
    Eigen::Matrix3d R_rel = pose_w.rotation * pose_v.rotation.transpose();
    Eigen::Vector3d t_rel = pose_w.translation - R_rel * pose_v.translation;
    return skew(t_rel) * R_rel;
}

inline Eigen::Matrix3d fundamental_matrix(const CameraIntrinsics& K, const Eigen::Matrix3d& E) {
    Eigen::Matrix3d Ki = K.inverse_matrix();
    return Ki.transpose() * E * Ki;
}

struct CameraRig {
    CameraIntrinsics intrinsics;
    std::vector<CameraPose> views;
    // Construction parameters, kept for serialization; derived matrices are
    // always recomputed.
    int n_views = 0;
    double angle_step_deg = 0.0;
    double radius = 0.0;
    double height = 0.0;

    std::map<std::pair<int, int>, Eigen::Matrix3d> essential;
    std::map<std::pair<int, int>, Eigen::Matrix3d> fundamental;

    int view_count() const { return static_cast<int>(views.size()); }

    const Eigen::Matrix3d& essential_of(int v, int w) const {
        auto it = essential.find({v, w});
        if (it == essential.end())
            throw ArgumentError("CameraRig: no essential matrix for view pair (" +
                                std::to_string(v) + ", " + std::to_string(w) + ")");
        return it->second;
    }

    const Eigen::Matrix3d& fundamental_of(int v, int w) const {
        auto it = fundamental.find({v, w});
        if (it == fundamental.end())
            throw ArgumentError("CameraRig: no fundamental matrix for view pair (" +
                                std::to_string(v) + ", " + std::to_string(w) + ")");
        return it->second;
    }
};

// Camera at `center` oriented so the optical axis passes through `target`,
// with image y aligned against world up (y down convention).
inline CameraPose look_at(const Point3D& center, const Point3D& target,
                          const Eigen::Vector3d& up = Eigen::Vector3d(0, 0, 1)) {
    Eigen::Vector3d z = target - center;
    double zn = z.norm();
    if (zn < 1e-12) throw DegenerateGeometryError("look_at: center coincides with target");
    z /= zn;
    Eigen::Vector3d x = z.cross(up);
    double xn = x.norm();
    if (xn < 1e-12) throw DegenerateGeometryError("look_at: view direction parallel to up");
    x /= xn;
    Eigen::Vector3d y = z.cross(x);
    CameraPose pose;
    pose.rotation.row(0) = x;
    pose.rotation.row(1) = y;
    pose.rotation.row(2) = z;
    pose.translation = -pose.rotation * center;
    return pose;
}

inline CameraRig build_circular_rig(int n_views, double angle_step_deg, double radius,
                                    double height, const CameraIntrinsics& intrinsics) {
    if (n_views < 1) throw ArgumentError("build_circular_rig: n_views must be >= 1");
    if (!(radius > 0.0)) throw ArgumentError("build_circular_rig: radius must be positive");
    intrinsics.validate();

    CameraRig rig;
    rig.intrinsics = intrinsics;
    rig.n_views = n_views;
    rig.angle_step_deg = angle_step_deg;
    rig.radius = radius;
    rig.height = height;
    rig.views.reserve(n_views);
    for (int k = 0; k < n_views; ++k) {
        double az = angle_step_deg * k * M_PI / 180.0;
        Point3D c(radius * std::cos(az), radius * std::sin(az), height);
        rig.views.push_back(look_at(c, Point3D::Zero()));
    }
    for (int v = 0; v < n_views; ++v) {
        for (int w = 0; w < n_views; ++w) {
            if (v == w) continue;
            Eigen::Matrix3d E = essential_matrix(rig.views[v], rig.views[w]);
            rig.essential[{v, w}] = E;
            rig.fundamental[{v, w}] = fundamental_matrix(intrinsics, E);
        }
    }
    return rig;
}

// l_w = F_{v,w} * (p, 1) for p in view v, normalized.
inline Line2D epipolar_line(const Eigen::Matrix3d& F, const Point2D& p) {
    Eigen::Vector3d l = F * Eigen::Vector3d(p.x(), p.y(), 1.0);
    if (std::hypot(l.x(), l.y()) <= 1e-12)
        throw DegenerateGeometryError("epipolar_line: degenerate line (point at the epipole)");
    return Line2D(l.x(), l.y(), l.z());
}

inline Point2D project(const CameraIntrinsics& K, const CameraPose& pose, const Point3D& p) {
    Eigen::Vector3d pc = pose.rotation * p + pose.translation;
    if (!(pc.z() > 0.0))
        throw BehindCameraError("project: non-positive depth " + format_g9(pc.z()));
    return Point2D(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
}

inline Point2D project(const Point3D& p, const CameraRig& rig, int view) {
    if (view < 0 || view >= rig.view_count())
        throw ArgumentError("project: view index out of range");
    return project(rig.intrinsics, rig.views[view], p);
}

// Inverse of project at a given camera-frame depth.
inline Point3D backproject(const Point2D& p, const CameraRig& rig, int view, double depth) {
    if (view < 0 || view >= rig.view_count())
        throw ArgumentError("backproject: view index out of range");
    if (!(depth > 0.0)) throw ArgumentError("backproject: depth must be positive");
    const CameraIntrinsics& K = rig.intrinsics;
    Eigen::Vector3d pc((p.x() - K.cx) / K.fx * depth, (p.y() - K.cy) / K.fy * depth, depth);
    const CameraPose& pose = rig.views[view];
    return pose.rotation.transpose() * (pc - pose.translation);
}

struct TriangulateResult {
    Point3D point;
    double residual;  // sum of per-view reprojection distances
};

namespace detail {

inline Eigen::Matrix<double, 3, 4> projection_matrix(const CameraIntrinsics& K,
                                                     const CameraPose& pose) {
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = pose.rotation;
    P.col(3) = pose.translation;
    return K.matrix() * P;
}

}  // namespace detail

// DLT followed by Gauss-Newton on reprojection error. Views where the
// estimate has non-positive depth are excluded from refinement.
inline TriangulateResult triangulate(const std::map<int, Point2D>& observations,
                                     const CameraRig& rig) {
    const int n = static_cast<int>(observations.size());
    if (n < 2) throw InsufficientViewsError("triangulate: need at least 2 views, got " +
                                            std::to_string(n));
    for (const auto& [v, p] : observations) {
        (void)p;
        if (v < 0 || v >= rig.view_count())
            throw ArgumentError("triangulate: view index out of range");
    }

    Eigen::MatrixXd A(2 * n, 4);
    int row = 0;
    for (const auto& [v, p] : observations) {
        Eigen::Matrix<double, 3, 4> P = detail::projection_matrix(rig.intrinsics, rig.views[v]);
        A.row(row++) = p.x() * P.row(2) - P.row(0);
        A.row(row++) = p.y() * P.row(2) - P.row(1);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) > 1e12 * sv(2))
        throw DegenerateGeometryError("triangulate: near-parallel rays (ill-conditioned system)");
    Eigen::Vector4d h = svd.matrixV().col(3);
    if (std::abs(h(3)) < 1e-12 * h.head<3>().norm())
        throw DegenerateGeometryError("triangulate: point at infinity");
    Point3D X = h.head<3>() / h(3);

    auto residuals = [&](const Point3D& pt, Eigen::VectorXd& r, Eigen::MatrixXd* J,
                         int& used) -> bool {
        r.resize(2 * n);
        if (J) J->resize(2 * n, 3);
        int i = 0;
        used = 0;
        for (const auto& [v, obs] : observations) {
            const CameraPose& pose = rig.views[v];
            Eigen::Vector3d pc = pose.rotation * pt + pose.translation;
            if (!(pc.z() > 1e-9)) {
                r(i) = r(i + 1) = 0.0;
                if (J) J->block<2, 3>(i, 0).setZero();
                i += 2;
                continue;
            }
            ++used;
            const CameraIntrinsics& K = rig.intrinsics;
            double iz = 1.0 / pc.z();
            r(i) = K.fx * pc.x() * iz + K.cx - obs.x();
            r(i + 1) = K.fy * pc.y() * iz + K.cy - obs.y();
            if (J) {
                J->row(i) = K.fx * iz * (pose.rotation.row(0) - pc.x() * iz * pose.rotation.row(2));
                J->row(i + 1) =
                    K.fy * iz * (pose.rotation.row(1) - pc.y() * iz * pose.rotation.row(2));
            }
            i += 2;
        }
        return used >= 2;
    };

    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    int used = 0;
    if (residuals(X, r, &J, used)) {
        for (int step = 0; step < 20; ++step) {
            Eigen::Vector3d delta =
                (J.transpose() * J).ldlt().solve(-(J.transpose() * r));
            if (!delta.allFinite()) break;
            double prev = r.squaredNorm();
            Point3D X_new = X + delta;
            Eigen::VectorXd r_new;
            Eigen::MatrixXd J_new;
            int used_new = 0;
            double scale = 1.0;
            bool ok = false;
            for (int half = 0; half < 8; ++half) {
                X_new = X + scale * delta;
                if (residuals(X_new, r_new, &J_new, used_new) && r_new.squaredNorm() <= prev) {
                    ok = true;
                    break;
                }
                scale *= 0.5;
            }
            if (!ok) break;
            X = X_new;
            r = r_new;
            J = J_new;
            if ((scale * delta).norm() < 1e-10) break;
        }
    }

    double total = 0.0;
    int i = 0;
    for (const auto& [v, obs] : observations) {
        (void)v;
        (void)obs;
        total += std::hypot(r(i), r(i + 1));
        i += 2;
    }
    return {X, total};
}

// b = scale * rotation * a + translation.
struct SimilarityTransform {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Point3D apply(const Point3D& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares similarity transform mapping point rows of A onto B
// (Umeyama's closed form). A, B are n x 3.
inline SimilarityTransform procrustes_align(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    if (A.rows() != B.rows() || A.cols() != 3 || B.cols() != 3)
        throw ArgumentError("procrustes_align: shapes must match and be n x 3");
    const int n = static_cast<int>(A.rows());
    if (n < 3) throw ArgumentError("procrustes_align: need at least 3 points");

    Eigen::RowVector3d ma = A.colwise().mean();
    Eigen::RowVector3d mb = B.colwise().mean();
    Eigen::MatrixXd Ac = A.rowwise() - ma;
    Eigen::MatrixXd Bc = B.rowwise() - mb;
    double var_a = Ac.squaredNorm() / n;
    if (var_a < 1e-24)
        throw DegenerateGeometryError("procrustes_align: all source points coincide");

    Eigen::Matrix3d C = (Bc.transpose() * Ac) / n;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(1) <= 1e-12 * sv(0))
        throw DegenerateGeometryError("procrustes_align: collinear points, rotation ambiguous");

    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2) = -1.0;

    SimilarityTransform T;
    T.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    T.scale = (sv.array() * d.array()).sum() / var_a;
    T.translation = mb.transpose() - T.scale * T.rotation * ma.transpose();
    return T;
}

// Uniform draw over `bounds`, rejecting points within `guard` of any joint
// of `seq` so the lines built from the epipole stay well conditioned.
inline Point2D sample_virtual_epipole(Rng& rng, const Rect& bounds, const Pose2DSequence& seq,
                                      double guard = 0.05, int max_attempts = 1000) {
    bounds.validate();
    const int T = seq.frame_count(), J = seq.joint_count();
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Point2D e(rng.uniform(bounds.x_min, bounds.x_max), rng.uniform(bounds.y_min, bounds.y_max));
        bool ok = true;
        for (int t = 0; t < T && ok; ++t)
            for (int j = 0; j < J; ++j)
                if (std::hypot(seq.x(t, j) - e.x(), seq.y(t, j) - e.y()) < guard) {
                    ok = false;
                    break;
                }
        if (ok) return e;
    }
    throw DegenerateGeometryError(
        "sample_virtual_epipole: no admissible point after " + std::to_string(max_attempts) +
        " attempts");
}

// For each (t, j): the normalized line through joint (t, j) and e. The
// coefficients are anchored at the joint, so the joint's own residual is
// exactly zero.
inline LineSet lines_to_epipole(const Pose2DSequence& seq, const Point2D& e) {
    const int T = seq.frame_count(), J = seq.joint_count();
    LineSet lines = LineSet::zeros(T, J);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            double dx = seq.x(t, j) - e.x();
            double dy = seq.y(t, j) - e.y();
            double n = std::hypot(dx, dy);
            if (n < 1e-9)
                throw DegenerateGeometryError("lines_to_epipole: joint (" + std::to_string(t) +
                                              ", " + std::to_string(j) + ") coincides with the epipole");
            double a = -dy / n, b = dx / n;
            lines.set(t, j, a, b, -(a * seq.x(t, j) + b * seq.y(t, j)));
        }
    }
    return lines;
}

inline std::string save_rig_text(const CameraRig& rig) {
    std::ostringstream out;
    out << "n_views = " << rig.n_views << "\n";
    out << "angle_step_deg = " << format_g9(rig.angle_step_deg) << "\n";
    out << "radius = " << format_g9(rig.radius) << "\n";
    out << "height = " << format_g9(rig.height) << "\n";
    out << "fx = " << format_g9(rig.intrinsics.fx) << "\n";
    out << "fy = " << format_g9(rig.intrinsics.fy) << "\n";
    out << "cx = " << format_g9(rig.intrinsics.cx) << "\n";
    out << "cy = " << format_g9(rig.intrinsics.cy) << "\n";
    return out.str();
}

inline CameraRig load_rig_text(const std::string& text, const std::string& where = "rig") {
    auto kv = parse_kv_text(text, where);
    std::map<std::string, double> m;
    for (auto& [k, v] : kv) {
        if (m.count(k)) throw SchemaError(where + ": duplicate key '" + k + "'");
        m[k] = parse_double(v, where + "." + k);
    }
    for (const char* key : {"n_views", "angle_step_deg", "radius", "height", "fx", "fy", "cx", "cy"})
        if (!m.count(key)) throw SchemaError(where + ": missing key '" + std::string(key) + "'");
    CameraIntrinsics K{m["fx"], m["fy"], m["cx"], m["cy"]};
    return build_circular_rig(static_cast<int>(m["n_views"]), m["angle_step_deg"], m["radius"],
                              m["height"], K);
}

inline void save_rig(const std::string& path, const CameraRig& rig) {
    write_text_file_atomic(path, save_rig_text(rig));
}

inline CameraRig load_rig(const std::string& path) {
    return load_rig_text(read_text_file(path), path);
}

}  // namespace mvlift
