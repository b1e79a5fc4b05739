#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <string>
#include <vector>

#include "mvlift/geometry.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"

namespace mvlift {

struct RootPathSpec {
    enum Kind { Line, Circle, FigureEight };
    Kind kind = Circle;
    double speed = 0.2;  // world units per second along the path
    double scale = 0.4;  // spatial extent of the path
};

struct SyntheticMotionSpec {
    SkeletonDef skeleton;
    // Row j: rest-pose bone direction of joint j in its parent's frame
    // (scaled by skeleton.bone_lengths[j] at generation; root row unused).
    Eigen::MatrixXd rest_directions;
    int frame_count = 64;
    double fps = 20.0;
    double amplitude = 0.5;  // radians, per-joint swing
    double freq_min = 0.3;   // Hz
    double freq_max = 1.2;
    RootPathSpec root_path;
    // Height of the root path plane. Keeping the figure off z = 0 keeps it
    // away from the lines joining opposite cameras of a level rig, where 2D
    // joints would coincide with epipoles and epipolar lines degenerate.
    double root_z = 0.3;

    void validate() const {
        skeleton.validate();
        if (frame_count < 2) throw ArgumentError("SyntheticMotionSpec: frame_count must be >= 2");
        if (amplitude < 0.0) throw ArgumentError("SyntheticMotionSpec: amplitude must be >= 0");
        if (!(fps > 0.0)) throw ArgumentError("SyntheticMotionSpec: fps must be positive");
        if (!(freq_min <= freq_max) || freq_min < 0.0)
            throw ArgumentError("SyntheticMotionSpec: bad frequency range");
        if (rest_directions.rows() != skeleton.joint_count || rest_directions.cols() != 3)
            throw ArgumentError("SyntheticMotionSpec: rest_directions must be J x 3");
        for (int j = 0; j < skeleton.joint_count; ++j)
            if (skeleton.parent[j] != j && rest_directions.row(j).norm() < 1e-9)
                throw ArgumentError("SyntheticMotionSpec: zero rest direction");
        if (!(root_path.scale > 0.0)) throw ArgumentError("SyntheticMotionSpec: path scale must be positive");
        if (root_path.speed < 0.0) throw ArgumentError("SyntheticMotionSpec: negative path speed");
    }
};

// Torso chain (root, spine, chest, head) plus two 2-segment arms off the
// chest. Unit-scale figure, z up.
inline SkeletonDef default_skeleton() {
    SkeletonDef s;
    s.joint_count = 8;
    s.parent = {0, 0, 1, 2, 2, 4, 2, 6};
    s.bone_lengths = {0.0, 0.25, 0.25, 0.20, 0.28, 0.26, 0.28, 0.26};
    return s;
}

inline Eigen::MatrixXd default_rest_directions() {
    Eigen::MatrixXd d(8, 3);
    d << 0, 0, 0,   // root
        0, 0, 1,    // spine
        0, 0, 1,    // chest
        0, 0, 1,    // head
        0, 1, 0,    // left upper arm
        0, 1, 0,    // left forearm
        0, -1, 0,   // right upper arm
        0, -1, 0;   // right forearm
    return d;
}

inline SyntheticMotionSpec default_motion_spec() {
    SyntheticMotionSpec spec;
    spec.skeleton = default_skeleton();
    spec.rest_directions = default_rest_directions();
    return spec;
}

namespace detail {

// Root position and heading at path parameter u (arc length).
inline void root_path_point(const RootPathSpec& path, double u, double phase,
                            Eigen::Vector3d& pos, double& heading) {
    switch (path.kind) {
        case RootPathSpec::Line: {
            double c = std::cos(phase), s = std::sin(phase);
            pos = Eigen::Vector3d(c * u, s * u, 0.0);
            heading = phase;
            break;
        }
        case RootPathSpec::Circle: {
            double beta = phase + u / path.scale;
            pos = Eigen::Vector3d(path.scale * std::cos(beta), path.scale * std::sin(beta), 0.0);
            heading = beta + M_PI / 2.0;
            break;
        }
        case RootPathSpec::FigureEight: {
            double v = phase + u / path.scale;
            pos = Eigen::Vector3d(path.scale * std::sin(v),
                                  path.scale * std::sin(v) * std::cos(v), 0.0);
            // d/dv of (sin v, sin v cos v) = (cos v, cos 2v); never both zero.
            heading = std::atan2(std::cos(2.0 * v), std::cos(v));
            break;
        }
    }
}

}  // namespace detail

// Forward kinematics with per-joint sinusoidal swing around a random fixed
// axis and the root following the configured path. Bone lengths are exact by
// construction (each frame rotates unit directions).
inline Pose3DSequence generate_synthetic_motion(const SyntheticMotionSpec& spec, Rng& rng) {
    spec.validate();
    const SkeletonDef& sk = spec.skeleton;
    const int J = sk.joint_count;
    const int T = spec.frame_count;
    const int root = sk.root();

    // All random draws happen up front in a fixed order.
    std::vector<Eigen::Vector3d> axis(J);
    std::vector<double> freq(J), phase(J);
    for (int j = 0; j < J; ++j) {
        Eigen::Vector3d a(rng.normal(), rng.normal(), rng.normal());
        while (a.norm() < 1e-6) a = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        axis[j] = a.normalized();
        freq[j] = rng.uniform(spec.freq_min, spec.freq_max);
        phase[j] = rng.uniform(0.0, 2.0 * M_PI);
    }
    double path_phase = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<int> order = sk.topological_order();
    Pose3DSequence out = Pose3DSequence::zeros(T, J, root);
    std::vector<Eigen::Matrix3d> R(J);
    std::vector<Eigen::Vector3d> p(J);
    for (int t = 0; t < T; ++t) {
        double time = t / spec.fps;
        double u = spec.root_path.speed * time;
        Eigen::Vector3d root_pos;
        double heading = 0.0;
        detail::root_path_point(spec.root_path, u, path_phase, root_pos, heading);
        root_pos.z() += spec.root_z;
        R[root] = Eigen::AngleAxisd(heading, Eigen::Vector3d::UnitZ()).toRotationMatrix();
        p[root] = root_pos;
        for (int j : order) {
            if (j == root) continue;
            double theta = spec.amplitude * std::sin(2.0 * M_PI * freq[j] * time + phase[j]);
            R[j] = R[sk.parent[j]] * Eigen::AngleAxisd(theta, axis[j]).toRotationMatrix();
            Eigen::Vector3d dir = spec.rest_directions.row(j).normalized();
            p[j] = p[sk.parent[j]] + R[j] * (dir * sk.bone_lengths[j]);
        }
        for (int j = 0; j < J; ++j) out.set_joint(t, j, p[j]);
    }
    return out;
}

inline Pose2DSequence project_sequence(const Pose3DSequence& seq, const CameraRig& rig, int view) {
    seq.validate();
    const int T = seq.frame_count(), J = seq.joint_count();
    Pose2DSequence out = Pose2DSequence::zeros(T, J);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            Point2D p;
            try {
                p = project(seq.joint(t, j), rig, view);
            } catch (const BehindCameraError& e) {
                throw BehindCameraError("project_sequence: frame " + std::to_string(t) +
                                        ", joint " + std::to_string(j) + ": " + e.what());
            }
            out.x(t, j) = p.x();
            out.y(t, j) = p.y();
        }
    }
    return out;
}

// Pixel coordinates [0, width] x [0, height] -> [-1, 1] per axis.
inline Pose2DSequence normalize(const Pose2DSequence& raw, double width, double height) {
    if (!(width > 0.0) || !(height > 0.0))
        throw ArgumentError("normalize: width and height must be positive");
    Pose2DSequence out = raw;
    const int T = raw.frame_count(), J = raw.joint_count();
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j) {
            out.x(t, j) = 2.0 * raw.x(t, j) / width - 1.0;
            out.y(t, j) = 2.0 * raw.y(t, j) / height - 1.0;
        }
    return out;
}

inline Pose2DSequence denormalize(const Pose2DSequence& seq, double width, double height) {
    if (!(width > 0.0) || !(height > 0.0))
        throw ArgumentError("denormalize: width and height must be positive");
    Pose2DSequence out = seq;
    const int T = seq.frame_count(), J = seq.joint_count();
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j) {
            out.x(t, j) = (seq.x(t, j) + 1.0) * width / 2.0;
            out.y(t, j) = (seq.y(t, j) + 1.0) * height / 2.0;
        }
    return out;
}

}  // namespace mvlift
