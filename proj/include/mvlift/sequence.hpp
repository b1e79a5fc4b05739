#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mvlift/errors.hpp"

namespace mvlift {

// T x J x 2 sequence stored as a T x 2J matrix; row t is
// [x_0, y_0, x_1, y_1, ...]. Coordinates are normalized image units.
struct Pose2DSequence {
    Eigen::MatrixXd data;

    Pose2DSequence() = default;
    explicit Pose2DSequence(Eigen::MatrixXd d) : data(std::move(d)) {
        if (data.cols() % 2 != 0)
            throw ArgumentError("Pose2DSequence: column count must be 2*J");
    }

    static Pose2DSequence zeros(int T, int J) {
        return Pose2DSequence(Eigen::MatrixXd::Zero(T, 2 * J));
    }

    int frame_count() const { return static_cast<int>(data.rows()); }
    int joint_count() const { return static_cast<int>(data.cols()) / 2; }

    double& x(int t, int j) { return data(t, 2 * j); }
    double& y(int t, int j) { return data(t, 2 * j + 1); }
    double x(int t, int j) const { return data(t, 2 * j); }
    double y(int t, int j) const { return data(t, 2 * j + 1); }

    Eigen::Vector2d point(int t, int j) const { return {x(t, j), y(t, j)}; }

    void validate(const std::string& what = "Pose2DSequence") const {
        if (data.rows() < 1 || data.cols() < 2)
            throw ArgumentError(what + ": empty sequence");
        if (!data.allFinite()) throw ArgumentError(what + ": non-finite values");
    }
};

// T x J x 3 world-coordinate sequence as a T x 3J matrix.
struct Pose3DSequence {
    Eigen::MatrixXd data;
    int root_index = 0;

    Pose3DSequence() = default;
    Pose3DSequence(Eigen::MatrixXd d, int root) : data(std::move(d)), root_index(root) {
        if (data.cols() % 3 != 0)
            throw ArgumentError("Pose3DSequence: column count must be 3*J");
        if (root_index < 0 || root_index >= joint_count())
            throw ArgumentError("Pose3DSequence: root_index out of range");
    }

    static Pose3DSequence zeros(int T, int J, int root = 0) {
        return Pose3DSequence(Eigen::MatrixXd::Zero(T, 3 * J), root);
    }

    int frame_count() const { return static_cast<int>(data.rows()); }
    int joint_count() const { return static_cast<int>(data.cols()) / 3; }

    Eigen::Vector3d joint(int t, int j) const {
        return {data(t, 3 * j), data(t, 3 * j + 1), data(t, 3 * j + 2)};
    }
    void set_joint(int t, int j, const Eigen::Vector3d& p) {
        data(t, 3 * j) = p.x();
        data(t, 3 * j + 1) = p.y();
        data(t, 3 * j + 2) = p.z();
    }
    Eigen::Vector3d root(int t) const { return joint(t, root_index); }

    void validate(const std::string& what = "Pose3DSequence") const {
        if (data.rows() < 1 || data.cols() < 3)
            throw ArgumentError(what + ": empty sequence");
        if (!data.allFinite()) throw ArgumentError(what + ": non-finite values");
        if (root_index < 0 || root_index >= joint_count())
            throw ArgumentError(what + ": root_index out of range");
    }
};

// One line per (frame, joint), stored as a T x 3J matrix of (a, b, c)
// triples. Producers keep a^2 + b^2 = 1.
struct LineSet {
    Eigen::MatrixXd data;

    LineSet() = default;
    explicit LineSet(Eigen::MatrixXd d) : data(std::move(d)) {
        if (data.cols() % 3 != 0)
            throw ArgumentError("LineSet: column count must be 3*J");
    }

    static LineSet zeros(int T, int J) { return LineSet(Eigen::MatrixXd::Zero(T, 3 * J)); }

    int frame_count() const { return static_cast<int>(data.rows()); }
    int joint_count() const { return static_cast<int>(data.cols()) / 3; }

    double a(int t, int j) const { return data(t, 3 * j); }
    double b(int t, int j) const { return data(t, 3 * j + 1); }
    double c(int t, int j) const { return data(t, 3 * j + 2); }
    void set(int t, int j, double a_, double b_, double c_) {
        data(t, 3 * j) = a_;
        data(t, 3 * j + 1) = b_;
        data(t, 3 * j + 2) = c_;
    }
};

// Kinematic tree; the root joint is its own parent. bone_lengths is indexed
// by child joint (the root entry is unused).
struct SkeletonDef {
    int joint_count = 0;
    std::vector<int> parent;
    std::vector<double> bone_lengths;

    int root() const {
        for (int j = 0; j < joint_count; ++j)
            if (parent[j] == j) return j;
        throw ArgumentError("SkeletonDef: no root joint (self-parented)");
    }

    void validate() const {
        if (joint_count < 1) throw ArgumentError("SkeletonDef: need at least one joint");
        if (static_cast<int>(parent.size()) != joint_count ||
            static_cast<int>(bone_lengths.size()) != joint_count)
            throw ArgumentError("SkeletonDef: parent/bone_lengths size mismatch");
        int roots = 0;
        for (int j = 0; j < joint_count; ++j) {
            if (parent[j] < 0 || parent[j] >= joint_count)
                throw ArgumentError("SkeletonDef: parent index out of range");
            if (parent[j] == j) {
                ++roots;
                continue;
            }
            if (!(bone_lengths[j] > 0.0))
                throw ArgumentError("SkeletonDef: non-positive bone length");
            // Walk to the root; more than joint_count hops means a cycle.
            int hops = 0, k = j;
            while (parent[k] != k) {
                k = parent[k];
                if (++hops > joint_count)
                    throw ArgumentError("SkeletonDef: parent graph has a cycle");
            }
        }
        if (roots != 1) throw ArgumentError("SkeletonDef: exactly one root required");
    }

    // Children-before-parents never happens in this order: parents first.
    std::vector<int> topological_order() const {
        std::vector<int> depth(joint_count, 0);
        for (int j = 0; j < joint_count; ++j) {
            int k = j;
            while (parent[k] != k) {
                ++depth[j];
                k = parent[k];
            }
        }
        std::vector<int> order(joint_count);
        for (int j = 0; j < joint_count; ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return depth[a] < depth[b]; });
        return order;
    }
};

}  // namespace mvlift
