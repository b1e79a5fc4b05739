#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mvlift/lift3d.hpp"
#include "mvlift/metrics.hpp"
#include "mvlift/motion.hpp"

using namespace mvlift;

namespace {

CameraRig six_rig() { return build_circular_rig(6, 60.0, 3.0, 0.0, CameraIntrinsics{}); }
CameraRig four_rig() { return build_circular_rig(4, 90.0, 3.0, 0.0, CameraIntrinsics{}); }

Pose3DSequence random_motion(std::uint64_t seed, int frames = 16) {
    SyntheticMotionSpec spec = default_motion_spec();
    spec.frame_count = frames;
    Rng rng(seed);
    return generate_synthetic_motion(spec, rng);
}

std::vector<Pose2DSequence> exact_views(const Pose3DSequence& seq, const CameraRig& rig) {
    std::vector<Pose2DSequence> out;
    for (int v = 0; v < rig.view_count(); ++v) out.push_back(project_sequence(seq, rig, v));
    return out;
}

double max_joint_error(const Pose3DSequence& a, const Pose3DSequence& b) {
    double worst = 0.0;
    for (int t = 0; t < a.frame_count(); ++t)
        for (int j = 0; j < a.joint_count(); ++j)
            worst = std::max(worst, (a.joint(t, j) - b.joint(t, j)).norm());
    return worst;
}

}  // namespace

TEST_CASE("recover_3d inverts exact projections with regularizers off", "[lift3d]") {
    CameraRig rig = six_rig();
    Pose3DSequence gt = random_motion(3);
    auto views = exact_views(gt, rig);

    LiftOptions opts;
    opts.smoothness = 0.0;
    opts.bone_weight = 0.0;
    RecoverResult res = recover_3d(views, rig, opts);

    CHECK(max_joint_error(res.seq, gt) < 1e-6);
    CHECK(res.report.joint_residual_rms.maxCoeff() < 1e-6);
    CHECK(res.report.converged);
}

TEST_CASE("recover_3d on one point reduces to triangulation", "[lift3d]") {
    CameraRig rig = six_rig();
    Pose3DSequence gt(Eigen::MatrixXd::Zero(1, 3), 0);
    gt.data << 0.2, -0.1, 0.3;
    auto views = exact_views(gt, rig);

    LiftOptions opts;
    opts.smoothness = 0.0;
    opts.bone_weight = 0.0;
    RecoverResult res = recover_3d(views, rig, opts);

    std::map<int, Point2D> obs;
    for (int v = 0; v < 6; ++v) obs.emplace(v, Point2D(views[v].x(0, 0), views[v].y(0, 0)));
    Point3D tri = triangulate(obs, rig).point;
    CHECK((res.seq.joint(0, 0) - tri).norm() < 1e-9);
}

TEST_CASE("smoothness regularization helps under observation noise", "[lift3d]") {
    CameraRig rig = six_rig();
    SkeletonDef skel = default_skeleton();
    Pose3DSequence gt = random_motion(9, 24);
    auto views = exact_views(gt, rig);
    Rng noise(5);
    for (auto& v : views)
        for (int t = 0; t < v.frame_count(); ++t)
            for (int c = 0; c < 2 * v.joint_count(); ++c) v.data(t, c) += 1e-3 * noise.normal();

    LiftOptions plain;
    plain.smoothness = 0.0;
    plain.bone_weight = 0.0;
    LiftOptions reg;  // defaults: smoothness + bone terms on
    RecoverResult base = recover_3d(views, rig, plain);
    RecoverResult smooth = recover_3d(views, rig, reg, &skel);

    CHECK(mpjpe(smooth.seq, gt) < mpjpe(base.seq, gt));
}

TEST_CASE("recover_3d cost trace never increases", "[lift3d]") {
    CameraRig rig = six_rig();
    Pose3DSequence gt = random_motion(11, 10);
    auto views = exact_views(gt, rig);
    Rng noise(6);
    for (auto& v : views)
        for (int t = 0; t < v.frame_count(); ++t)
            for (int c = 0; c < 2 * v.joint_count(); ++c) v.data(t, c) += 5e-3 * noise.normal();

    SkeletonDef skel = default_skeleton();
    LiftOptions opts;
    RecoverResult res = recover_3d(views, rig, opts, &skel);
    for (std::size_t i = 1; i < res.report.cost_trace.size(); ++i)
        CHECK(res.report.cost_trace[i] <= res.report.cost_trace[i - 1] + 1e-15);
}

TEST_CASE("recover_3d validates inputs", "[lift3d]") {
    CameraRig rig = six_rig();
    auto views = exact_views(random_motion(1, 4), rig);
    LiftOptions opts;

    SECTION("too few views") {
        std::vector<Pose2DSequence> one(views.begin(), views.begin() + 1);
        CHECK_THROWS_AS(recover_3d(one, rig, opts), InsufficientViewsError);
    }
    SECTION("rig mismatch") {
        std::vector<Pose2DSequence> four(views.begin(), views.begin() + 4);
        CHECK_THROWS_AS(recover_3d(four, rig, opts), ArgumentError);
    }
    SECTION("negative weights") {
        opts.smoothness = -1.0;
        CHECK_THROWS_AS(recover_3d(views, rig, opts), ArgumentError);
    }
}

TEST_CASE("enforce_bone_lengths snaps lengths exactly and is idempotent", "[lift3d]") {
    SkeletonDef skel = default_skeleton();
    Pose3DSequence seq = random_motion(21, 8);
    // Corrupt joint positions away from the skeleton's bone lengths.
    Rng noise(2);
    for (int t = 0; t < seq.frame_count(); ++t)
        for (int j = 0; j < seq.joint_count(); ++j)
            seq.set_joint(t, j, seq.joint(t, j) + 0.03 * Eigen::Vector3d(noise.normal(),
                                                                          noise.normal(),
                                                                          noise.normal()));

    Pose3DSequence fixed = enforce_bone_lengths(seq, skel);
    for (int t = 0; t < fixed.frame_count(); ++t) {
        for (int j = 0; j < skel.joint_count; ++j) {
            if (skel.parent[j] == j) continue;
            double len = (fixed.joint(t, j) - fixed.joint(t, skel.parent[j])).norm();
            CHECK(std::abs(len - skel.bone_lengths[j]) < 1e-9);
        }
        CHECK((fixed.root(t) - seq.root(t)).norm() < 1e-12);
    }

    Pose3DSequence twice = enforce_bone_lengths(fixed, skel);
    CHECK(max_joint_error(twice, fixed) < 1e-12);
}

TEST_CASE("enforce_bone_lengths on an already-valid sequence is the identity", "[lift3d]") {
    SkeletonDef skel = default_skeleton();
    Pose3DSequence seq = random_motion(22, 6);  // built by FK, lengths exact
    Pose3DSequence fixed = enforce_bone_lengths(seq, skel);
    CHECK(max_joint_error(fixed, seq) < 1e-12);
}

TEST_CASE("enforce_bone_lengths rejects coincident parent-child joints", "[lift3d]") {
    SkeletonDef skel = default_skeleton();
    Pose3DSequence seq = random_motion(23, 2);
    seq.set_joint(0, 1, seq.joint(0, skel.parent[1]));
    CHECK_THROWS_AS(enforce_bone_lengths(seq, skel), DegenerateGeometryError);
}

TEST_CASE("build_mv_dataset produces strictly consistent four-view entries", "[lift3d]") {
    CameraRig rig4 = four_rig();
    std::vector<Pose3DSequence> seqs;
    std::vector<std::string> ids;
    for (int i = 0; i < 3; ++i) {
        seqs.push_back(random_motion(30 + i, 6));
        ids.push_back("seq" + std::to_string(i));
    }
    MVDataset ds = build_mv_dataset(seqs, ids, rig4);
    REQUIRE(ds.entries.size() == 3);
    CHECK(ds.skipped.empty());
    for (const auto& e : ds.entries) {
        REQUIRE(e.views.size() == 4);
        CHECK(max_pairwise_epipolar_residual(e.views, rig4) < 1e-9);
        CHECK(multiview_consistency_loss(e.views, rig4) < 1e-9);
    }
}

TEST_CASE("build_mv_dataset skips behind-camera sequences with a reason", "[lift3d]") {
    CameraRig rig4 = four_rig();
    std::vector<Pose3DSequence> seqs;
    std::vector<std::string> ids;
    seqs.push_back(random_motion(40, 4));
    ids.push_back("ok");
    Pose3DSequence bad = random_motion(41, 4);
    bad.set_joint(0, 2, Eigen::Vector3d(3.5, 0.0, 0.0));  // behind the view-0 camera
    seqs.push_back(bad);
    ids.push_back("bad");

    MVDataset ds = build_mv_dataset(seqs, ids, rig4);
    REQUIRE(ds.entries.size() == 1);
    CHECK(ds.entries[0].id == "ok");
    REQUIRE(ds.skipped.size() == 1);
    CHECK(ds.skipped[0].first == "bad");
    CHECK(!ds.skipped[0].second.empty());

    std::vector<Pose3DSequence> all_bad{bad};
    std::vector<std::string> one_id{"bad"};
    CHECK_THROWS_AS(build_mv_dataset(all_bad, one_id, rig4), EmptyDatasetError);
}

TEST_CASE("build_mv_dataset validates the rig", "[lift3d]") {
    std::vector<Pose3DSequence> seqs{random_motion(50, 2)};
    std::vector<std::string> ids{"a"};
    CHECK_THROWS_AS(build_mv_dataset(seqs, ids, six_rig()), ArgumentError);
}
