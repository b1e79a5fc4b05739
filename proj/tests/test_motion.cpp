#include <catch2/catch_amalgamated.hpp>

#include "mvlift/motion.hpp"

using namespace mvlift;

namespace {

SyntheticMotionSpec static_spec() {
    SyntheticMotionSpec spec = default_motion_spec();
    spec.amplitude = 0.0;
    spec.root_path.speed = 0.0;
    return spec;
}

}  // namespace

TEST_CASE("zero amplitude and static root freeze the pose", "[motion][synth]") {
    Rng rng(11);
    SyntheticMotionSpec spec = static_spec();
    Pose3DSequence seq = generate_synthetic_motion(spec, rng);
    REQUIRE(seq.frame_count() == spec.frame_count);
    REQUIRE(seq.joint_count() == 8);
    for (int t = 1; t < seq.frame_count(); ++t)
        REQUIRE((seq.data.row(t) - seq.data.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bone lengths are conserved every frame", "[motion][synth]") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        SyntheticMotionSpec spec = default_motion_spec();
        spec.amplitude = rng.uniform(0.0, 1.2);
        spec.root_path.kind = static_cast<RootPathSpec::Kind>(rng.uniform_int(3));
        spec.root_path.speed = rng.uniform(0.0, 0.5);
        Pose3DSequence seq = generate_synthetic_motion(spec, rng);
        const SkeletonDef& sk = spec.skeleton;
        for (int t = 0; t < seq.frame_count(); ++t)
            for (int j = 0; j < sk.joint_count; ++j) {
                if (sk.parent[j] == j) continue;
                double len = (seq.joint(t, j) - seq.joint(t, sk.parent[j])).norm();
                REQUIRE(std::abs(len - sk.bone_lengths[j]) < 1e-9);
            }
    }
}

TEST_CASE("generation is deterministic per seed", "[motion][synth]") {
    SyntheticMotionSpec spec = default_motion_spec();
    Rng a(5), b(5), c(6);
    Pose3DSequence s1 = generate_synthetic_motion(spec, a);
    Pose3DSequence s2 = generate_synthetic_motion(spec, b);
    Pose3DSequence s3 = generate_synthetic_motion(spec, c);
    REQUIRE(s1.data == s2.data);
    REQUIRE(s1.data != s3.data);
}

TEST_CASE("root follows the configured path family", "[motion][synth]") {
    SECTION("circle keeps the root at constant radius") {
        SyntheticMotionSpec spec = default_motion_spec();
        spec.root_path = {RootPathSpec::Circle, 0.3, 0.4};
        Rng rng(23);
        Pose3DSequence seq = generate_synthetic_motion(spec, rng);
        for (int t = 0; t < seq.frame_count(); ++t)
            REQUIRE(seq.root(t).head<2>().norm() == Catch::Approx(0.4).margin(1e-9));
    }

    SECTION("line keeps the root collinear") {
        SyntheticMotionSpec spec = default_motion_spec();
        spec.root_path = {RootPathSpec::Line, 0.3, 0.4};
        Rng rng(29);
        Pose3DSequence seq = generate_synthetic_motion(spec, rng);
        Eigen::Vector3d d = seq.root(seq.frame_count() - 1) - seq.root(0);
        REQUIRE(d.norm() > 0.1);
        d.normalize();
        for (int t = 1; t < seq.frame_count(); ++t) {
            Eigen::Vector3d step = seq.root(t) - seq.root(0);
            REQUIRE(step.cross(d).norm() < 1e-9);
        }
    }

    SECTION("figure eight stays inside its scale box") {
        SyntheticMotionSpec spec = default_motion_spec();
        spec.root_path = {RootPathSpec::FigureEight, 0.5, 0.35};
        Rng rng(31);
        Pose3DSequence seq = generate_synthetic_motion(spec, rng);
        for (int t = 0; t < seq.frame_count(); ++t) {
            REQUIRE(std::abs(seq.root(t).x()) <= 0.35 + 1e-12);
            REQUIRE(std::abs(seq.root(t).y()) <= 0.35 + 1e-12);
        }
    }
}

TEST_CASE("projected sequences", "[motion][project]") {
    CameraRig rig = build_circular_rig(6, 60.0, 3.0, 0.0, CameraIntrinsics{});

    SECTION("static 3D gives static 2D") {
        Rng rng(37);
        Pose3DSequence seq = generate_synthetic_motion(static_spec(), rng);
        Pose2DSequence p = project_sequence(seq, rig, 2);
        for (int t = 1; t < p.frame_count(); ++t)
            REQUIRE((p.data.row(t) - p.data.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("pairwise epipolar residuals vanish") {
        Rng rng(41);
        SyntheticMotionSpec spec = default_motion_spec();
        spec.amplitude = 0.8;
        spec.root_path.speed = 0.3;
        Pose3DSequence seq = generate_synthetic_motion(spec, rng);
        std::vector<Pose2DSequence> proj;
        for (int v = 0; v < 6; ++v) proj.push_back(project_sequence(seq, rig, v));
        for (int v = 0; v < 6; ++v)
            for (int w = 0; w < 6; ++w) {
                if (v == w) continue;
                const Eigen::Matrix3d& F = rig.fundamental_of(v, w);
                for (int t = 0; t < seq.frame_count(); t += 7)
                    for (int j = 0; j < seq.joint_count(); ++j) {
                        Eigen::Vector3d hv(proj[v].x(t, j), proj[v].y(t, j), 1);
                        Eigen::Vector3d hw(proj[w].x(t, j), proj[w].y(t, j), 1);
                        REQUIRE(std::abs(hw.transpose() * F * hv) < 1e-9);
                    }
            }
    }

    SECTION("single joint on the optical axis lands at the principal point") {
        Pose3DSequence seq = Pose3DSequence::zeros(1, 1);
        Pose2DSequence p = project_sequence(seq, rig, 0);
        REQUIRE(std::abs(p.x(0, 0)) < 1e-12);
        REQUIRE(std::abs(p.y(0, 0)) < 1e-12);
    }

    SECTION("behind-camera names the frame and joint") {
        Pose3DSequence seq = Pose3DSequence::zeros(3, 2);
        seq.set_joint(2, 1, Eigen::Vector3d(4.0, 0.0, 0.0));  // beyond view 0's center
        try {
            project_sequence(seq, rig, 0);
            FAIL("expected BehindCameraError");
        } catch (const BehindCameraError& e) {
            std::string msg = e.what();
            REQUIRE(msg.find("frame 2") != std::string::npos);
            REQUIRE(msg.find("joint 1") != std::string::npos);
        }
    }
}

TEST_CASE("pixel normalization", "[motion][normalize]") {
    SECTION("hand values") {
        Pose2DSequence raw = Pose2DSequence::zeros(1, 2);
        raw.x(0, 1) = 50;
        raw.y(0, 1) = 50;
        Pose2DSequence n = normalize(raw, 100, 100);
        REQUIRE(n.x(0, 0) == Catch::Approx(-1.0));
        REQUIRE(n.y(0, 0) == Catch::Approx(-1.0));
        REQUIRE(n.x(0, 1) == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(n.y(0, 1) == Catch::Approx(0.0).margin(1e-15));
    }

    SECTION("round trip") {
        Rng rng(43);
        Pose2DSequence raw = Pose2DSequence::zeros(8, 4);
        for (int t = 0; t < 8; ++t)
            for (int j = 0; j < 4; ++j) {
                raw.x(t, j) = rng.uniform(0, 640);
                raw.y(t, j) = rng.uniform(0, 480);
            }
        Pose2DSequence back = denormalize(normalize(raw, 640, 480), 640, 480);
        REQUIRE((back.data - raw.data).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("bad dimensions") {
        Pose2DSequence raw = Pose2DSequence::zeros(1, 1);
        REQUIRE_THROWS_AS(normalize(raw, 0, 100), ArgumentError);
        REQUIRE_THROWS_AS(denormalize(raw, 100, -5), ArgumentError);
    }
}
