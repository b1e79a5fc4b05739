#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "mvlift/geometry.hpp"

using namespace mvlift;

namespace {

CameraRig default_rig6() { return build_circular_rig(6, 60.0, 3.0, 0.0, CameraIntrinsics{}); }

Point3D random_subject_point(Rng& rng) {
    // Well inside every camera's frustum for the default rigs.
    return Point3D(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-0.5, 0.9));
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return Eigen::AngleAxisd(rng.uniform(0.0, M_PI), axis).toRotationMatrix();
}

// Independent absolute-orientation oracle: Horn's quaternion method with the
// least-squares scale. Never shares code with procrustes_align.
SimilarityTransform horn_oracle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    const int n = static_cast<int>(A.rows());
    Eigen::RowVector3d ma = A.colwise().mean(), mb = B.colwise().mean();
    Eigen::MatrixXd Ac = A.rowwise() - ma, Bc = B.rowwise() - mb;
    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) S += Ac.row(i).transpose() * Bc.row(i);

    Eigen::Matrix4d N;
    double Sxx = S(0, 0), Sxy = S(0, 1), Sxz = S(0, 2);
    double Syx = S(1, 0), Syy = S(1, 1), Syz = S(1, 2);
    double Szx = S(2, 0), Szy = S(2, 1), Szz = S(2, 2);
    N << Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx,
         Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz,
         Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy,
         Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(N);
    Eigen::Vector4d q = eig.eigenvectors().col(3);  // largest eigenvalue
    Eigen::Quaterniond quat(q(0), q(1), q(2), q(3));
    quat.normalize();

    SimilarityTransform T;
    T.rotation = quat.toRotationMatrix();
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        num += Bc.row(i).dot((T.rotation * Ac.row(i).transpose()).transpose());
        den += Ac.row(i).squaredNorm();
    }
    T.scale = num / den;
    T.translation = mb.transpose() - T.scale * T.rotation * ma.transpose();
    return T;
}

double alignment_residual(const SimilarityTransform& T, const Eigen::MatrixXd& A,
                          const Eigen::MatrixXd& B) {
    double ss = 0;
    for (int i = 0; i < A.rows(); ++i)
        ss += (T.apply(A.row(i).transpose()) - B.row(i).transpose()).squaredNorm();
    return std::sqrt(ss / A.rows());
}

// Chi-square 0.99 quantile, Wilson-Hilferty approximation.
double chi2_q99(double dof) {
    double z = 2.3263478740;
    double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
    return dof * t * t * t;
}

}  // namespace

TEST_CASE("circular rig geometry", "[geometry][rig]") {
    CameraRig rig = default_rig6();
    REQUIRE(rig.view_count() == 6);

    SECTION("centers on the circle, view 0 at angle 0") {
        Point3D c0 = rig.views[0].center();
        REQUIRE(c0.isApprox(Point3D(3, 0, 0), 1e-12));
        for (const auto& v : rig.views) {
            REQUIRE(std::abs(v.center().head<2>().norm() - 3.0) < 1e-12);
            REQUIRE(std::abs(v.center().z()) < 1e-12);
        }
    }

    SECTION("consecutive centers subtend the step angle at the origin") {
        for (int k = 0; k + 1 < 6; ++k) {
            Eigen::Vector3d a = rig.views[k].center().normalized();
            Eigen::Vector3d b = rig.views[k + 1].center().normalized();
            REQUIRE(std::acos(std::clamp(a.dot(b), -1.0, 1.0)) ==
                    Catch::Approx(M_PI / 3.0).margin(1e-12));
        }
    }

    SECTION("rotations are proper and the axis passes through the origin") {
        for (int k = 0; k < 6; ++k) {
            rig.views[k].validate(1e-9);
            Point2D p = project(Point3D::Zero(), rig, k);
            REQUIRE(std::abs(p.x()) < 1e-12);
            REQUIRE(std::abs(p.y()) < 1e-12);
        }
    }

    SECTION("single view rig has no pair matrices") {
        CameraRig r1 = build_circular_rig(1, 45.0, 2.0, 0.5, CameraIntrinsics{});
        REQUIRE(r1.essential.empty());
        REQUIRE(r1.fundamental.empty());
    }

    SECTION("invalid arguments") {
        REQUIRE_THROWS_AS(build_circular_rig(0, 60, 3, 0, CameraIntrinsics{}), ArgumentError);
        REQUIRE_THROWS_AS(build_circular_rig(6, 60, -1, 0, CameraIntrinsics{}), ArgumentError);
        REQUIRE_THROWS_AS(build_circular_rig(6, 60, 3, 0, CameraIntrinsics{-1, 1, 0, 0}),
                          ArgumentError);
    }
}

TEST_CASE("essential matrix basics", "[geometry][essential]") {
    SECTION("identical poses give the zero matrix") {
        Rng rng(9);
        CameraPose p;
        p.rotation = random_rotation(rng);
        p.translation = Eigen::Vector3d(0.4, -0.2, 1.0);
        REQUIRE(essential_matrix(p, p).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("pure translation gives the cross-product matrix") {
        CameraPose v, w;
        w.translation = Eigen::Vector3d(1, 0, 0);
        Eigen::Matrix3d expected;
        expected << 0, 0, 0, 0, 0, -1, 0, 1, 0;
        REQUIRE((essential_matrix(v, w) - expected).cwiseAbs().maxCoeff() < 1e-15);
    }

    SECTION("epipolar constraint on normalized coordinates") {
        Rng rng(31);
        CameraRig rig = default_rig6();
        for (int i = 0; i < 100; ++i) {
            int v = static_cast<int>(rng.uniform_int(6));
            int w = static_cast<int>(rng.uniform_int(6));
            if (v == w) continue;
            Point3D P = random_subject_point(rng);
            auto norm_proj = [&](int k) {
                Eigen::Vector3d pc = rig.views[k].rotation * P + rig.views[k].translation;
                return Eigen::Vector3d(pc.x() / pc.z(), pc.y() / pc.z(), 1.0);
            };
            double res = norm_proj(w).transpose() * rig.essential_of(v, w) * norm_proj(v);
            REQUIRE(std::abs(res) < 1e-9);
        }
    }

    SECTION("swapping the views transposes E") {
        CameraRig rig = default_rig6();
        for (int v = 0; v < 6; ++v)
            for (int w = 0; w < 6; ++w) {
                if (v == w) continue;
                Eigen::Matrix3d d =
                    rig.essential_of(v, w).transpose() - rig.essential_of(w, v);
                REQUIRE(d.cwiseAbs().maxCoeff() < 1e-12);
            }
    }
}

TEST_CASE("fundamental matrix", "[geometry][fundamental]") {
    CameraRig rig = default_rig6();

    SECTION("identity intrinsics leave E unchanged") {
        CameraIntrinsics K{1, 1, 0, 0};
        Eigen::Matrix3d E = rig.essential_of(0, 1);
        REQUIRE((fundamental_matrix(K, E) - E).cwiseAbs().maxCoeff() < 1e-15);
    }

    SECTION("zero E maps to zero F") {
        REQUIRE(fundamental_matrix(CameraIntrinsics{}, Eigen::Matrix3d::Zero()).isZero(0.0));
    }

    SECTION("pixel-point epipolar constraint") {
        Rng rng(77);
        for (int i = 0; i < 100; ++i) {
            int v = static_cast<int>(rng.uniform_int(6));
            int w = (v + 1 + static_cast<int>(rng.uniform_int(5))) % 6;
            Point3D P = random_subject_point(rng);
            Point2D xv = project(P, rig, v), xw = project(P, rig, w);
            Eigen::Vector3d hv(xv.x(), xv.y(), 1), hw(xw.x(), xw.y(), 1);
            double res = hw.transpose() * rig.fundamental_of(v, w) * hv;
            REQUIRE(std::abs(res) < 1e-9);
        }
    }

    SECTION("rank two") {
        for (int v = 0; v < 6; ++v)
            for (int w = 0; w < 6; ++w) {
                if (v == w) continue;
                Eigen::JacobiSVD<Eigen::Matrix3d> svd(rig.fundamental_of(v, w));
                REQUIRE(svd.singularValues()(2) < 1e-9 * svd.singularValues()(0));
            }
    }

    SECTION("F(v,w)^T equals F(w,v) up to scale") {
        for (int v = 0; v < 6; ++v)
            for (int w = 0; w < 6; ++w) {
                if (v == w) continue;
                Eigen::Matrix3d A = rig.fundamental_of(v, w).transpose();
                Eigen::Matrix3d B = rig.fundamental_of(w, v);
                A /= A.norm();
                B /= B.norm();
                if (A.cwiseProduct(B).sum() < 0) B = -B;
                REQUIRE((A - B).cwiseAbs().maxCoeff() < 1e-9);
            }
    }
}

TEST_CASE("epipolar lines", "[geometry][epipolar]") {
    CameraRig rig = default_rig6();
    Rng rng(13);

    SECTION("corresponding points lie on the line, and the line is normalized") {
        for (int i = 0; i < 100; ++i) {
            int v = static_cast<int>(rng.uniform_int(6));
            int w = (v + 1 + static_cast<int>(rng.uniform_int(5))) % 6;
            Point3D P = random_subject_point(rng);
            Point2D xv = project(P, rig, v), xw = project(P, rig, w);
            Line2D l = epipolar_line(rig.fundamental_of(v, w), xv);
            REQUIRE(std::abs(l.a * l.a + l.b * l.b - 1.0) < 1e-12);
            REQUIRE(l.distance(xw) < 1e-9);
        }
    }

    SECTION("every line passes through the epipole") {
        int v = 2, w = 5;
        Point2D epi = project(rig.views[v].center(), rig, w);
        for (int i = 0; i < 50; ++i) {
            Point2D xv(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
            Line2D l = epipolar_line(rig.fundamental_of(v, w), xv);
            REQUIRE(l.distance(epi) < 1e-9);
        }
    }

    SECTION("querying at the epipole is degenerate") {
        int v = 1, w = 3;
        Point2D epi_v = project(rig.views[w].center(), rig, v);
        REQUIRE_THROWS_AS(epipolar_line(rig.fundamental_of(v, w), epi_v),
                          DegenerateGeometryError);
    }
}

TEST_CASE("projection and backprojection", "[geometry][project]") {
    CameraRig rig = default_rig6();

    SECTION("optical axis hits the principal point") {
        CameraIntrinsics K{1.5, 1.1, 0.2, -0.1};
        CameraRig r = build_circular_rig(3, 120, 2.5, 0.4, K);
        Point2D p = project(Point3D::Zero(), r, 1);
        REQUIRE(p.x() == Catch::Approx(0.2).margin(1e-12));
        REQUIRE(p.y() == Catch::Approx(-0.1).margin(1e-12));
    }

    SECTION("camera center has zero depth") {
        REQUIRE_THROWS_AS(project(rig.views[0].center(), rig, 0), BehindCameraError);
        REQUIRE_THROWS_AS(project(Point3D(4, 0, 0), rig, 0), BehindCameraError);
    }

    SECTION("backproject inverts project at the true depth") {
        Rng rng(55);
        for (int i = 0; i < 50; ++i) {
            Point3D P = random_subject_point(rng);
            int v = static_cast<int>(rng.uniform_int(6));
            Eigen::Vector3d pc = rig.views[v].rotation * P + rig.views[v].translation;
            Point3D back = backproject(project(P, rig, v), rig, v, pc.z());
            REQUIRE((back - P).norm() < 1e-12);
        }
    }
}

TEST_CASE("triangulation", "[geometry][triangulate]") {
    CameraRig rig = default_rig6();
    Rng rng(99);

    SECTION("exact recovery from noise-free projections") {
        for (int i = 0; i < 100; ++i) {
            Point3D P = random_subject_point(rng);
            std::map<int, Point2D> obs;
            for (int v = 0; v < 6; ++v) obs[v] = project(P, rig, v);
            TriangulateResult r = triangulate(obs, rig);
            REQUIRE((r.point - P).norm() < 1e-9);
            REQUIRE(r.residual < 1e-9);
        }
    }

    SECTION("two views suffice") {
        Point3D P(0.3, -0.2, 0.4);
        std::map<int, Point2D> obs{{1, project(P, rig, 1)}, {4, project(P, rig, 4)}};
        REQUIRE((triangulate(obs, rig).point - P).norm() < 1e-9);
    }

    SECTION("Gaussian observation noise stays bounded") {
        for (int i = 0; i < 100; ++i) {
            Point3D P = random_subject_point(rng);
            std::map<int, Point2D> obs;
            for (int v = 0; v < 6; ++v) {
                Point2D p = project(P, rig, v);
                obs[v] = p + Point2D(rng.normal(0, 1e-3), rng.normal(0, 1e-3));
            }
            REQUIRE((triangulate(obs, rig).point - P).norm() < 1e-2);
        }
    }

    SECTION("fewer than two views") {
        std::map<int, Point2D> obs{{0, Point2D(0.1, 0.1)}};
        REQUIRE_THROWS_AS(triangulate(obs, rig), InsufficientViewsError);
        REQUIRE_THROWS_AS(triangulate({}, rig), InsufficientViewsError);
    }

    SECTION("coincident cameras are degenerate") {
        CameraRig twin = build_circular_rig(2, 0.0, 3.0, 0.0, CameraIntrinsics{});
        std::map<int, Point2D> obs{{0, Point2D(0.05, 0.02)}, {1, Point2D(0.05, 0.02)}};
        REQUIRE_THROWS_AS(triangulate(obs, twin), DegenerateGeometryError);
    }
}

TEST_CASE("procrustes alignment", "[geometry][procrustes]") {
    Rng rng(2024);
    auto random_cloud = [&](int n) {
        Eigen::MatrixXd A(n, 3);
        for (int i = 0; i < n; ++i)
            A.row(i) << rng.normal(), rng.normal(), rng.normal();
        return A;
    };

    SECTION("identity on equal clouds") {
        Eigen::MatrixXd A = random_cloud(20);
        SimilarityTransform T = procrustes_align(A, A);
        REQUIRE(T.scale == Catch::Approx(1.0).margin(1e-12));
        REQUIRE((T.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE(T.translation.norm() < 1e-9);
        REQUIRE(alignment_residual(T, A, A) < 1e-12);
    }

    SECTION("recovers a known similarity exactly") {
        Eigen::MatrixXd A = random_cloud(30);
        double s = rng.uniform(0.5, 2.0);
        Eigen::Matrix3d R = random_rotation(rng);
        Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
        Eigen::MatrixXd B = (s * (R * A.transpose())).colwise() + t;
        B.transposeInPlace();
        SimilarityTransform T = procrustes_align(A, B);
        REQUIRE(T.scale == Catch::Approx(s).margin(1e-9));
        REQUIRE((T.rotation - R).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE((T.translation - t).norm() < 1e-9);
        REQUIRE(alignment_residual(T, A, B) < 1e-9);
    }

    SECTION("matches the quaternion oracle on noisy pairs") {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::MatrixXd A = random_cloud(25);
            Eigen::MatrixXd B = random_cloud(25);
            SimilarityTransform impl = procrustes_align(A, B);
            SimilarityTransform oracle = horn_oracle(A, B);
            double r_impl = alignment_residual(impl, A, B);
            double r_oracle = alignment_residual(oracle, A, B);
            REQUIRE(std::abs(r_impl - r_oracle) < 1e-9);
            REQUIRE(r_impl <= r_oracle + 1e-12);
        }
    }

    SECTION("residual invariant under pre-similarity of the source") {
        Eigen::MatrixXd A = random_cloud(25);
        Eigen::MatrixXd B = random_cloud(25);
        double base = alignment_residual(procrustes_align(A, B), A, B);

        Eigen::Matrix3d R = random_rotation(rng);
        Eigen::MatrixXd A2 = (0.7 * (R * A.transpose())).colwise() + Eigen::Vector3d(1, 2, 3);
        A2.transposeInPlace();
        double moved = alignment_residual(procrustes_align(A2, B), A2, B);
        REQUIRE(std::abs(base - moved) < 1e-9);
    }

    SECTION("degenerate inputs") {
        Eigen::MatrixXd line(5, 3);
        for (int i = 0; i < 5; ++i) line.row(i) << i, 2.0 * i, -i;
        REQUIRE_THROWS_AS(procrustes_align(line, line), DegenerateGeometryError);

        Eigen::MatrixXd two(2, 3);
        two.setRandom();
        REQUIRE_THROWS_AS(procrustes_align(two, two), ArgumentError);

        Eigen::MatrixXd same = Eigen::MatrixXd::Ones(5, 3);
        REQUIRE_THROWS_AS(procrustes_align(same, same), DegenerateGeometryError);
    }
}

TEST_CASE("lines to an epipole", "[geometry][lines]") {
    SECTION("horizontal and vertical hand cases") {
        Pose2DSequence seq = Pose2DSequence::zeros(1, 1);
        LineSet h = lines_to_epipole(seq, Point2D(1, 0));
        REQUIRE(std::abs(h.a(0, 0)) < 1e-15);
        REQUIRE(std::abs(std::abs(h.b(0, 0)) - 1.0) < 1e-15);
        REQUIRE(std::abs(h.c(0, 0)) < 1e-15);

        seq.x(0, 0) = 0.3;
        seq.y(0, 0) = 0.4;
        LineSet v = lines_to_epipole(seq, Point2D(0.3, -0.2));
        REQUIRE(std::abs(std::abs(v.a(0, 0)) - 1.0) < 1e-15);
        REQUIRE(std::abs(v.b(0, 0)) < 1e-15);
        REQUIRE(v.c(0, 0) == Catch::Approx(-0.3 * v.a(0, 0)).margin(1e-15));
    }

    SECTION("every joint lies on its own line; the epipole lies on all of them") {
        Rng rng(8);
        Pose2DSequence seq = Pose2DSequence::zeros(16, 5);
        for (int t = 0; t < 16; ++t)
            for (int j = 0; j < 5; ++j) {
                seq.x(t, j) = rng.uniform(-0.5, 0.5);
                seq.y(t, j) = rng.uniform(-0.5, 0.5);
            }
        Point2D e(1.7, -0.9);
        LineSet lines = lines_to_epipole(seq, e);
        for (int t = 0; t < 16; ++t)
            for (int j = 0; j < 5; ++j) {
                Line2D l(lines.a(t, j), lines.b(t, j), lines.c(t, j));
                REQUIRE(std::abs(l.a * l.a + l.b * l.b - 1.0) < 1e-12);
                REQUIRE(l.distance(seq.point(t, j)) < 1e-12);
                REQUIRE(l.distance(e) < 1e-12);
            }
    }

    SECTION("coincidence is degenerate") {
        Pose2DSequence seq = Pose2DSequence::zeros(1, 1);
        REQUIRE_THROWS_AS(lines_to_epipole(seq, Point2D(0, 0)), DegenerateGeometryError);
    }
}

TEST_CASE("virtual epipole sampling", "[geometry][epipole]") {
    Pose2DSequence seq = Pose2DSequence::zeros(1, 1);  // one joint at the origin
    Rect bounds{-1, -1, 1, 1};

    SECTION("deterministic under a fixed seed") {
        Rng a(42), b(42);
        Point2D pa = sample_virtual_epipole(a, bounds, seq);
        Point2D pb = sample_virtual_epipole(b, bounds, seq);
        REQUIRE(pa == pb);
    }

    SECTION("degenerate bounds collapse to the single admissible point") {
        Rng rng(1);
        Rect single{0.5, 0.5, 0.5, 0.5};
        Point2D p = sample_virtual_epipole(rng, single, seq);
        REQUIRE(p.x() == 0.5);
        REQUIRE(p.y() == 0.5);
    }

    SECTION("no admissible point exhausts the attempt budget") {
        Rng rng(1);
        Rect inside{-0.01, -0.01, 0.01, 0.01};
        REQUIRE_THROWS_AS(sample_virtual_epipole(rng, inside, seq), DegenerateGeometryError);
    }

    SECTION("samples are uniform over the admissible region") {
        Rng rng(7);
        const int n_samples = 10000, grid = 10;
        Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(grid, grid);
        for (int i = 0; i < n_samples; ++i) {
            Point2D p = sample_virtual_epipole(rng, bounds, seq);
            REQUIRE(p.norm() >= 0.05);
            int gx = std::min(grid - 1, static_cast<int>((p.x() + 1) / 2 * grid));
            int gy = std::min(grid - 1, static_cast<int>((p.y() + 1) / 2 * grid));
            counts(gy, gx) += 1;
        }
        // Expected cell mass from a deterministic fine subgrid of the
        // admissible indicator.
        Eigen::MatrixXd area = Eigen::MatrixXd::Zero(grid, grid);
        const int sub = 100;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx)
                for (int sy = 0; sy < sub; ++sy)
                    for (int sx = 0; sx < sub; ++sx) {
                        double x = -1 + (gx + (sx + 0.5) / sub) * 2.0 / grid;
                        double y = -1 + (gy + (sy + 0.5) / sub) * 2.0 / grid;
                        if (std::hypot(x, y) >= 0.05) area(gy, gx) += 1;
                    }
        area /= area.sum();
        double chi2 = 0;
        int cells = 0;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                double expected = n_samples * area(gy, gx);
                if (expected < 5) continue;
                chi2 += (counts(gy, gx) - expected) * (counts(gy, gx) - expected) / expected;
                ++cells;
            }
        REQUIRE(cells > 90);
        REQUIRE(chi2 < chi2_q99(cells - 1));
    }
}

TEST_CASE("rig serialization round trip", "[geometry][io]") {
    CameraRig rig = build_circular_rig(4, 90.0, 2.75, 0.3, CameraIntrinsics{1.2, 1.3, 0.01, -0.02});
    CameraRig back = load_rig_text(save_rig_text(rig));
    REQUIRE(back.view_count() == rig.view_count());
    for (int v = 0; v < 4; ++v) {
        REQUIRE((back.views[v].rotation - rig.views[v].rotation).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE((back.views[v].translation - rig.views[v].translation).norm() < 1e-9);
    }
    for (int v = 0; v < 4; ++v)
        for (int w = 0; w < 4; ++w) {
            if (v == w) continue;
            REQUIRE((back.fundamental_of(v, w) - rig.fundamental_of(v, w)).cwiseAbs().maxCoeff() <
                    1e-9);
        }
    REQUIRE_THROWS_AS(load_rig_text("n_views = 2\nradius = 1\n"), SchemaError);
    REQUIRE_THROWS_AS(load_rig_text("what even is this"), ParseError);
}
