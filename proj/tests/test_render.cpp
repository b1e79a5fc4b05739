#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <string>

#include "mvlift/motion.hpp"
#include "mvlift/render.hpp"
#include "mvlift/rng.hpp"

using namespace mvlift;

namespace {

int count_occurrences(const std::string& text, const std::string& needle) {
    int n = 0;
    for (size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

}  // namespace

TEST_CASE("root trajectory SVG is a complete document with three series", "[render]") {
    Rng rng(11);
    Pose3DSequence seq = generate_synthetic_motion(default_motion_spec(), rng);
    std::string svg = svg_root_trajectory(seq);

    REQUIRE(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) == 0);
    REQUIRE(svg.substr(svg.size() - 7) == "</svg>\n");
    REQUIRE(count_occurrences(svg, "<polyline") == 3);
    REQUIRE(svg.find("root x") != std::string::npos);
    REQUIRE(svg.find("root y") != std::string::npos);
    REQUIRE(svg.find("root z") != std::string::npos);
    REQUIRE(svg.find("frame") != std::string::npos);
    // One plotted point per frame per series.
    size_t poly = svg.find("points=\"");
    std::string pts = svg.substr(poly + 8, svg.find('"', poly + 8) - poly - 8);
    REQUIRE(count_occurrences(pts, ",") == seq.frame_count());
    REQUIRE(svg == svg_root_trajectory(seq));
}

TEST_CASE("constant root trajectory still renders with a padded range", "[render]") {
    Pose3DSequence seq = Pose3DSequence::zeros(4, 2);
    for (int t = 0; t < 4; ++t)
        for (int j = 0; j < 2; ++j) seq.set_joint(t, j, {1.0, 1.0, 1.0});
    std::string svg = svg_root_trajectory(seq);
    REQUIRE(svg.find("</svg>") != std::string::npos);
    REQUIRE(svg.find("nan") == std::string::npos);
    REQUIRE(svg.find("inf") == std::string::npos);
}

TEST_CASE("plotted coordinates stay inside the canvas", "[render]") {
    Rng rng(12);
    Pose3DSequence seq = generate_synthetic_motion(default_motion_spec(), rng);
    std::string svg = svg_root_trajectory(seq);
    size_t pos = 0;
    while ((pos = svg.find("points=\"", pos)) != std::string::npos) {
        pos += 8;
        std::string pts = svg.substr(pos, svg.find('"', pos) - pos);
        std::istringstream in(pts);
        std::string pair;
        while (in >> pair) {
            size_t comma = pair.find(',');
            double x = std::stod(pair.substr(0, comma));
            double y = std::stod(pair.substr(comma + 1));
            REQUIRE(x >= 0.0);
            REQUIRE(x <= 720.0);
            REQUIRE(y >= 0.0);
            REQUIRE(y <= 400.0);
        }
    }
}

TEST_CASE("overlay series lists every frame-joint pair with projections", "[render]") {
    Rng rng(13);
    SyntheticMotionSpec spec = default_motion_spec();
    spec.frame_count = 5;
    Pose3DSequence seq = generate_synthetic_motion(spec, rng);
    CameraRig rig = build_circular_rig(6, 60.0, 3.0, 0.6, CameraIntrinsics{});

    std::string text = overlay_series_text(seq, rig, 2);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    REQUIRE(line.rfind("# 2D overlay series", 0) == 0);
    REQUIRE(line.find("view 2") != std::string::npos);
    std::getline(in, line);
    REQUIRE(line == "# frames 5 joints " + std::to_string(seq.joint_count()));
    std::getline(in, line);
    REQUIRE(line == "frame joint x y");

    int rows = 0;
    int t, j;
    double x, y;
    while (in >> t >> j >> x >> y) {
        Point2D p = project(seq.joint(t, j), rig, 2);
        REQUIRE(x == Catch::Approx(p.x()).margin(1e-8));
        REQUIRE(y == Catch::Approx(p.y()).margin(1e-8));
        ++rows;
    }
    REQUIRE(rows == 5 * seq.joint_count());
}

TEST_CASE("overlay writes nan for joints behind the camera", "[render]") {
    Pose3DSequence seq = Pose3DSequence::zeros(1, 2);
    seq.set_joint(0, 0, {0.0, 0.0, 0.5});
    seq.set_joint(0, 1, {10.0, 0.0, 0.0});  // beyond view 0's camera at (3, 0, 0.6)
    CameraRig rig = build_circular_rig(6, 60.0, 3.0, 0.6, CameraIntrinsics{});
    std::string text = overlay_series_text(seq, rig, 0);
    REQUIRE(text.find("0 1 nan nan\n") != std::string::npos);
    REQUIRE(text.find("0 0 nan") == std::string::npos);
}

TEST_CASE("overlay rejects an out-of-range view", "[render]") {
    Pose3DSequence seq = Pose3DSequence::zeros(1, 1);
    seq.set_joint(0, 0, {0.0, 0.0, 0.5});
    CameraRig rig = build_circular_rig(4, 90.0, 3.0, 0.6, CameraIntrinsics{});
    REQUIRE_THROWS_AS(overlay_series_text(seq, rig, 4), ArgumentError);
    REQUIRE_THROWS_AS(overlay_series_text(seq, rig, -1), ArgumentError);
}
