#pragma once

#include <algorithm>
#include <string>

#include "mvlift/geometry.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

namespace detail {

inline void append_polyline(std::string& out, const std::vector<double>& xs,
                            const std::vector<double>& ys, const char* color) {
    out += "  <polyline fill=\"none\" stroke=\"";
    out += color;
    out += "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ' ';
        out += format_g9(xs[i]) + "," + format_g9(ys[i]);
    }
    out += "\"/>\n";
}

}  // namespace detail

// Static plot of the root joint's world trajectory, one polyline per
// component over the frame index.
inline std::string svg_root_trajectory(const Pose3DSequence& seq) {
    seq.validate("svg_root_trajectory");
    const int T = seq.frame_count();
    const double W = 720.0, H = 400.0, ml = 50.0, mr = 14.0, mt = 30.0, mb = 34.0;
    const double pw = W - ml - mr, ph = H - mt - mb;

    double lo = seq.root(0).x(), hi = lo;
    for (int t = 0; t < T; ++t) {
        Eigen::Vector3d r = seq.root(t);
        for (int c = 0; c < 3; ++c) {
            lo = std::min(lo, r(c));
            hi = std::max(hi, r(c));
        }
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }

    auto px = [&](int t) { return ml + (T > 1 ? pw * t / (T - 1) : pw / 2.0); };
    auto py = [&](double v) { return mt + ph * (hi - v) / (hi - lo); };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_g9(W) + "\" height=\"" +
           format_g9(H) + "\" viewBox=\"0 0 " + format_g9(W) + " " + format_g9(H) + "\">\n";
    out += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "  <line x1=\"" + format_g9(ml) + "\" y1=\"" + format_g9(mt) + "\" x2=\"" +
           format_g9(ml) + "\" y2=\"" + format_g9(mt + ph) + "\" stroke=\"black\"/>\n";
    out += "  <line x1=\"" + format_g9(ml) + "\" y1=\"" + format_g9(mt + ph) + "\" x2=\"" +
           format_g9(ml + pw) + "\" y2=\"" + format_g9(mt + ph) + "\" stroke=\"black\"/>\n";

    const char* colors[3] = {"#d62728", "#2ca02c", "#1f77b4"};
    const char* names[3] = {"x", "y", "z"};
    for (int c = 0; c < 3; ++c) {
        std::vector<double> xs(T), ys(T);
        for (int t = 0; t < T; ++t) {
            xs[t] = px(t);
            ys[t] = py(seq.root(t)(c));
        }
        detail::append_polyline(out, xs, ys, colors[c]);
        out += "  <text x=\"" + format_g9(ml + 70.0 * c) + "\" y=\"18\" fill=\"" +
               std::string(colors[c]) + "\" font-size=\"13\">root " + names[c] + "</text>\n";
    }
    out += "  <text x=\"" + format_g9(ml + pw / 2.0 - 20.0) + "\" y=\"" + format_g9(H - 8.0) +
           "\" font-size=\"12\">frame</text>\n";
    out += "  <text x=\"6\" y=\"" + format_g9(mt + 4.0) + "\" font-size=\"11\">" + format_g9(hi) +
           "</text>\n";
    out += "  <text x=\"6\" y=\"" + format_g9(mt + ph) + "\" font-size=\"11\">" + format_g9(lo) +
           "</text>\n";
    out += "</svg>\n";
    return out;
}

// Per-frame 2D overlay series: the predicted sequence projected into one rig
// view, one row per (frame, joint), for external image tooling to consume.
inline std::string overlay_series_text(const Pose3DSequence& seq, const CameraRig& rig,
                                       int view) {
    seq.validate("overlay_series_text");
    if (view < 0 || view >= rig.view_count())
        throw ArgumentError("overlay_series_text: view index out of range");
    const int T = seq.frame_count(), J = seq.joint_count();
    std::string out;
    out += "# 2D overlay series: predicted 3D joints projected into view " +
           std::to_string(view) + "\n";
    out += "# frames " + std::to_string(T) + " joints " + std::to_string(J) + "\n";
    out += "frame joint x y\n";
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            out += std::to_string(t) + " " + std::to_string(j);
            try {
                Point2D p = project(seq.joint(t, j), rig, view);
                out += " " + format_g9(p.x()) + " " + format_g9(p.y()) + "\n";
            } catch (const BehindCameraError&) {
                out += " nan nan\n";
            }
        }
    }
    return out;
}

}  // namespace mvlift
