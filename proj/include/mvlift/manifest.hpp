#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvlift/errors.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct ArtifactInfo {
    std::string path;  // relative to the run's output root
    std::uint64_t bytes = 0;
    std::string fnv1a64;
};

// Everything needed to reproduce and audit one subcommand run. Timings are
// deliberately kept out of the manifest file (they go to a sibling text
// file): the manifest must be bit-identical across reruns.
struct RunManifest {
    std::string command;
    std::string mode;  // set for lift/eval/render
    std::uint64_t seed = 0;
    std::string config_text;
    std::vector<ArtifactInfo> artifacts;
    std::vector<std::pair<std::string, std::string>> metrics;  // name -> formatted value
    std::vector<std::pair<std::string, double>> timings;       // label -> seconds

    void add_artifact(const std::string& out_root, const std::string& rel_path) {
        namespace fs = std::filesystem;
        fs::path full = fs::path(out_root) / rel_path;
        std::ifstream in(full, std::ios::binary);
        if (!in) throw Error("manifest: cannot read artifact " + full.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string content = ss.str();
        artifacts.push_back({rel_path, content.size(), to_hex64(fnv1a64(content))});
    }

    std::string file_stem() const { return command + (mode.empty() ? "" : "-" + mode); }
};

inline std::string manifest_to_json_text(RunManifest m) {
    std::sort(m.artifacts.begin(), m.artifacts.end(),
              [](const ArtifactInfo& a, const ArtifactInfo& b) { return a.path < b.path; });
    nlohmann::ordered_json j;
    j["command"] = m.command;
    if (!m.mode.empty()) j["mode"] = m.mode;
    j["seed"] = m.seed;
    j["config"] = m.config_text;
    j["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& a : m.artifacts)
        j["artifacts"].push_back({{"path", a.path}, {"bytes", a.bytes}, {"fnv1a64", a.fnv1a64}});
    if (!m.metrics.empty()) {
        nlohmann::ordered_json metrics;
        for (const auto& [k, v] : m.metrics) metrics[k] = v;
        j["metrics"] = metrics;
    }
    return j.dump(2) + "\n";
}

inline std::string timings_to_text(const RunManifest& m) {
    std::string out = "stage seconds\n";
    for (const auto& [label, seconds] : m.timings) out += label + " " + format_g9(seconds) + "\n";
    return out;
}

inline void save_run_manifest(const std::string& out_root, const RunManifest& m) {
    namespace fs = std::filesystem;
    fs::path root(out_root);
    write_text_file_atomic((root / ("manifest-" + m.file_stem() + ".json")).string(),
                           manifest_to_json_text(m));
    write_text_file_atomic((root / ("timings-" + m.file_stem() + ".txt")).string(),
                           timings_to_text(m));
}

}  // namespace mvlift
