#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvlift/errors.hpp"
#include "mvlift/sequence.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

// One dataset record per line. `view` and `rig` are set for multi-view
// records, linking rows of the same sequence id.
struct Record2D {
    std::string id;
    double fps = 20.0;
    std::optional<double> width;
    std::optional<double> height;
    std::optional<int> view;
    std::optional<std::string> rig;
    Pose2DSequence seq;
};

struct Record3D {
    std::string id;
    double fps = 20.0;
    std::vector<int> parents;
    Pose3DSequence seq;
};

namespace detail {

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

// Coordinates are written at full precision so save/load round-trips are
// bit-exact; downstream consistency invariants survive persistence.
inline void append_frames(std::ostringstream& out, const Eigen::MatrixXd& data, int dims) {
    const int T = static_cast<int>(data.rows());
    const int J = static_cast<int>(data.cols()) / dims;
    out << "[";
    for (int t = 0; t < T; ++t) {
        if (t) out << ",";
        out << "[";
        for (int j = 0; j < J; ++j) {
            if (j) out << ",";
            out << "[";
            for (int d = 0; d < dims; ++d) {
                if (d) out << ",";
                out << format_g17(data(t, j * dims + d));
            }
            out << "]";
        }
        out << "]";
    }
    out << "]";
}

inline Eigen::MatrixXd parse_frames(const nlohmann::json& frames, int dims, int joints,
                                    const std::string& where) {
    if (!frames.is_array() || frames.empty())
        throw SchemaError(where + ": 'frames' must be a non-empty array");
    const int T = static_cast<int>(frames.size());
    Eigen::MatrixXd data(T, joints * dims);
    for (int t = 0; t < T; ++t) {
        const auto& frame = frames[t];
        if (!frame.is_array() || static_cast<int>(frame.size()) != joints)
            throw SchemaError(where + ": frame " + std::to_string(t) + " has " +
                              std::to_string(frame.size()) + " joints, expected " +
                              std::to_string(joints));
        for (int j = 0; j < joints; ++j) {
            const auto& pt = frame[j];
            if (!pt.is_array() || static_cast<int>(pt.size()) != dims)
                throw SchemaError(where + ": frame " + std::to_string(t) + " joint " +
                                  std::to_string(j) + " must have " + std::to_string(dims) +
                                  " coordinates");
            for (int d = 0; d < dims; ++d) {
                if (!pt[d].is_number())
                    throw SchemaError(where + ": non-numeric coordinate at frame " +
                                      std::to_string(t));
                data(t, j * dims + d) = pt[d].get<double>();
            }
        }
    }
    if (!data.allFinite()) throw SchemaError(where + ": non-finite coordinate");
    return data;
}

inline nlohmann::json parse_record_line(const std::string& line, const std::string& where) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(where + ": " + e.what());
    }
}

}  // namespace detail

inline std::string record_to_line(const Record2D& rec) {
    std::ostringstream out;
    out << "{\"id\":\"" << detail::json_escape(rec.id) << "\",\"fps\":" << format_g9(rec.fps);
    if (rec.width) out << ",\"width\":" << format_g9(*rec.width);
    if (rec.height) out << ",\"height\":" << format_g9(*rec.height);
    if (rec.view) out << ",\"view\":" << *rec.view;
    if (rec.rig) out << ",\"rig\":\"" << detail::json_escape(*rec.rig) << "\"";
    out << ",\"joints\":" << rec.seq.joint_count() << ",\"frames\":";
    detail::append_frames(out, rec.seq.data, 2);
    out << "}";
    return out.str();
}

inline std::string record_to_line(const Record3D& rec) {
    std::ostringstream out;
    out << "{\"id\":\"" << detail::json_escape(rec.id) << "\",\"fps\":" << format_g9(rec.fps)
        << ",\"joints\":" << rec.seq.joint_count() << ",\"root_index\":" << rec.seq.root_index
        << ",\"parents\":[";
    for (size_t i = 0; i < rec.parents.size(); ++i) {
        if (i) out << ",";
        out << rec.parents[i];
    }
    out << "],\"frames\":";
    detail::append_frames(out, rec.seq.data, 3);
    out << "}";
    return out.str();
}

inline void save_dataset(const std::string& path, const std::vector<Record2D>& records) {
    std::ostringstream out;
    for (const auto& rec : records) {
        rec.seq.validate("save_dataset: record '" + rec.id + "'");
        out << record_to_line(rec) << "\n";
    }
    write_text_file_atomic(path, out.str());
}

inline void save_dataset3d(const std::string& path, const std::vector<Record3D>& records) {
    std::ostringstream out;
    for (const auto& rec : records) {
        rec.seq.validate("save_dataset3d: record '" + rec.id + "'");
        if (static_cast<int>(rec.parents.size()) != rec.seq.joint_count())
            throw SchemaError("save_dataset3d: record '" + rec.id + "': parents size mismatch");
        out << record_to_line(rec) << "\n";
    }
    write_text_file_atomic(path, out.str());
}

inline std::vector<Record2D> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_dataset: cannot open " + path);
    std::vector<Record2D> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j = detail::parse_record_line(line, where);
        if (!j.is_object() || !j.contains("id") || !j.contains("joints") || !j.contains("frames"))
            throw SchemaError(where + ": record needs 'id', 'joints', 'frames'");
        Record2D rec;
        rec.id = j["id"].get<std::string>();
        rec.fps = j.value("fps", 20.0);
        if (j.contains("width")) rec.width = j["width"].get<double>();
        if (j.contains("height")) rec.height = j["height"].get<double>();
        if (j.contains("view")) rec.view = j["view"].get<int>();
        if (j.contains("rig")) rec.rig = j["rig"].get<std::string>();
        int joints = j["joints"].get<int>();
        if (joints < 1) throw SchemaError(where + ": 'joints' must be positive");
        rec.seq = Pose2DSequence(detail::parse_frames(j["frames"], 2, joints, where));
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<Record3D> load_dataset3d(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_dataset3d: cannot open " + path);
    std::vector<Record3D> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j = detail::parse_record_line(line, where);
        if (!j.is_object() || !j.contains("id") || !j.contains("joints") ||
            !j.contains("frames") || !j.contains("root_index") || !j.contains("parents"))
            throw SchemaError(where + ": record needs 'id', 'joints', 'root_index', 'parents', 'frames'");
        Record3D rec;
        rec.id = j["id"].get<std::string>();
        rec.fps = j.value("fps", 20.0);
        int joints = j["joints"].get<int>();
        if (joints < 1) throw SchemaError(where + ": 'joints' must be positive");
        rec.parents = j["parents"].get<std::vector<int>>();
        if (static_cast<int>(rec.parents.size()) != joints)
            throw SchemaError(where + ": 'parents' size != joints");
        int root = j["root_index"].get<int>();
        if (root < 0 || root >= joints) throw SchemaError(where + ": root_index out of range");
        rec.seq = Pose3DSequence(detail::parse_frames(j["frames"], 3, joints, where), root);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace mvlift
