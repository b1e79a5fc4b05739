#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mvlift/errors.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

// Every knob of the pipeline, with embedded defaults. `show-config` prints
// the canonical text form; parsing that text back reproduces the struct
// bit-for-bit, so no run has hidden settings.
struct PipelineConfig {
    // [run]
    std::uint64_t seed = 1;

    // [paths]
    std::string out_root = "out";

    // [rig] 6 cameras at 60 degrees; the 4-view rig reuses radius/height/K.
    // Cameras sit slightly above the figure so that no epipole falls inside
    // the subject's image footprint.
    double rig_radius = 3.0;
    double rig_height = 0.6;
    double rig_fx = 1.2;
    double rig_fy = 1.2;
    double rig_cx = 0.0;
    double rig_cy = 0.0;

    // [synth]
    int synth_train_count = 500;
    int synth_holdout_count = 20;
    int synth_frames = 64;
    double synth_fps = 20.0;
    double synth_amplitude = 0.5;
    double synth_freq_min = 0.3;
    double synth_freq_max = 1.2;
    std::string synth_path_kind = "mix";  // line | circle | figure8 | mix
    double synth_path_speed = 0.2;
    double synth_path_scale = 0.4;
    double synth_root_z = 0.3;

    // [schedule] 100 steps, with betas scaled up tenfold from the usual
    // 1000-step range so the terminal alpha-bar still lands near zero and
    // sampling can start from a standard normal.
    int schedule_steps = 100;
    double schedule_beta_start = 1e-3;
    double schedule_beta_end = 0.2;

    // [lcdm] window must cover synth.frames for stages 2+ to condition on
    // full sequences.
    int lcdm_d_model = 128;
    int lcdm_layers = 4;
    int lcdm_heads = 4;
    int lcdm_window = 64;
    int lcdm_batch_size = 16;
    int lcdm_steps = 2000;
    double lcdm_learning_rate = 1e-4;
    double lcdm_lambda_line = 0.1;
    std::string lcdm_resume_from;

    // [mvdm]
    int mvdm_d_model = 128;
    int mvdm_layers = 4;
    int mvdm_heads = 4;
    int mvdm_batch_size = 16;
    int mvdm_steps = 2000;
    double mvdm_learning_rate = 1e-4;
    std::string mvdm_resume_from;

    // [stage2]
    std::string stage2_source = "train";  // train | holdout
    std::string stage2_input_id;          // empty: all (up to count)
    int stage2_count = 40;                // 0: all
    int stage2_iterations = 500;
    double stage2_step_size = 1e-2;
    double stage2_w_sds = 1.0;
    double stage2_w_mv = 10.0;
    int stage2_n_min = 0;  // 0: auto
    int stage2_n_max = 0;

    // [lift]
    double lift_smoothness = 1e-2;
    double lift_bone_weight = 1e-1;
    int lift_max_iterations = 50;
    double lift_tolerance = 1e-10;
    bool lift_enforce_bones = true;

    void validate() const {
        if (out_root.empty()) throw ArgumentError("config: paths.out_root must not be empty");
        if (!(rig_radius > 0.0)) throw ArgumentError("config: rig.radius must be positive");
        if (!(rig_fx > 0.0) || !(rig_fy > 0.0))
            throw ArgumentError("config: rig focal lengths must be positive");
        if (synth_train_count < 0 || synth_holdout_count < 0)
            throw ArgumentError("config: synth counts must be >= 0");
        if (synth_frames < 2) throw ArgumentError("config: synth.frames must be >= 2");
        if (!(synth_fps > 0.0)) throw ArgumentError("config: synth.fps must be positive");
        if (synth_path_kind != "line" && synth_path_kind != "circle" &&
            synth_path_kind != "figure8" && synth_path_kind != "mix")
            throw ArgumentError("config: synth.path_kind must be line, circle, figure8 or mix");
        if (schedule_steps < 1) throw ArgumentError("config: schedule.steps must be >= 1");
        if (!(schedule_beta_start > 0.0) || !(schedule_beta_start <= schedule_beta_end) ||
            !(schedule_beta_end < 1.0))
            throw ArgumentError("config: need 0 < beta_start <= beta_end < 1");
        if (lcdm_d_model < 1 || lcdm_layers < 1 || lcdm_heads < 1 || lcdm_window < 1 ||
            lcdm_batch_size < 1 || lcdm_steps < 0 || mvdm_d_model < 1 || mvdm_layers < 1 ||
            mvdm_heads < 1 || mvdm_batch_size < 1 || mvdm_steps < 0)
            throw ArgumentError("config: model/training counts must be positive");
        if (!(lcdm_learning_rate > 0.0) || !(mvdm_learning_rate > 0.0))
            throw ArgumentError("config: learning rates must be positive");
        if (lcdm_lambda_line < 0.0) throw ArgumentError("config: lcdm.lambda_line must be >= 0");
        if (stage2_source != "train" && stage2_source != "holdout")
            throw ArgumentError("config: stage2.source must be train or holdout");
        if (stage2_count < 0 || stage2_iterations < 0)
            throw ArgumentError("config: stage2 counts must be >= 0");
        if (!(stage2_step_size > 0.0) || stage2_w_sds < 0.0 || stage2_w_mv < 0.0)
            throw ArgumentError("config: bad stage2 step size or weights");
        if (stage2_n_min < 0 || stage2_n_max < 0)
            throw ArgumentError("config: stage2 noise range must be >= 0");
        if (lift_smoothness < 0.0 || lift_bone_weight < 0.0)
            throw ArgumentError("config: lift weights must be >= 0");
        if (lift_max_iterations < 0 || !(lift_tolerance > 0.0))
            throw ArgumentError("config: bad lift iteration cap or tolerance");
    }
};

namespace detail {

inline std::int64_t parse_int(const std::string& s, const std::string& where) {
    const char* p = s.c_str();
    char* end = nullptr;
    long long v = std::strtoll(p, &end, 10);
    while (end && *end == ' ') ++end;
    if (end == p || (end && *end != '\0'))
        throw ParseError(where + ": not an integer: '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& where) {
    if (!s.empty() && s[0] == '-') throw ParseError(where + ": must be non-negative: '" + s + "'");
    const char* p = s.c_str();
    char* end = nullptr;
    unsigned long long v = std::strtoull(p, &end, 10);
    while (end && *end == ' ') ++end;
    if (end == p || (end && *end != '\0'))
        throw ParseError(where + ": not an integer: '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ParseError(where + ": expected true or false, got '" + s + "'");
}

// Shortest decimal that parses back to the exact double, so show-config stays
// readable without losing bits.
inline std::string format_config_double(double v) {
    std::string s = format_g9(v);
    if (parse_double(s, "config") == v) return s;
    return format_g17(v);
}

struct ConfigField {
    const char* key;  // "section.name"
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
};

inline ConfigField str_field(const char* key, std::string PipelineConfig::* m) {
    return {key, [m](const PipelineConfig& c) { return c.*m; },
            [m](PipelineConfig& c, const std::string& v, const std::string&) { c.*m = v; }};
}

inline ConfigField int_field(const char* key, int PipelineConfig::* m) {
    return {key, [m](const PipelineConfig& c) { return std::to_string(c.*m); },
            [m](PipelineConfig& c, const std::string& v, const std::string& where) {
                c.*m = static_cast<int>(parse_int(v, where));
            }};
}

inline ConfigField u64_field(const char* key, std::uint64_t PipelineConfig::* m) {
    return {key, [m](const PipelineConfig& c) { return std::to_string(c.*m); },
            [m](PipelineConfig& c, const std::string& v, const std::string& where) {
                c.*m = parse_u64(v, where);
            }};
}

inline ConfigField dbl_field(const char* key, double PipelineConfig::* m) {
    return {key, [m](const PipelineConfig& c) { return format_config_double(c.*m); },
            [m](PipelineConfig& c, const std::string& v, const std::string& where) {
                c.*m = parse_double(v, where);
            }};
}

inline ConfigField bool_field(const char* key, bool PipelineConfig::* m) {
    return {key, [m](const PipelineConfig& c) { return std::string(c.*m ? "true" : "false"); },
            [m](PipelineConfig& c, const std::string& v, const std::string& where) {
                c.*m = parse_bool(v, where);
            }};
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        u64_field("run.seed", &PipelineConfig::seed),
        str_field("paths.out_root", &PipelineConfig::out_root),
        dbl_field("rig.radius", &PipelineConfig::rig_radius),
        dbl_field("rig.height", &PipelineConfig::rig_height),
        dbl_field("rig.fx", &PipelineConfig::rig_fx),
        dbl_field("rig.fy", &PipelineConfig::rig_fy),
        dbl_field("rig.cx", &PipelineConfig::rig_cx),
        dbl_field("rig.cy", &PipelineConfig::rig_cy),
        int_field("synth.train_count", &PipelineConfig::synth_train_count),
        int_field("synth.holdout_count", &PipelineConfig::synth_holdout_count),
        int_field("synth.frames", &PipelineConfig::synth_frames),
        dbl_field("synth.fps", &PipelineConfig::synth_fps),
        dbl_field("synth.amplitude", &PipelineConfig::synth_amplitude),
        dbl_field("synth.freq_min", &PipelineConfig::synth_freq_min),
        dbl_field("synth.freq_max", &PipelineConfig::synth_freq_max),
        str_field("synth.path_kind", &PipelineConfig::synth_path_kind),
        dbl_field("synth.path_speed", &PipelineConfig::synth_path_speed),
        dbl_field("synth.path_scale", &PipelineConfig::synth_path_scale),
        dbl_field("synth.root_z", &PipelineConfig::synth_root_z),
        int_field("schedule.steps", &PipelineConfig::schedule_steps),
        dbl_field("schedule.beta_start", &PipelineConfig::schedule_beta_start),
        dbl_field("schedule.beta_end", &PipelineConfig::schedule_beta_end),
        int_field("lcdm.d_model", &PipelineConfig::lcdm_d_model),
        int_field("lcdm.layers", &PipelineConfig::lcdm_layers),
        int_field("lcdm.heads", &PipelineConfig::lcdm_heads),
        int_field("lcdm.window", &PipelineConfig::lcdm_window),
        int_field("lcdm.batch_size", &PipelineConfig::lcdm_batch_size),
        int_field("lcdm.steps", &PipelineConfig::lcdm_steps),
        dbl_field("lcdm.learning_rate", &PipelineConfig::lcdm_learning_rate),
        dbl_field("lcdm.lambda_line", &PipelineConfig::lcdm_lambda_line),
        str_field("lcdm.resume_from", &PipelineConfig::lcdm_resume_from),
        int_field("mvdm.d_model", &PipelineConfig::mvdm_d_model),
        int_field("mvdm.layers", &PipelineConfig::mvdm_layers),
        int_field("mvdm.heads", &PipelineConfig::mvdm_heads),
        int_field("mvdm.batch_size", &PipelineConfig::mvdm_batch_size),
        int_field("mvdm.steps", &PipelineConfig::mvdm_steps),
        dbl_field("mvdm.learning_rate", &PipelineConfig::mvdm_learning_rate),
        str_field("mvdm.resume_from", &PipelineConfig::mvdm_resume_from),
        str_field("stage2.source", &PipelineConfig::stage2_source),
        str_field("stage2.input_id", &PipelineConfig::stage2_input_id),
        int_field("stage2.count", &PipelineConfig::stage2_count),
        int_field("stage2.iterations", &PipelineConfig::stage2_iterations),
        dbl_field("stage2.step_size", &PipelineConfig::stage2_step_size),
        dbl_field("stage2.w_sds", &PipelineConfig::stage2_w_sds),
        dbl_field("stage2.w_mv", &PipelineConfig::stage2_w_mv),
        int_field("stage2.n_min", &PipelineConfig::stage2_n_min),
        int_field("stage2.n_max", &PipelineConfig::stage2_n_max),
        dbl_field("lift.smoothness", &PipelineConfig::lift_smoothness),
        dbl_field("lift.bone_weight", &PipelineConfig::lift_bone_weight),
        int_field("lift.max_iterations", &PipelineConfig::lift_max_iterations),
        dbl_field("lift.tolerance", &PipelineConfig::lift_tolerance),
        bool_field("lift.enforce_bones", &PipelineConfig::lift_enforce_bones),
    };
    return fields;
}

}  // namespace detail

inline std::string show_config_text(const PipelineConfig& cfg) {
    std::string out = "# mvlift pipeline configuration (all keys shown with current values)\n";
    std::string section;
    for (const auto& f : detail::config_fields()) {
        std::string key(f.key);
        std::string sec = key.substr(0, key.find('.'));
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += key.substr(key.find('.') + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

inline PipelineConfig parse_pipeline_config(const std::string& text, const std::string& where) {
    PipelineConfig cfg;
    std::set<std::string> seen;
    for (const auto& [key, value] : parse_kv_text(text, where)) {
        if (!seen.insert(key).second)
            throw SchemaError(where + ": duplicate key '" + key + "'");
        bool matched = false;
        for (const auto& f : detail::config_fields()) {
            if (key == f.key) {
                f.set(cfg, value, where + ": " + key);
                matched = true;
                break;
            }
        }
        if (!matched) throw SchemaError(where + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    return parse_pipeline_config(read_text_file(path), path);
}

}  // namespace mvlift
