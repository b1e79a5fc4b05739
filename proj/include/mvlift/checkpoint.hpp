#pragma once

// Text checkpoints for denoiser parameters plus optional Adam state. Values
// are written with enough digits (%.17g) that save/load round-trips exactly.

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "mvlift/denoiser.hpp"
#include "mvlift/diffusion.hpp"
#include "mvlift/errors.hpp"
#include "mvlift/textio.hpp"

namespace mvlift {

struct Checkpoint {
    std::string model_kind = "lcdm";  // "lcdm" or "mvdm"
    DenoiserConfig config;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::uint64_t steps_done = 0;

    ParamStore params;
    // Adam first/second moments; empty when saved without optimizer state.
    ParamStore opt_m, opt_v;
    std::uint64_t opt_t = 0;

    bool has_optimizer() const { return !opt_m.names.empty(); }

    NoiseSchedule schedule() const {
        return make_schedule(config.n_steps, beta_start, beta_end);
    }
};

namespace detail {

inline void append_tensor(std::string& out, const std::string& section, const std::string& name,
                          const Eigen::MatrixXd& t) {
    out += section;
    out += ' ';
    out += name;
    out += ' ';
    out += std::to_string(t.rows());
    out += ' ';
    out += std::to_string(t.cols());
    out += '\n';
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) {
            if (c) out += ' ';
            out += format_g17(t(r, c));
        }
        out += '\n';
    }
}

// Whitespace-token cursor over the checkpoint body.
struct TokenCursor {
    const char* p;
    const char* end;
    const std::string& path;

    TokenCursor(const std::string& text, const std::string& path_)
        : p(text.data()), end(text.data() + text.size()), path(path_) {}

    void skip_ws() {
        while (p < end && (*p == ' ' || *p == '\t' || *p == '\n' || *p == '\r')) ++p;
    }
    std::string word() {
        skip_ws();
        const char* s = p;
        while (p < end && !(*p == ' ' || *p == '\t' || *p == '\n' || *p == '\r')) ++p;
        if (s == p) throw CheckpointError(path + ": unexpected end of file");
        return std::string(s, p);
    }
    double number() {
        skip_ws();
        char* after = nullptr;
        double v = std::strtod(p, &after);
        if (after == p) throw CheckpointError(path + ": expected a number");
        p = after;
        return v;
    }
    std::uint64_t integer() {
        double v = number();
        if (v < 0.0) throw CheckpointError(path + ": expected a non-negative integer");
        return static_cast<std::uint64_t>(v);
    }
};

inline void read_tensor_into(TokenCursor& cur, ParamStore& store, const std::string& name,
                             const std::string& kind) {
    std::uint64_t rows = cur.integer(), cols = cur.integer();
    if (!store.has(name))
        throw CheckpointError(cur.path + ": unknown " + kind + " tensor '" + name + "'");
    Eigen::MatrixXd& t = store.at(name);
    if (static_cast<std::uint64_t>(t.rows()) != rows ||
        static_cast<std::uint64_t>(t.cols()) != cols)
        throw CheckpointError(cur.path + ": parameter '" + name + "' has shape " +
                              std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                              std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = cur.number();
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.config.validate();
    std::string out;
    std::size_t n_values = 0;
    for (const auto& name : ckpt.params.names)
        n_values += static_cast<std::size_t>(ckpt.params.at(name).size());
    out.reserve(512 + n_values * 26 * (ckpt.has_optimizer() ? 3u : 1u));

    out += "mvlift-checkpoint 1\n";
    out += "model " + ckpt.model_kind + "\n";
    out += "d_model " + std::to_string(ckpt.config.d_model) + "\n";
    out += "n_layers " + std::to_string(ckpt.config.n_layers) + "\n";
    out += "n_heads " + std::to_string(ckpt.config.n_heads) + "\n";
    out += "max_T " + std::to_string(ckpt.config.max_T) + "\n";
    out += "joint_count " + std::to_string(ckpt.config.joint_count) + "\n";
    out += "view_count " + std::to_string(ckpt.config.view_count) + "\n";
    out += "n_steps " + std::to_string(ckpt.config.n_steps) + "\n";
    out += "beta_start " + format_g17(ckpt.beta_start) + "\n";
    out += "beta_end " + format_g17(ckpt.beta_end) + "\n";
    out += "steps_done " + std::to_string(ckpt.steps_done) + "\n";
    out += "optimizer " + std::string(ckpt.has_optimizer() ? "1" : "0") + "\n";
    out += "opt_t " + std::to_string(ckpt.opt_t) + "\n";

    for (const auto& name : ckpt.params.names)
        detail::append_tensor(out, "param", name, ckpt.params.at(name));
    if (ckpt.has_optimizer()) {
        for (const auto& name : ckpt.opt_m.names)
            detail::append_tensor(out, "opt_m", name, ckpt.opt_m.at(name));
        for (const auto& name : ckpt.opt_v.names)
            detail::append_tensor(out, "opt_v", name, ckpt.opt_v.at(name));
    }
    out += "end\n";
    write_text_file_atomic(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const Error& e) {
        throw CheckpointError(std::string(e.what()));
    }
    detail::TokenCursor cur(text, path);
    if (cur.word() != "mvlift-checkpoint" || cur.integer() != 1)
        throw CheckpointError(path + ": not a version-1 checkpoint file");

    Checkpoint ckpt;
    auto expect_key = [&](const char* key) {
        std::string got = cur.word();
        if (got != key)
            throw CheckpointError(path + ": expected key '" + key + "', found '" + got + "'");
    };
    expect_key("model");
    ckpt.model_kind = cur.word();
    if (ckpt.model_kind != "lcdm" && ckpt.model_kind != "mvdm")
        throw CheckpointError(path + ": unknown model kind '" + ckpt.model_kind + "'");
    expect_key("d_model");
    ckpt.config.d_model = static_cast<int>(cur.integer());
    expect_key("n_layers");
    ckpt.config.n_layers = static_cast<int>(cur.integer());
    expect_key("n_heads");
    ckpt.config.n_heads = static_cast<int>(cur.integer());
    expect_key("max_T");
    ckpt.config.max_T = static_cast<int>(cur.integer());
    expect_key("joint_count");
    ckpt.config.joint_count = static_cast<int>(cur.integer());
    expect_key("view_count");
    ckpt.config.view_count = static_cast<int>(cur.integer());
    expect_key("n_steps");
    ckpt.config.n_steps = static_cast<int>(cur.integer());
    expect_key("beta_start");
    ckpt.beta_start = cur.number();
    expect_key("beta_end");
    ckpt.beta_end = cur.number();
    expect_key("steps_done");
    ckpt.steps_done = cur.integer();
    expect_key("optimizer");
    bool has_opt = cur.integer() != 0;
    expect_key("opt_t");
    ckpt.opt_t = cur.integer();

    try {
        ckpt.config.validate();
    } catch (const Error& e) {
        throw CheckpointError(path + ": " + e.what());
    }
    nn::add_params_for_config(ckpt.params, ckpt.config);
    if (has_opt) {
        nn::add_params_for_config(ckpt.opt_m, ckpt.config);
        nn::add_params_for_config(ckpt.opt_v, ckpt.config);
    }

    std::vector<std::string> seen;
    for (;;) {
        std::string section = cur.word();
        if (section == "end") break;
        std::string name = cur.word();
        if (section == "param") {
            detail::read_tensor_into(cur, ckpt.params, name, "parameter");
            seen.push_back(name);
        } else if (section == "opt_m" && has_opt) {
            detail::read_tensor_into(cur, ckpt.opt_m, name, "optimizer");
        } else if (section == "opt_v" && has_opt) {
            detail::read_tensor_into(cur, ckpt.opt_v, name, "optimizer");
        } else {
            throw CheckpointError(path + ": unexpected section '" + section + "'");
        }
    }
    for (const auto& name : ckpt.params.names) {
        bool found = false;
        for (const auto& s : seen) found = found || s == name;
        if (!found)
            throw CheckpointError(path + ": parameter '" + name + "' missing from checkpoint");
    }
    return ckpt;
}

}  // namespace mvlift
