#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mvlift/errors.hpp"
#include "mvlift/rng.hpp"
#include "mvlift/sequence.hpp"

namespace mvlift {

struct DenoiserConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int max_T = 64;
    int joint_count = 8;
    int view_count = 1;  // 1: line-conditioned model, >=2: cross-view model
    int n_steps = 1000;  // diffusion-step embedding table covers [0, n_steps]

    void validate() const {
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_T < 1 || joint_count < 1 ||
            view_count < 1 || n_steps < 1)
            throw ArgumentError("DenoiserConfig: all counts must be >= 1");
        if (d_model % n_heads != 0)
            throw ArgumentError("DenoiserConfig: d_model must be divisible by n_heads");
    }

    // Per-frame input features: noisy pose + lines for the single-view model,
    // pose only for the cross-view model.
    int token_dim() const { return view_count == 1 ? 5 * joint_count : 2 * joint_count; }
    int out_dim() const { return 2 * joint_count; }
    int head_dim() const { return d_model / n_heads; }
};

// Named tensors in a fixed creation order; the order defines initialization
// draws, checkpoint layout, and optimizer iteration.
struct ParamStore {
    std::vector<std::string> names;
    std::map<std::string, Eigen::MatrixXd> tensors;

    Eigen::MatrixXd& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ArgumentError("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const Eigen::MatrixXd& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ArgumentError("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    void add(const std::string& name, int rows, int cols) {
        if (tensors.count(name)) throw ArgumentError("ParamStore: duplicate parameter '" + name + "'");
        names.push_back(name);
        tensors.emplace(name, Eigen::MatrixXd::Zero(rows, cols));
    }

    // Grad accumulation / optimizer helpers.
    ParamStore zeros_like() const {
        ParamStore out;
        out.names = names;
        for (const auto& n : names)
            out.tensors.emplace(n, Eigen::MatrixXd::Zero(tensors.at(n).rows(), tensors.at(n).cols()));
        return out;
    }
    void accumulate(const ParamStore& other, double scale = 1.0) {
        for (const auto& n : names) at(n) += scale * other.at(n);
    }
    void set_zero() {
        for (const auto& n : names) at(n).setZero();
    }
    void scale(double s) {
        for (const auto& n : names) at(n) *= s;
    }
    double squared_norm() const {
        double s = 0;
        for (const auto& n : names) s += tensors.at(n).squaredNorm();
        return s;
    }
};

namespace nn {

inline void add_params_for_config(ParamStore& p, const DenoiserConfig& cfg) {
    const int d = cfg.d_model;
    p.add("tok.W", cfg.token_dim(), d);
    p.add("tok.b", 1, d);
    p.add("step_emb", cfg.n_steps + 1, d);
    if (cfg.view_count > 1) p.add("view_emb", cfg.view_count, d);
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string L = "layer" + std::to_string(i) + ".";
        p.add(L + "ln1.g", 1, d);
        p.add(L + "ln1.b", 1, d);
        for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"}) p.add(L + w, d, d);
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) p.add(L + b, 1, d);
        if (cfg.view_count > 1) {
            p.add(L + "lnx.g", 1, d);
            p.add(L + "lnx.b", 1, d);
            for (const char* w : {"xattn.Wq", "xattn.Wk", "xattn.Wv", "xattn.Wo"}) p.add(L + w, d, d);
            for (const char* b : {"xattn.bq", "xattn.bk", "xattn.bv", "xattn.bo"}) p.add(L + b, 1, d);
        }
        p.add(L + "ln2.g", 1, d);
        p.add(L + "ln2.b", 1, d);
        p.add(L + "ffn.W1", d, 4 * d);
        p.add(L + "ffn.b1", 1, 4 * d);
        p.add(L + "ffn.W2", 4 * d, d);
        p.add(L + "ffn.b2", 1, d);
    }
    p.add("final_ln.g", 1, d);
    p.add("final_ln.b", 1, d);
    p.add("out.W", d, cfg.out_dim());
    p.add("out.b", 1, cfg.out_dim());
}

constexpr double kLnEps = 1e-5;

struct LnTape {
    Eigen::MatrixXd xhat;
    Eigen::VectorXd inv_std;
};

inline Eigen::MatrixXd layernorm_fwd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                                     const Eigen::MatrixXd& b, LnTape& tape) {
    const int T = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
    tape.xhat.resize(T, d);
    tape.inv_std.resize(T);
    Eigen::MatrixXd y(T, d);
    for (int t = 0; t < T; ++t) {
        double mu = x.row(t).mean();
        double var = (x.row(t).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + kLnEps);
        tape.inv_std(t) = is;
        tape.xhat.row(t) = (x.row(t).array() - mu) * is;
        y.row(t) = tape.xhat.row(t).cwiseProduct(g.row(0)) + b.row(0);
    }
    return y;
}

// Returns dx; accumulates dg, db.
inline Eigen::MatrixXd layernorm_bwd(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& g,
                                     const LnTape& tape, Eigen::MatrixXd& dg,
                                     Eigen::MatrixXd& db) {
    const int T = static_cast<int>(dy.rows()), d = static_cast<int>(dy.cols());
    Eigen::MatrixXd dx(T, d);
    for (int t = 0; t < T; ++t) {
        db.row(0) += dy.row(t);
        dg.row(0) += dy.row(t).cwiseProduct(tape.xhat.row(t));
        Eigen::RowVectorXd dxhat = dy.row(t).cwiseProduct(g.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(tape.xhat.row(t)).mean();
        dx.row(t) = tape.inv_std(t) * (dxhat.array() - m1 - tape.xhat.row(t).array() * m2);
    }
    (void)d;
    return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

struct AttnTape {
    Eigen::MatrixXd in;  // post-norm input, T x d
    Eigen::MatrixXd Q, K, V;
    std::vector<Eigen::MatrixXd> A;  // per head, T x T
    Eigen::MatrixXd O;               // concatenated head outputs
};

// Self-attention over the rows of `in`.
inline Eigen::MatrixXd attention_fwd(const DenoiserConfig& cfg, const ParamStore& p,
                                     const std::string& prefix, const Eigen::MatrixXd& in,
                                     AttnTape& tape) {
    const int T = static_cast<int>(in.rows());
    const int dh = cfg.head_dim();
    tape.in = in;
    tape.Q = (in * p.at(prefix + "Wq")).rowwise() + p.at(prefix + "bq").row(0);
    tape.K = (in * p.at(prefix + "Wk")).rowwise() + p.at(prefix + "bk").row(0);
    tape.V = (in * p.at(prefix + "Wv")).rowwise() + p.at(prefix + "bv").row(0);
    tape.A.assign(cfg.n_heads, Eigen::MatrixXd());
    tape.O.resize(T, cfg.d_model);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < cfg.n_heads; ++h) {
        auto Qh = tape.Q.middleCols(h * dh, dh);
        auto Kh = tape.K.middleCols(h * dh, dh);
        auto Vh = tape.V.middleCols(h * dh, dh);
        Eigen::MatrixXd S = scale * (Qh * Kh.transpose());
        Eigen::MatrixXd& A = tape.A[h];
        A.resize(T, T);
        for (int t = 0; t < T; ++t) {
            double mx = S.row(t).maxCoeff();
            A.row(t) = (S.row(t).array() - mx).exp();
            A.row(t) /= A.row(t).sum();
        }
        tape.O.middleCols(h * dh, dh) = A * Vh;
    }
    return (tape.O * p.at(prefix + "Wo")).rowwise() + p.at(prefix + "bo").row(0);
}

// Returns d(in); accumulates weight grads into `g`.
inline Eigen::MatrixXd attention_bwd(const DenoiserConfig& cfg, const ParamStore& p,
                                     const std::string& prefix, const Eigen::MatrixXd& dout,
                                     const AttnTape& tape, ParamStore& g) {
    const int T = static_cast<int>(dout.rows());
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    g.at(prefix + "Wo") += tape.O.transpose() * dout;
    g.at(prefix + "bo").row(0) += dout.colwise().sum();
    Eigen::MatrixXd dO = dout * p.at(prefix + "Wo").transpose();

    Eigen::MatrixXd dQ = Eigen::MatrixXd::Zero(T, cfg.d_model);
    Eigen::MatrixXd dK = Eigen::MatrixXd::Zero(T, cfg.d_model);
    Eigen::MatrixXd dV = Eigen::MatrixXd::Zero(T, cfg.d_model);
    for (int h = 0; h < cfg.n_heads; ++h) {
        auto Qh = tape.Q.middleCols(h * dh, dh);
        auto Kh = tape.K.middleCols(h * dh, dh);
        auto Vh = tape.V.middleCols(h * dh, dh);
        const Eigen::MatrixXd& A = tape.A[h];
        Eigen::MatrixXd dOh = dO.middleCols(h * dh, dh);
        Eigen::MatrixXd dA = dOh * Vh.transpose();
        dV.middleCols(h * dh, dh) = A.transpose() * dOh;
        // softmax rows: dS = A .* (dA - rowsum(A .* dA))
        Eigen::MatrixXd dS(T, T);
        for (int t = 0; t < T; ++t) {
            double dot = A.row(t).cwiseProduct(dA.row(t)).sum();
            dS.row(t) = (A.row(t).array() * (dA.row(t).array() - dot)).matrix();
        }
        dQ.middleCols(h * dh, dh) = scale * (dS * Kh);
        dK.middleCols(h * dh, dh) = scale * (dS.transpose() * Qh);
    }

    g.at(prefix + "Wq") += tape.in.transpose() * dQ;
    g.at(prefix + "bq").row(0) += dQ.colwise().sum();
    g.at(prefix + "Wk") += tape.in.transpose() * dK;
    g.at(prefix + "bk").row(0) += dK.colwise().sum();
    g.at(prefix + "Wv") += tape.in.transpose() * dV;
    g.at(prefix + "bv").row(0) += dV.colwise().sum();
    return dQ * p.at(prefix + "Wq").transpose() + dK * p.at(prefix + "Wk").transpose() +
           dV * p.at(prefix + "Wv").transpose();
}

struct FfnTape {
    Eigen::MatrixXd in;
    Eigen::MatrixXd pre;  // in * W1 + b1
};

inline Eigen::MatrixXd ffn_fwd(const ParamStore& p, const std::string& prefix,
                               const Eigen::MatrixXd& in, FfnTape& tape) {
    tape.in = in;
    tape.pre = (in * p.at(prefix + "W1")).rowwise() + p.at(prefix + "b1").row(0);
    Eigen::MatrixXd act = tape.pre.unaryExpr([](double v) { return gelu(v); });
    return (act * p.at(prefix + "W2")).rowwise() + p.at(prefix + "b2").row(0);
}

inline Eigen::MatrixXd ffn_bwd(const ParamStore& p, const std::string& prefix,
                               const Eigen::MatrixXd& dout, const FfnTape& tape, ParamStore& g) {
    Eigen::MatrixXd act = tape.pre.unaryExpr([](double v) { return gelu(v); });
    g.at(prefix + "W2") += act.transpose() * dout;
    g.at(prefix + "b2").row(0) += dout.colwise().sum();
    Eigen::MatrixXd dact = dout * p.at(prefix + "W2").transpose();
    Eigen::MatrixXd dpre =
        dact.cwiseProduct(tape.pre.unaryExpr([](double v) { return gelu_grad(v); }));
    g.at(prefix + "W1") += tape.in.transpose() * dpre;
    g.at(prefix + "b1").row(0) += dpre.colwise().sum();
    return dpre * p.at(prefix + "W1").transpose();
}

inline Eigen::MatrixXd positional_encoding(int T, int d) {
    Eigen::MatrixXd pe(T, d);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < d; ++i) {
            double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
            pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
        }
    return pe;
}

}  // namespace nn

inline ParamStore init_params(const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamStore p;
    nn::add_params_for_config(p, cfg);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (const auto& name : p.names) {
        Eigen::MatrixXd& m = p.at(name);
        bool ln_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        bool bias = name.find(".b") != std::string::npos;
        if (ln_gain) {
            m.setOnes();
        } else if (bias) {
            m.setZero();
        } else {
            for (int r = 0; r < m.rows(); ++r)
                for (int c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.normal();
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Line-conditioned single-view denoiser.

struct BlockTape {
    nn::LnTape ln1;
    nn::AttnTape attn;
    nn::LnTape ln2;
    nn::FfnTape ffn;
};

struct LcdTape {
    Eigen::MatrixXd features;  // T x 5J token inputs
    int n = 0;
    std::vector<BlockTape> blocks;
    nn::LnTape final_ln;
    Eigen::MatrixXd final_h;  // post final-norm, T x d
};

namespace detail {

inline void check_lcd_shapes(const DenoiserConfig& cfg, const Pose2DSequence& x_n, int n,
                             const LineSet& L) {
    if (cfg.view_count != 1)
        throw ArgumentError("lcd_forward: config is for a multi-view model");
    const int T = x_n.frame_count();
    if (T < 1 || T > cfg.max_T)
        throw ArgumentError("lcd_forward: T=" + std::to_string(T) + " outside [1, max_T=" +
                            std::to_string(cfg.max_T) + "]");
    if (x_n.joint_count() != cfg.joint_count)
        throw ArgumentError("lcd_forward: joint count mismatch");
    if (L.frame_count() != T || L.joint_count() != cfg.joint_count)
        throw ArgumentError("lcd_forward: line set shape mismatch");
    if (n < 0 || n > cfg.n_steps)
        throw ArgumentError("lcd_forward: step outside embedding table");
}

}  // namespace detail

inline Pose2DSequence lcd_forward_tape(const DenoiserConfig& cfg, const ParamStore& p,
                                       const Pose2DSequence& x_n, int n, const LineSet& L,
                                       LcdTape& tape) {
    detail::check_lcd_shapes(cfg, x_n, n, L);
    const int T = x_n.frame_count(), J = cfg.joint_count;

    tape.features.resize(T, 5 * J);
    tape.features.leftCols(2 * J) = x_n.data;
    tape.features.rightCols(3 * J) = L.data;
    tape.n = n;

    Eigen::MatrixXd h = (tape.features * p.at("tok.W")).rowwise() + p.at("tok.b").row(0);
    h += nn::positional_encoding(T, cfg.d_model);
    h.rowwise() += p.at("step_emb").row(n);

    tape.blocks.assign(cfg.n_layers, BlockTape());
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string Lp = "layer" + std::to_string(i) + ".";
        BlockTape& bt = tape.blocks[i];
        Eigen::MatrixXd a_in = nn::layernorm_fwd(h, p.at(Lp + "ln1.g"), p.at(Lp + "ln1.b"), bt.ln1);
        h += nn::attention_fwd(cfg, p, Lp + "attn.", a_in, bt.attn);
        Eigen::MatrixXd f_in = nn::layernorm_fwd(h, p.at(Lp + "ln2.g"), p.at(Lp + "ln2.b"), bt.ln2);
        h += nn::ffn_fwd(p, Lp + "ffn.", f_in, bt.ffn);
    }
    tape.final_h = nn::layernorm_fwd(h, p.at("final_ln.g"), p.at("final_ln.b"), tape.final_ln);
    Eigen::MatrixXd y = (tape.final_h * p.at("out.W")).rowwise() + p.at("out.b").row(0);
    return Pose2DSequence(std::move(y));
}

inline Pose2DSequence lcd_forward(const DenoiserConfig& cfg, const ParamStore& p,
                                  const Pose2DSequence& x_n, int n, const LineSet& L) {
    LcdTape tape;
    return lcd_forward_tape(cfg, p, x_n, n, L, tape);
}

// dY is the loss gradient w.r.t. the prediction (T x 2J). Parameter grads are
// accumulated into `g` (zeros_like(params) on first use).
inline void lcd_backward(const DenoiserConfig& cfg, const ParamStore& p, const LcdTape& tape,
                         const Eigen::MatrixXd& dY, ParamStore& g) {
    g.at("out.W") += tape.final_h.transpose() * dY;
    g.at("out.b").row(0) += dY.colwise().sum();
    Eigen::MatrixXd dh = dY * p.at("out.W").transpose();
    dh = nn::layernorm_bwd(dh, p.at("final_ln.g"), tape.final_ln, g.at("final_ln.g"),
                           g.at("final_ln.b"));

    for (int i = cfg.n_layers - 1; i >= 0; --i) {
        std::string Lp = "layer" + std::to_string(i) + ".";
        const BlockTape& bt = tape.blocks[i];
        Eigen::MatrixXd dffn_in = nn::ffn_bwd(p, Lp + "ffn.", dh, bt.ffn, g);
        dh += nn::layernorm_bwd(dffn_in, p.at(Lp + "ln2.g"), bt.ln2, g.at(Lp + "ln2.g"),
                                g.at(Lp + "ln2.b"));
        Eigen::MatrixXd dattn_in = nn::attention_bwd(cfg, p, Lp + "attn.", dh, bt.attn, g);
        dh += nn::layernorm_bwd(dattn_in, p.at(Lp + "ln1.g"), bt.ln1, g.at(Lp + "ln1.g"),
                                g.at(Lp + "ln1.b"));
    }

    g.at("step_emb").row(tape.n) += dh.colwise().sum();
    g.at("tok.W") += tape.features.transpose() * dh;
    g.at("tok.b").row(0) += dh.colwise().sum();
}

// ---------------------------------------------------------------------------
// Cross-view denoiser. View 0 carries the clean conditioning sequence; views
// 1..V-1 carry noisy inputs and are the only ones projected to outputs.

struct XAttnTape {
    std::vector<Eigen::MatrixXd> in;       // per view, T x d (post-norm)
    std::vector<Eigen::MatrixXd> Q, K, V;  // per view, T x d
    // Per head: T rows, each the flattened V x V attention matrix at time t.
    std::vector<Eigen::MatrixXd> A;
    std::vector<Eigen::MatrixXd> O;  // per view, T x d
};

struct MvBlockTape {
    std::vector<nn::LnTape> ln1;
    std::vector<nn::AttnTape> attn;
    std::vector<nn::LnTape> lnx;
    XAttnTape xattn;
    std::vector<nn::LnTape> ln2;
    std::vector<nn::FfnTape> ffn;
};

struct MvTape {
    std::vector<Eigen::MatrixXd> features;  // per view, T x 2J
    int n = 0;
    bool skip_self_attention = false;
    std::vector<MvBlockTape> blocks;
    std::vector<nn::LnTape> final_ln;
    std::vector<Eigen::MatrixXd> final_h;
};

namespace detail {

// Tokens at the same time index across views attend to one another.
inline void xattn_fwd(const DenoiserConfig& cfg, const ParamStore& p, const std::string& prefix,
                      const std::vector<Eigen::MatrixXd>& in, XAttnTape& tape,
                      std::vector<Eigen::MatrixXd>& out) {
    const int V = cfg.view_count;
    const int T = static_cast<int>(in[0].rows());
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    tape.in = in;
    tape.Q.resize(V);
    tape.K.resize(V);
    tape.V.resize(V);
    for (int v = 0; v < V; ++v) {
        tape.Q[v] = (in[v] * p.at(prefix + "Wq")).rowwise() + p.at(prefix + "bq").row(0);
        tape.K[v] = (in[v] * p.at(prefix + "Wk")).rowwise() + p.at(prefix + "bk").row(0);
        tape.V[v] = (in[v] * p.at(prefix + "Wv")).rowwise() + p.at(prefix + "bv").row(0);
    }
    tape.A.assign(cfg.n_heads, Eigen::MatrixXd::Zero(T, V * V));
    tape.O.assign(V, Eigen::MatrixXd::Zero(T, cfg.d_model));

    for (int h = 0; h < cfg.n_heads; ++h) {
        for (int t = 0; t < T; ++t) {
            Eigen::MatrixXd Qt(V, dh), Kt(V, dh), Vt(V, dh);
            for (int v = 0; v < V; ++v) {
                Qt.row(v) = tape.Q[v].row(t).segment(h * dh, dh);
                Kt.row(v) = tape.K[v].row(t).segment(h * dh, dh);
                Vt.row(v) = tape.V[v].row(t).segment(h * dh, dh);
            }
            Eigen::MatrixXd S = scale * (Qt * Kt.transpose());
            Eigen::MatrixXd A(V, V);
            for (int v = 0; v < V; ++v) {
                double mx = S.row(v).maxCoeff();
                A.row(v) = (S.row(v).array() - mx).exp();
                A.row(v) /= A.row(v).sum();
            }
            Eigen::MatrixXd Ot = A * Vt;
            for (int v = 0; v < V; ++v) {
                tape.O[v].row(t).segment(h * dh, dh) = Ot.row(v);
                tape.A[h].row(t).segment(v * V, V) = A.row(v);
            }
        }
    }
    out.resize(V);
    for (int v = 0; v < V; ++v)
        out[v] = (tape.O[v] * p.at(prefix + "Wo")).rowwise() + p.at(prefix + "bo").row(0);
}

inline void xattn_bwd(const DenoiserConfig& cfg, const ParamStore& p, const std::string& prefix,
                      const std::vector<Eigen::MatrixXd>& dout, const XAttnTape& tape,
                      ParamStore& g, std::vector<Eigen::MatrixXd>& din) {
    const int V = cfg.view_count;
    const int T = static_cast<int>(dout[0].rows());
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Eigen::MatrixXd> dO(V);
    for (int v = 0; v < V; ++v) {
        g.at(prefix + "Wo") += tape.O[v].transpose() * dout[v];
        g.at(prefix + "bo").row(0) += dout[v].colwise().sum();
        dO[v] = dout[v] * p.at(prefix + "Wo").transpose();
    }

    std::vector<Eigen::MatrixXd> dQ(V, Eigen::MatrixXd::Zero(T, cfg.d_model));
    std::vector<Eigen::MatrixXd> dK(V, Eigen::MatrixXd::Zero(T, cfg.d_model));
    std::vector<Eigen::MatrixXd> dV(V, Eigen::MatrixXd::Zero(T, cfg.d_model));
    for (int h = 0; h < cfg.n_heads; ++h) {
        for (int t = 0; t < T; ++t) {
            Eigen::MatrixXd Qt(V, dh), Kt(V, dh), Vt(V, dh), dOt(V, dh), A(V, V);
            for (int v = 0; v < V; ++v) {
                Qt.row(v) = tape.Q[v].row(t).segment(h * dh, dh);
                Kt.row(v) = tape.K[v].row(t).segment(h * dh, dh);
                Vt.row(v) = tape.V[v].row(t).segment(h * dh, dh);
                dOt.row(v) = dO[v].row(t).segment(h * dh, dh);
                A.row(v) = tape.A[h].row(t).segment(v * V, V);
            }
            Eigen::MatrixXd dA = dOt * Vt.transpose();
            Eigen::MatrixXd dVt = A.transpose() * dOt;
            Eigen::MatrixXd dS(V, V);
            for (int v = 0; v < V; ++v) {
                double dot = A.row(v).cwiseProduct(dA.row(v)).sum();
                dS.row(v) = (A.row(v).array() * (dA.row(v).array() - dot)).matrix();
            }
            Eigen::MatrixXd dQt = scale * (dS * Kt);
            Eigen::MatrixXd dKt = scale * (dS.transpose() * Qt);
            for (int v = 0; v < V; ++v) {
                dQ[v].row(t).segment(h * dh, dh) += dQt.row(v);
                dK[v].row(t).segment(h * dh, dh) += dKt.row(v);
                dV[v].row(t).segment(h * dh, dh) += dVt.row(v);
            }
        }
    }

    din.assign(V, Eigen::MatrixXd());
    for (int v = 0; v < V; ++v) {
        g.at(prefix + "Wq") += tape.in[v].transpose() * dQ[v];
        g.at(prefix + "bq").row(0) += dQ[v].colwise().sum();
        g.at(prefix + "Wk") += tape.in[v].transpose() * dK[v];
        g.at(prefix + "bk").row(0) += dK[v].colwise().sum();
        g.at(prefix + "Wv") += tape.in[v].transpose() * dV[v];
        g.at(prefix + "bv").row(0) += dV[v].colwise().sum();
        din[v] = dQ[v] * p.at(prefix + "Wq").transpose() + dK[v] * p.at(prefix + "Wk").transpose() +
                 dV[v] * p.at(prefix + "Wv").transpose();
    }
}

inline void check_mv_shapes(const DenoiserConfig& cfg, const std::vector<Pose2DSequence>& x_n_views,
                            int n, const Pose2DSequence& x_cond) {
    if (cfg.view_count < 2) throw ArgumentError("mv_forward: config is single-view");
    if (static_cast<int>(x_n_views.size()) != cfg.view_count)
        throw ArgumentError("mv_forward: expected " + std::to_string(cfg.view_count) + " views");
    const int T = x_cond.frame_count();
    if (T < 1 || T > cfg.max_T) throw ArgumentError("mv_forward: T outside [1, max_T]");
    if (x_cond.joint_count() != cfg.joint_count)
        throw ArgumentError("mv_forward: conditioning joint count mismatch");
    for (const auto& v : x_n_views)
        if (v.frame_count() != T || v.joint_count() != cfg.joint_count)
            throw ArgumentError("mv_forward: view shape mismatch");
    if (n < 0 || n > cfg.n_steps) throw ArgumentError("mv_forward: step outside embedding table");
}

}  // namespace detail

// x_n_views must have V entries; slot 0 is ignored (the clean x_cond is
// embedded there instead). Returns predictions for views 1..V-1.
inline std::vector<Pose2DSequence> mv_forward_tape(const DenoiserConfig& cfg, const ParamStore& p,
                                                   const std::vector<Pose2DSequence>& x_n_views,
                                                   int n, const Pose2DSequence& x_cond,
                                                   MvTape& tape,
                                                   bool skip_self_attention = false) {
    detail::check_mv_shapes(cfg, x_n_views, n, x_cond);
    const int V = cfg.view_count;
    const int T = x_cond.frame_count();

    tape.n = n;
    tape.skip_self_attention = skip_self_attention;
    tape.features.resize(V);
    tape.features[0] = x_cond.data;
    for (int v = 1; v < V; ++v) tape.features[v] = x_n_views[v].data;

    Eigen::MatrixXd pe = nn::positional_encoding(T, cfg.d_model);
    std::vector<Eigen::MatrixXd> h(V);
    for (int v = 0; v < V; ++v) {
        h[v] = (tape.features[v] * p.at("tok.W")).rowwise() + p.at("tok.b").row(0);
        h[v] += pe;
        h[v].rowwise() += p.at("step_emb").row(n);
        h[v].rowwise() += p.at("view_emb").row(v);
    }

    tape.blocks.assign(cfg.n_layers, MvBlockTape());
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string Lp = "layer" + std::to_string(i) + ".";
        MvBlockTape& bt = tape.blocks[i];
        bt.ln1.resize(V);
        bt.attn.resize(V);
        bt.lnx.resize(V);
        bt.ln2.resize(V);
        bt.ffn.resize(V);
        if (!skip_self_attention) {
            for (int v = 0; v < V; ++v) {
                Eigen::MatrixXd a_in =
                    nn::layernorm_fwd(h[v], p.at(Lp + "ln1.g"), p.at(Lp + "ln1.b"), bt.ln1[v]);
                h[v] += nn::attention_fwd(cfg, p, Lp + "attn.", a_in, bt.attn[v]);
            }
        }
        std::vector<Eigen::MatrixXd> x_in(V);
        for (int v = 0; v < V; ++v)
            x_in[v] = nn::layernorm_fwd(h[v], p.at(Lp + "lnx.g"), p.at(Lp + "lnx.b"), bt.lnx[v]);
        std::vector<Eigen::MatrixXd> x_out;
        detail::xattn_fwd(cfg, p, Lp + "xattn.", x_in, bt.xattn, x_out);
        for (int v = 0; v < V; ++v) h[v] += x_out[v];
        for (int v = 0; v < V; ++v) {
            Eigen::MatrixXd f_in =
                nn::layernorm_fwd(h[v], p.at(Lp + "ln2.g"), p.at(Lp + "ln2.b"), bt.ln2[v]);
            h[v] += nn::ffn_fwd(p, Lp + "ffn.", f_in, bt.ffn[v]);
        }
    }

    tape.final_ln.resize(V);
    tape.final_h.resize(V);
    std::vector<Pose2DSequence> out;
    out.reserve(V - 1);
    for (int v = 1; v < V; ++v) {
        tape.final_h[v] =
            nn::layernorm_fwd(h[v], p.at("final_ln.g"), p.at("final_ln.b"), tape.final_ln[v]);
        out.emplace_back(
            Eigen::MatrixXd((tape.final_h[v] * p.at("out.W")).rowwise() + p.at("out.b").row(0)));
    }
    return out;
}

inline std::vector<Pose2DSequence> mv_forward(const DenoiserConfig& cfg, const ParamStore& p,
                                              const std::vector<Pose2DSequence>& x_n_views, int n,
                                              const Pose2DSequence& x_cond,
                                              bool skip_self_attention = false) {
    MvTape tape;
    return mv_forward_tape(cfg, p, x_n_views, n, x_cond, tape, skip_self_attention);
}

// dY has V-1 entries (gradients for views 1..V-1).
inline void mv_backward(const DenoiserConfig& cfg, const ParamStore& p, const MvTape& tape,
                        const std::vector<Eigen::MatrixXd>& dY, ParamStore& g) {
    const int V = cfg.view_count;
    if (static_cast<int>(dY.size()) != V - 1)
        throw ArgumentError("mv_backward: expected V-1 output gradients");
    const int T = static_cast<int>(tape.features[0].rows());

    std::vector<Eigen::MatrixXd> dh(V, Eigen::MatrixXd::Zero(T, cfg.d_model));
    for (int v = 1; v < V; ++v) {
        const Eigen::MatrixXd& dy = dY[v - 1];
        g.at("out.W") += tape.final_h[v].transpose() * dy;
        g.at("out.b").row(0) += dy.colwise().sum();
        Eigen::MatrixXd d = dy * p.at("out.W").transpose();
        dh[v] = nn::layernorm_bwd(d, p.at("final_ln.g"), tape.final_ln[v], g.at("final_ln.g"),
                                  g.at("final_ln.b"));
    }

    for (int i = cfg.n_layers - 1; i >= 0; --i) {
        std::string Lp = "layer" + std::to_string(i) + ".";
        const MvBlockTape& bt = tape.blocks[i];
        for (int v = 0; v < V; ++v) {
            Eigen::MatrixXd dffn_in = nn::ffn_bwd(p, Lp + "ffn.", dh[v], bt.ffn[v], g);
            dh[v] += nn::layernorm_bwd(dffn_in, p.at(Lp + "ln2.g"), bt.ln2[v], g.at(Lp + "ln2.g"),
                                       g.at(Lp + "ln2.b"));
        }
        std::vector<Eigen::MatrixXd> dxattn_in;
        detail::xattn_bwd(cfg, p, Lp + "xattn.", dh, bt.xattn, g, dxattn_in);
        for (int v = 0; v < V; ++v)
            dh[v] += nn::layernorm_bwd(dxattn_in[v], p.at(Lp + "lnx.g"), bt.lnx[v],
                                       g.at(Lp + "lnx.g"), g.at(Lp + "lnx.b"));
        if (!tape.skip_self_attention) {
            for (int v = 0; v < V; ++v) {
                Eigen::MatrixXd dattn_in =
                    nn::attention_bwd(cfg, p, Lp + "attn.", dh[v], bt.attn[v], g);
                dh[v] += nn::layernorm_bwd(dattn_in, p.at(Lp + "ln1.g"), bt.ln1[v],
                                           g.at(Lp + "ln1.g"), g.at(Lp + "ln1.b"));
            }
        }
    }

    for (int v = 0; v < V; ++v) {
        g.at("step_emb").row(tape.n) += dh[v].colwise().sum();
        g.at("view_emb").row(v) += dh[v].colwise().sum();
        g.at("tok.W") += tape.features[v].transpose() * dh[v];
        g.at("tok.b").row(0) += dh[v].colwise().sum();
    }
}

}  // namespace mvlift
