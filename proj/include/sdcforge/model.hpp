// Decoder-only transformer at desk scale: RMSNorm, causal attention with
// learned positional embeddings, SiLU-gated FFN, byte-level vocab. Every
// matmul in both passes goes through gemm()/gemm_blocks() with a numbered
// site id in a fixed execution order, which is what makes targeted fault
// injection and site enumeration possible.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/gemm.hpp"
#include "sdcforge/kernels.hpp"
#include "sdcforge/matrix.hpp"
#include "sdcforge/rng.hpp"

namespace sdcforge {

struct ModelConfig {
    std::uint32_t vocab_size = 256;
    std::uint32_t d_model = 64;
    std::uint32_t n_heads = 4;
    std::uint32_t n_layers = 2;
    std::uint32_t seq_len = 64;
    std::uint32_t ffn_mult = 4;

    std::uint32_t head_dim() const { return d_model / n_heads; }
    std::uint32_t ffn_dim() const { return d_model * ffn_mult; }

    void validate() const {
        if (vocab_size < 2) throw std::invalid_argument("model.vocab_size: must be >= 2");
        if (d_model < 1 || n_heads < 1 || n_layers < 1 || seq_len < 1 || ffn_mult < 1) {
            throw std::invalid_argument("model: all dimensions must be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw std::invalid_argument("model.d_model: must be divisible by n_heads");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamGroup {
    std::string name;
    bool decay = true;      // weight decay applies to matrices but not norm gains
    bool norm_gain = false;
    Bf16Matrix w;
};

// The ordered parameter groups; group order is stable and defines the group
// set the optimizer reports R_t over.
struct ParameterSet {
    ModelConfig config;
    std::vector<ParamGroup> groups;

    static constexpr std::size_t kPerLayer = 9;

    std::size_t idx_tok() const { return 0; }
    std::size_t idx_pos() const { return 1; }
    std::size_t layer_base(std::size_t l) const { return 2 + l * kPerLayer; }
    std::size_t idx_attn_norm(std::size_t l) const { return layer_base(l) + 0; }
    std::size_t idx_wq(std::size_t l) const { return layer_base(l) + 1; }
    std::size_t idx_wk(std::size_t l) const { return layer_base(l) + 2; }
    std::size_t idx_wv(std::size_t l) const { return layer_base(l) + 3; }
    std::size_t idx_wo(std::size_t l) const { return layer_base(l) + 4; }
    std::size_t idx_ffn_norm(std::size_t l) const { return layer_base(l) + 5; }
    std::size_t idx_w_up(std::size_t l) const { return layer_base(l) + 6; }
    std::size_t idx_w_gate(std::size_t l) const { return layer_base(l) + 7; }
    std::size_t idx_w_down(std::size_t l) const { return layer_base(l) + 8; }
    std::size_t idx_final_norm() const { return 2 + config.n_layers * kPerLayer; }
    std::size_t idx_head() const { return 3 + config.n_layers * kPerLayer; }

    const Bf16Matrix& at(std::size_t idx) const { return groups[idx].w; }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.w.size();
        return n;
    }
};

// Gradients, one bf16 matrix per parameter group, same order as ParameterSet.
struct GradientSet {
    std::vector<Bf16Matrix> g;
};

struct Batch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<std::int32_t> tokens;   // [batch, seq], row-major
    std::vector<std::int32_t> targets;  // same shape; -1 = excluded from the loss
};

// Everything the backward pass needs, plus per-step telemetry inputs.
struct LayerActs {
    Bf16Matrix x_in;      // residual stream entering the layer
    Bf16Matrix h_attn;    // rmsnorm(x_in)
    Bf16Matrix q, k, v;   // projections, merged [N, d]
    std::vector<Bf16Matrix> probs;  // post-softmax attention, [S, S] per (batch, head)
    Bf16Matrix ctx;       // attention-weighted values, merged [N, d]
    Bf16Matrix x_mid;     // residual after attention
    Bf16Matrix h_ffn;     // rmsnorm(x_mid)
    Bf16Matrix up, gate;  // FFN projections [N, F]
    Bf16Matrix act;       // silu(gate) * up
};

struct ForwardRecord {
    float loss = 0.0f;
    float max_attn_logit = 0.0f;  // max pre-softmax score (post 1/sqrt(dh) scale)
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<LayerActs> layers;
    Bf16Matrix x_final;    // residual stream after the last layer
    Bf16Matrix h_final;    // rmsnorm(x_final)
    Bf16Matrix logits;     // [N, vocab]
};

// ---------------------------------------------------------------------------
// GEMM site layout
// ---------------------------------------------------------------------------

struct SiteInfo {
    GemmSiteId id;
    std::string label;
    bool attention_score = false;  // the QK^T launch that produces attention logits
};

// Maps (layer, role) to stable site ordinals. Forward and backward code and
// enumerate_gemm_sites() all derive ordinals from this single layout, so the
// labeling cannot drift from the execution order.
struct SiteLayout {
    std::uint32_t n_layers = 0;

    static constexpr std::uint32_t kFwdPerLayer = 9;
    static constexpr std::uint32_t kBwdPerLayer = 18;

    // forward, per layer
    GemmSiteId q_proj(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 0}; }
    GemmSiteId k_proj(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 1}; }
    GemmSiteId v_proj(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 2}; }
    GemmSiteId attn_scores(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 3}; }
    GemmSiteId attn_ctx(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 4}; }
    GemmSiteId o_proj(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 5}; }
    GemmSiteId ffn_up(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 6}; }
    GemmSiteId ffn_gate(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 7}; }
    GemmSiteId ffn_down(std::uint32_t l) const { return {Pass::Forward, l * kFwdPerLayer + 8}; }
    GemmSiteId lm_head() const { return {Pass::Forward, n_layers * kFwdPerLayer}; }
    std::uint32_t forward_count() const { return n_layers * kFwdPerLayer + 1; }

    // backward; layers run in reverse execution order
    GemmSiteId head_dx() const { return {Pass::Backward, 0}; }
    GemmSiteId head_dw() const { return {Pass::Backward, 1}; }
    std::uint32_t bwd_base(std::uint32_t l) const { return 2 + (n_layers - 1 - l) * kBwdPerLayer; }
    GemmSiteId ffn_down_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 0}; }
    GemmSiteId ffn_down_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 1}; }
    GemmSiteId ffn_gate_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 2}; }
    GemmSiteId ffn_gate_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 3}; }
    GemmSiteId ffn_up_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 4}; }
    GemmSiteId ffn_up_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 5}; }
    GemmSiteId o_proj_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 6}; }
    GemmSiteId o_proj_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 7}; }
    GemmSiteId attn_ctx_dp(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 8}; }
    GemmSiteId attn_ctx_dv(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 9}; }
    GemmSiteId attn_scores_dq(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 10}; }
    GemmSiteId attn_scores_dk(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 11}; }
    GemmSiteId q_proj_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 12}; }
    GemmSiteId q_proj_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 13}; }
    GemmSiteId k_proj_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 14}; }
    GemmSiteId k_proj_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 15}; }
    GemmSiteId v_proj_dx(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 16}; }
    GemmSiteId v_proj_dw(std::uint32_t l) const { return {Pass::Backward, bwd_base(l) + 17}; }
    std::uint32_t backward_count() const { return 2 + n_layers * kBwdPerLayer; }
};

inline std::vector<SiteInfo> enumerate_gemm_sites(const ModelConfig& cfg) {
    cfg.validate();
    const SiteLayout ly{cfg.n_layers};
    std::vector<SiteInfo> out;
    out.reserve(ly.forward_count() + ly.backward_count());
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        out.push_back({ly.q_proj(l), p + "q_proj", false});
        out.push_back({ly.k_proj(l), p + "k_proj", false});
        out.push_back({ly.v_proj(l), p + "v_proj", false});
        out.push_back({ly.attn_scores(l), p + "attn_scores", true});
        out.push_back({ly.attn_ctx(l), p + "attn_ctx", false});
        out.push_back({ly.o_proj(l), p + "o_proj", false});
        out.push_back({ly.ffn_up(l), p + "ffn_up", false});
        out.push_back({ly.ffn_gate(l), p + "ffn_gate", false});
        out.push_back({ly.ffn_down(l), p + "ffn_down", false});
    }
    out.push_back({ly.lm_head(), "lm_head", false});
    out.push_back({ly.head_dx(), "lm_head.dx", false});
    out.push_back({ly.head_dw(), "lm_head.dw", false});
    for (std::uint32_t i = 0; i < cfg.n_layers; ++i) {
        const std::uint32_t l = cfg.n_layers - 1 - i;
        const std::string p = "layer" + std::to_string(l) + ".";
        out.push_back({ly.ffn_down_dx(l), p + "ffn_down.dx", false});
        out.push_back({ly.ffn_down_dw(l), p + "ffn_down.dw", false});
        out.push_back({ly.ffn_gate_dx(l), p + "ffn_gate.dx", false});
        out.push_back({ly.ffn_gate_dw(l), p + "ffn_gate.dw", false});
        out.push_back({ly.ffn_up_dx(l), p + "ffn_up.dx", false});
        out.push_back({ly.ffn_up_dw(l), p + "ffn_up.dw", false});
        out.push_back({ly.o_proj_dx(l), p + "o_proj.dx", false});
        out.push_back({ly.o_proj_dw(l), p + "o_proj.dw", false});
        out.push_back({ly.attn_ctx_dp(l), p + "attn_ctx.dp", false});
        out.push_back({ly.attn_ctx_dv(l), p + "attn_ctx.dv", false});
        out.push_back({ly.attn_scores_dq(l), p + "attn_scores.dq", false});
        out.push_back({ly.attn_scores_dk(l), p + "attn_scores.dk", false});
        out.push_back({ly.q_proj_dx(l), p + "q_proj.dx", false});
        out.push_back({ly.q_proj_dw(l), p + "q_proj.dw", false});
        out.push_back({ly.k_proj_dx(l), p + "k_proj.dx", false});
        out.push_back({ly.k_proj_dw(l), p + "k_proj.dw", false});
        out.push_back({ly.v_proj_dx(l), p + "v_proj.dx", false});
        out.push_back({ly.v_proj_dw(l), p + "v_proj.dw", false});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// Deterministic init: one splitmix-seeded gaussian stream per group, keyed by
// (seed, group index). All weight matrices use scale 1/sqrt(d_model); norm
// gains start at 1. The norms make the embedding scale a free choice, and a
// 1/sqrt(d) magnitude keeps finite-difference checks well conditioned.
inline ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    const std::size_t f = cfg.ffn_dim();
    const float proj_scale = 1.0f / std::sqrt(static_cast<float>(d));
    const float emb_scale = proj_scale;

    ParameterSet ps;
    ps.config = cfg;

    auto gaussian_group = [&](const std::string& name, std::size_t r, std::size_t c, float scale) {
        ParamGroup g;
        g.name = name;
        g.w = Bf16Matrix(r, c);
        GaussianStream gs{hash_mix(seed, ps.groups.size())};
        for (auto& v : g.w.data) v = bf16_encode(gs.next() * scale);
        ps.groups.push_back(std::move(g));
    };
    auto gain_group = [&](const std::string& name, std::size_t c) {
        ParamGroup g;
        g.name = name;
        g.decay = false;
        g.norm_gain = true;
        g.w = Bf16Matrix(1, c);
        for (auto& v : g.w.data) v = bf16_encode(1.0f);
        ps.groups.push_back(std::move(g));
    };

    gaussian_group("tok_embedding", cfg.vocab_size, d, emb_scale);
    gaussian_group("pos_embedding", cfg.seq_len, d, emb_scale);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        gain_group(p + "attn_norm", d);
        gaussian_group(p + "wq", d, d, proj_scale);
        gaussian_group(p + "wk", d, d, proj_scale);
        gaussian_group(p + "wv", d, d, proj_scale);
        gaussian_group(p + "wo", d, d, proj_scale);
        gain_group(p + "ffn_norm", d);
        gaussian_group(p + "w_up", d, f, proj_scale);
        gaussian_group(p + "w_gate", d, f, proj_scale);
        gaussian_group(p + "w_down", f, d, proj_scale);
    }
    gain_group("final_norm", d);
    gaussian_group("lm_head", d, cfg.vocab_size, proj_scale);
    return ps;
}

// ---------------------------------------------------------------------------
// Forward / backward helpers
// ---------------------------------------------------------------------------

namespace detail {

// [N, d] -> per-(batch, head) blocks of [S, dh], batch-major then head.
inline std::vector<Bf16Matrix> split_heads(const Bf16Matrix& m, std::size_t batch,
                                           std::size_t seq, std::size_t heads) {
    const std::size_t dh = m.cols / heads;
    std::vector<Bf16Matrix> blocks;
    blocks.reserve(batch * heads);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            Bf16Matrix blk(seq, dh);
            for (std::size_t s = 0; s < seq; ++s) {
                const Bf16* src = &m.data[(b * seq + s) * m.cols + h * dh];
                Bf16* dst = &blk.data[s * dh];
                for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
            blocks.push_back(std::move(blk));
        }
    }
    return blocks;
}

inline Bf16Matrix merge_heads(const std::vector<Bf16Matrix>& blocks, std::size_t batch,
                              std::size_t seq, std::size_t heads, std::size_t d) {
    const std::size_t dh = d / heads;
    Bf16Matrix m(batch * seq, d);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const Bf16Matrix& blk = blocks[b * heads + h];
            for (std::size_t s = 0; s < seq; ++s) {
                const Bf16* src = &blk.data[s * dh];
                Bf16* dst = &m.data[(b * seq + s) * d + h * dh];
                for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
        }
    }
    return m;
}

inline Bf16Matrix add_matrices(const Bf16Matrix& a, const Bf16Matrix& b) {
    require_same_shape(a, b, "add_matrices");
    Bf16Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        out.data[i] = bf16_encode(bf16_decode(a.data[i]) + bf16_decode(b.data[i]));
    }
    return out;
}

// Backward of y = rmsnorm(x) * gain, rows independent. Returns dx and adds the
// per-column gain gradient into dgain (f32 accumulator).
inline Bf16Matrix rmsnorm_backward(const Bf16Matrix& x, const Bf16Matrix& gain,
                                   const MatF32& dy, MatF32& dgain) {
    const std::size_t d = x.cols;
    Bf16Matrix dx(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
        float ss = 0.0f;
        for (std::size_t j = 0; j < d; ++j) {
            const float f = x.value(i, j);
            ss += f * f;
        }
        const float r = std::sqrt(ss / static_cast<float>(d) + kRmsNormEps);
        const float inv_r = 1.0f / r;
        float dot = 0.0f;  // sum_j dy_j * gain_j * x_j
        for (std::size_t j = 0; j < d; ++j) {
            dot += dy.at(i, j) * gain.value(0, j) * x.value(i, j);
        }
        const float scale = dot / (static_cast<float>(d) * r * r * r);
        for (std::size_t j = 0; j < d; ++j) {
            const float xv = x.value(i, j);
            dx.set(i, j, dy.at(i, j) * gain.value(0, j) * inv_r - xv * scale);
            dgain.at(0, j) += dy.at(i, j) * xv * inv_r;
        }
    }
    return dx;
}

inline MatF32 decode_f32(const Bf16Matrix& m) { return decode_matrix(m); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

inline ForwardRecord forward(const ParameterSet& params, const Batch& batch,
                             const GemmHook* hook = nullptr) {
    const ModelConfig& cfg = params.config;
    if (batch.seq_len != cfg.seq_len) throw std::invalid_argument("forward: batch seq_len mismatch");
    for (const std::int32_t t : batch.tokens) {
        if (t < 0 || static_cast<std::uint32_t>(t) >= cfg.vocab_size) {
            throw std::invalid_argument("forward: token out of vocab range");
        }
    }
    const std::size_t bsz = batch.batch_size;
    const std::size_t seq = cfg.seq_len;
    const std::size_t n = bsz * seq;
    const std::size_t d = cfg.d_model;
    const std::size_t heads = cfg.n_heads;
    const std::size_t dh = cfg.head_dim();
    const SiteLayout ly{cfg.n_layers};
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    ForwardRecord rec;
    rec.batch_size = bsz;
    rec.seq_len = seq;
    rec.layers.resize(cfg.n_layers);

    // token + positional embedding
    const Bf16Matrix& tok = params.at(params.idx_tok());
    const Bf16Matrix& pos = params.at(params.idx_pos());
    Bf16Matrix x(n, d);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t s = 0; s < seq; ++s) {
            const auto t = static_cast<std::size_t>(batch.tokens[b * seq + s]);
            for (std::size_t j = 0; j < d; ++j) {
                x.set(b * seq + s, j, tok.value(t, j) + pos.value(s, j));
            }
        }
    }

    float max_logit = -std::numeric_limits<float>::infinity();
    bool logit_nan = false;

    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        LayerActs& acts = rec.layers[l];
        acts.x_in = x;
        acts.h_attn = rmsnorm_rows(x, params.at(params.idx_attn_norm(l)));

        acts.q = gemm(acts.h_attn, params.at(params.idx_wq(l)), ly.q_proj(l), hook);
        acts.k = gemm(acts.h_attn, params.at(params.idx_wk(l)), ly.k_proj(l), hook);
        acts.v = gemm(acts.h_attn, params.at(params.idx_wv(l)), ly.v_proj(l), hook);

        const auto qb = detail::split_heads(acts.q, bsz, seq, heads);
        const auto kb = detail::split_heads(acts.k, bsz, seq, heads);
        const auto vb = detail::split_heads(acts.v, bsz, seq, heads);
        std::vector<Bf16Matrix> ktb;
        ktb.reserve(kb.size());
        for (const auto& m : kb) ktb.push_back(transpose(m));

        // raw scores = Q K^T, one grouped launch per layer
        const auto raw = gemm_blocks(qb, ktb, ly.attn_scores(l), hook);

        // scale, track the max visible logit, softmax over the causal prefix
        acts.probs.resize(raw.size());
        for (std::size_t g = 0; g < raw.size(); ++g) {
            Bf16Matrix scaled(seq, seq);
            for (std::size_t i = 0; i < seq; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    const float v = raw[g].value(i, j) * attn_scale;
                    scaled.set(i, j, v);
                    if (std::isnan(v)) {
                        logit_nan = true;
                    } else if (v > max_logit) {
                        max_logit = v;
                    }
                }
            }
            Bf16Matrix p(seq, seq);
            for (std::size_t i = 0; i < seq; ++i) {
                softmax_row_prefix(&scaled.data[i * seq], &p.data[i * seq], i + 1, seq);
            }
            acts.probs[g] = std::move(p);
        }

        const auto ctxb = gemm_blocks(acts.probs, vb, ly.attn_ctx(l), hook);
        acts.ctx = detail::merge_heads(ctxb, bsz, seq, heads, d);

        const Bf16Matrix attn_out = gemm(acts.ctx, params.at(params.idx_wo(l)), ly.o_proj(l), hook);
        acts.x_mid = detail::add_matrices(x, attn_out);

        acts.h_ffn = rmsnorm_rows(acts.x_mid, params.at(params.idx_ffn_norm(l)));
        acts.up = gemm(acts.h_ffn, params.at(params.idx_w_up(l)), ly.ffn_up(l), hook);
        acts.gate = gemm(acts.h_ffn, params.at(params.idx_w_gate(l)), ly.ffn_gate(l), hook);

        acts.act = Bf16Matrix(n, cfg.ffn_dim());
        for (std::size_t i = 0; i < acts.act.data.size(); ++i) {
            acts.act.data[i] =
                bf16_encode(silu_f32(bf16_decode(acts.gate.data[i])) * bf16_decode(acts.up.data[i]));
        }

        const Bf16Matrix ffn_out = gemm(acts.act, params.at(params.idx_w_down(l)), ly.ffn_down(l), hook);
        x = detail::add_matrices(acts.x_mid, ffn_out);
    }

    rec.x_final = x;
    rec.h_final = rmsnorm_rows(x, params.at(params.idx_final_norm()));
    rec.logits = gemm(rec.h_final, params.at(params.idx_head()), ly.lm_head(), hook);
    rec.loss = cross_entropy(rec.logits, batch.targets);
    rec.max_attn_logit = logit_nan ? std::numeric_limits<float>::quiet_NaN() : max_logit;
    return rec;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

inline GradientSet backward(const ParameterSet& params, const ForwardRecord& rec,
                            const Batch& batch, const GemmHook* hook = nullptr) {
    const ModelConfig& cfg = params.config;
    const std::size_t bsz = rec.batch_size;
    const std::size_t seq = rec.seq_len;
    const std::size_t n = bsz * seq;
    const std::size_t d = cfg.d_model;
    const std::size_t heads = cfg.n_heads;
    const std::size_t f = cfg.ffn_dim();
    const SiteLayout ly{cfg.n_layers};
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim()));

    GradientSet grads;
    grads.g.resize(params.groups.size());

    // d(loss)/d(logits): softmax minus one-hot over unmasked rows, / count
    std::size_t active_rows = 0;
    for (const std::int32_t t : batch.targets) {
        if (t >= 0) ++active_rows;
    }
    Bf16Matrix dlogits(n, cfg.vocab_size);
    if (active_rows > 0) {
        const float inv_count = 1.0f / static_cast<float>(active_rows);
        thread_local std::vector<float> prob;
        prob.resize(cfg.vocab_size);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int32_t t = batch.targets[i];
            if (t < 0) continue;  // row stays zero
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
                const float lv = rec.logits.value(i, j);
                if (lv > mx) mx = lv;
            }
            float sum = 0.0f;
            for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
                prob[j] = std::exp(rec.logits.value(i, j) - mx);
                sum += prob[j];
            }
            for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
                float g = prob[j] / sum;
                if (j == static_cast<std::size_t>(t)) g -= 1.0f;
                dlogits.set(i, j, g * inv_count);
            }
        }
    }

    // head: logits = h_final * W_head
    const Bf16Matrix dh_final_m =
        gemm(dlogits, transpose(params.at(params.idx_head())), ly.head_dx(), hook);
    grads.g[params.idx_head()] = gemm(transpose(rec.h_final), dlogits, ly.head_dw(), hook);

    MatF32 dgain_final(1, d);
    const Bf16Matrix dx_final = detail::rmsnorm_backward(
        rec.x_final, params.at(params.idx_final_norm()), detail::decode_f32(dh_final_m), dgain_final);
    grads.g[params.idx_final_norm()] = encode_matrix(dgain_final);

    // gradient of the residual stream, flowing top -> bottom
    MatF32 gx = detail::decode_f32(dx_final);

    for (std::uint32_t i = 0; i < cfg.n_layers; ++i) {
        const std::uint32_t l = cfg.n_layers - 1 - i;
        const LayerActs& acts = rec.layers[l];

        // ---- FFN block ----
        Bf16Matrix dffn_out(n, d);
        for (std::size_t e = 0; e < gx.data.size(); ++e) dffn_out.data[e] = bf16_encode(gx.data[e]);

        const Bf16Matrix da =
            gemm(dffn_out, transpose(params.at(params.idx_w_down(l))), ly.ffn_down_dx(l), hook);
        grads.g[params.idx_w_down(l)] =
            gemm(transpose(acts.act), dffn_out, ly.ffn_down_dw(l), hook);

        Bf16Matrix dup(n, f), dgate(n, f);
        for (std::size_t e = 0; e < da.data.size(); ++e) {
            const float dav = bf16_decode(da.data[e]);
            const float gv = bf16_decode(acts.gate.data[e]);
            const float uv = bf16_decode(acts.up.data[e]);
            const float s = 1.0f / (1.0f + std::exp(-gv));
            dup.data[e] = bf16_encode(dav * gv * s);                          // silu(g)
            dgate.data[e] = bf16_encode(dav * uv * s * (1.0f + gv * (1.0f - s)));
        }

        const Bf16Matrix dh2_gate =
            gemm(dgate, transpose(params.at(params.idx_w_gate(l))), ly.ffn_gate_dx(l), hook);
        grads.g[params.idx_w_gate(l)] =
            gemm(transpose(acts.h_ffn), dgate, ly.ffn_gate_dw(l), hook);
        const Bf16Matrix dh2_up =
            gemm(dup, transpose(params.at(params.idx_w_up(l))), ly.ffn_up_dx(l), hook);
        grads.g[params.idx_w_up(l)] = gemm(transpose(acts.h_ffn), dup, ly.ffn_up_dw(l), hook);

        MatF32 dh2(n, d);
        for (std::size_t e = 0; e < dh2.data.size(); ++e) {
            dh2.data[e] = bf16_decode(dh2_gate.data[e]) + bf16_decode(dh2_up.data[e]);
        }

        MatF32 dgain_ffn(1, d);
        const Bf16Matrix dx_mid_norm =
            detail::rmsnorm_backward(acts.x_mid, params.at(params.idx_ffn_norm(l)), dh2, dgain_ffn);
        grads.g[params.idx_ffn_norm(l)] = encode_matrix(dgain_ffn);

        // residual: d(x_mid) = d(x_out) + norm path
        for (std::size_t e = 0; e < gx.data.size(); ++e) gx.data[e] += bf16_decode(dx_mid_norm.data[e]);

        // ---- attention block ----
        Bf16Matrix dattn_out(n, d);
        for (std::size_t e = 0; e < gx.data.size(); ++e) dattn_out.data[e] = bf16_encode(gx.data[e]);

        const Bf16Matrix dctx =
            gemm(dattn_out, transpose(params.at(params.idx_wo(l))), ly.o_proj_dx(l), hook);
        grads.g[params.idx_wo(l)] = gemm(transpose(acts.ctx), dattn_out, ly.o_proj_dw(l), hook);

        const auto dctx_b = detail::split_heads(dctx, bsz, seq, heads);
        const auto qb = detail::split_heads(acts.q, bsz, seq, heads);
        const auto kb = detail::split_heads(acts.k, bsz, seq, heads);
        const auto vb = detail::split_heads(acts.v, bsz, seq, heads);

        std::vector<Bf16Matrix> vtb;
        vtb.reserve(vb.size());
        for (const auto& m : vb) vtb.push_back(transpose(m));
        const auto dp_b = gemm_blocks(dctx_b, vtb, ly.attn_ctx_dp(l), hook);

        std::vector<Bf16Matrix> ptb;
        ptb.reserve(acts.probs.size());
        for (const auto& m : acts.probs) ptb.push_back(transpose(m));
        const auto dv_b = gemm_blocks(ptb, dctx_b, ly.attn_ctx_dv(l), hook);

        // softmax backward over the causal prefix, then undo the 1/sqrt(dh)
        // scaling to get the gradient w.r.t. the raw QK^T output
        std::vector<Bf16Matrix> ds_b(dp_b.size());
        for (std::size_t g = 0; g < dp_b.size(); ++g) {
            Bf16Matrix ds(seq, seq);
            for (std::size_t row = 0; row < seq; ++row) {
                float dot = 0.0f;
                for (std::size_t j = 0; j <= row; ++j) {
                    dot += dp_b[g].value(row, j) * acts.probs[g].value(row, j);
                }
                for (std::size_t j = 0; j <= row; ++j) {
                    const float pv = acts.probs[g].value(row, j);
                    ds.set(row, j, pv * (dp_b[g].value(row, j) - dot) * attn_scale);
                }
            }
            ds_b[g] = std::move(ds);
        }

        const auto dq_b = gemm_blocks(ds_b, kb, ly.attn_scores_dq(l), hook);
        std::vector<Bf16Matrix> dstb;
        dstb.reserve(ds_b.size());
        for (const auto& m : ds_b) dstb.push_back(transpose(m));
        const auto dk_b = gemm_blocks(dstb, qb, ly.attn_scores_dk(l), hook);

        const Bf16Matrix dq = detail::merge_heads(dq_b, bsz, seq, heads, d);
        const Bf16Matrix dk = detail::merge_heads(dk_b, bsz, seq, heads, d);
        const Bf16Matrix dv = detail::merge_heads(dv_b, bsz, seq, heads, d);

        const Bf16Matrix dh1_q =
            gemm(dq, transpose(params.at(params.idx_wq(l))), ly.q_proj_dx(l), hook);
        grads.g[params.idx_wq(l)] = gemm(transpose(acts.h_attn), dq, ly.q_proj_dw(l), hook);
        const Bf16Matrix dh1_k =
            gemm(dk, transpose(params.at(params.idx_wk(l))), ly.k_proj_dx(l), hook);
        grads.g[params.idx_wk(l)] = gemm(transpose(acts.h_attn), dk, ly.k_proj_dw(l), hook);
        const Bf16Matrix dh1_v =
            gemm(dv, transpose(params.at(params.idx_wv(l))), ly.v_proj_dx(l), hook);
        grads.g[params.idx_wv(l)] = gemm(transpose(acts.h_attn), dv, ly.v_proj_dw(l), hook);

        MatF32 dh1(n, d);
        for (std::size_t e = 0; e < dh1.data.size(); ++e) {
            dh1.data[e] = bf16_decode(dh1_q.data[e]) + bf16_decode(dh1_k.data[e]) +
                          bf16_decode(dh1_v.data[e]);
        }

        MatF32 dgain_attn(1, d);
        const Bf16Matrix dx_in_norm =
            detail::rmsnorm_backward(acts.x_in, params.at(params.idx_attn_norm(l)), dh1, dgain_attn);
        grads.g[params.idx_attn_norm(l)] = encode_matrix(dgain_attn);

        for (std::size_t e = 0; e < gx.data.size(); ++e) gx.data[e] += bf16_decode(dx_in_norm.data[e]);
    }

    // embeddings: scatter-add of the remaining residual gradient
    MatF32 dtok(cfg.vocab_size, d);
    MatF32 dpos(cfg.seq_len, d);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t s = 0; s < seq; ++s) {
            const auto t = static_cast<std::size_t>(batch.tokens[b * seq + s]);
            const float* src = &gx.data[(b * seq + s) * d];
            for (std::size_t j = 0; j < d; ++j) {
                dtok.at(t, j) += src[j];
                dpos.at(s, j) += src[j];
            }
        }
    }
    grads.g[params.idx_tok()] = encode_matrix(dtok);
    grads.g[params.idx_pos()] = encode_matrix(dpos);
    return grads;
}

}  // namespace sdcforge
