// AdamW with decoupled weight decay, global gradient-norm clipping and a
// linear-warmup/cosine-decay schedule. Moments live in f32; parameters stay in
// bf16 and are updated through f32 staging. Non-finite gradients flow through
// the moment updates untouched, so the Inf/NaN failure modes of the update
// rule are reproducible exactly.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sdcforge/matrix.hpp"
#include "sdcforge/model.hpp"

namespace sdcforge {

struct OptimizerHyper {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    float clip_threshold = 1.0f;
    bool clip_enabled = true;
};

struct OptimizerState {
    OptimizerHyper hyper;
    std::vector<MatF32> m;  // first moments, one per parameter group
    std::vector<MatF32> v;  // second moments
    std::uint64_t t = 0;    // completed steps

    static OptimizerState init(const ParameterSet& params, OptimizerHyper hyper = {}) {
        OptimizerState s;
        s.hyper = hyper;
        s.m.reserve(params.groups.size());
        s.v.reserve(params.groups.size());
        for (const auto& g : params.groups) {
            s.m.emplace_back(g.w.rows, g.w.cols);
            s.v.emplace_back(g.w.rows, g.w.cols);
        }
        return s;
    }
};

struct ScheduleConfig {
    float lr_max = 1e-3f;
    std::uint64_t warmup_steps = 100;
    std::uint64_t total_steps = 10000;
};

// Linear ramp 0 -> lr_max over warmup_steps, cosine decay to 0 at total_steps.
inline float lr_schedule(const ScheduleConfig& cfg, std::uint64_t step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.lr_max * static_cast<float>(step) / static_cast<float>(cfg.warmup_steps);
    }
    if (step >= cfg.total_steps) return 0.0f;
    const double frac = static_cast<double>(step - cfg.warmup_steps) /
                        static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_max * 0.5f * (1.0f + static_cast<float>(std::cos(3.14159265358979323846 * frac)));
}

// L2 norm over all gradient entries, f32 accumulation in group order then
// row-major order. Squaring huge-but-finite entries overflows to +Inf here,
// which is exactly the collapse trigger downstream.
inline float global_grad_norm(const GradientSet& grads) {
    float acc = 0.0f;
    for (const auto& g : grads.g) {
        for (const Bf16 v : g.data) {
            const float f = bf16_decode(v);
            acc += f * f;
        }
    }
    return std::sqrt(acc);
}

// If the pre-clip norm exceeds tau, scale every entry by tau/norm. A norm of
// +Inf makes the scale exactly 0: finite entries clip to 0, non-finite entries
// become NaN (0 * Inf).
inline GradientSet clip_gradients(const GradientSet& grads, float norm_pre, float tau) {
    if (norm_pre <= tau) return grads;
    const float scale = tau / norm_pre;
    GradientSet out;
    out.g.reserve(grads.g.size());
    for (const auto& g : grads.g) {
        Bf16Matrix s(g.rows, g.cols);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            s.data[i] = bf16_encode(bf16_decode(g.data[i]) * scale);
        }
        out.g.push_back(std::move(s));
    }
    return out;
}

struct UpdateReport {
    std::vector<float> group_update_rms;  // RMS of the adaptive update per group
    float r_t = 0.0f;                     // max of group_update_rms
    float grad_norm_pre = std::numeric_limits<float>::quiet_NaN();
    float grad_norm_post = std::numeric_limits<float>::quiet_NaN();
    float lr = 0.0f;
};

// One AdamW step over all groups. The adaptive component of each update is
// u = lr * m_hat / (sqrt(v_hat) + eps); the report carries its per-group RMS
// and the max across groups.
inline UpdateReport adamw_step(ParameterSet& params, const GradientSet& grads,
                               OptimizerState& state, float lr) {
    if (grads.g.size() != params.groups.size()) {
        throw std::invalid_argument("adamw_step: gradient/parameter group mismatch");
    }
    const OptimizerHyper& h = state.hyper;
    state.t += 1;
    const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta1),
                                                         static_cast<double>(state.t)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(h.beta2),
                                                         static_cast<double>(state.t)));

    UpdateReport report;
    report.lr = lr;
    report.group_update_rms.resize(params.groups.size());

    bool any_nan = false;
    float r_t = 0.0f;
    for (std::size_t gi = 0; gi < params.groups.size(); ++gi) {
        ParamGroup& pg = params.groups[gi];
        const Bf16Matrix& gm = grads.g[gi];
        require_same_shape(pg.w, gm, "adamw_step");
        MatF32& m = state.m[gi];
        MatF32& v = state.v[gi];
        const float decay = pg.decay ? lr * h.weight_decay : 0.0f;

        float sum_u2 = 0.0f;
        for (std::size_t e = 0; e < gm.data.size(); ++e) {
            const float g = bf16_decode(gm.data[e]);
            m.data[e] = h.beta1 * m.data[e] + (1.0f - h.beta1) * g;
            v.data[e] = h.beta2 * v.data[e] + (1.0f - h.beta2) * g * g;
            const float m_hat = m.data[e] / bc1;
            const float v_hat = v.data[e] / bc2;
            const float u = lr * (m_hat / (std::sqrt(v_hat) + h.eps));
            const float theta = bf16_decode(pg.w.data[e]);
            pg.w.data[e] = bf16_encode(theta - u - decay * theta);
            sum_u2 += u * u;
        }
        const float rms = std::sqrt(sum_u2 / static_cast<float>(gm.data.size()));
        report.group_update_rms[gi] = rms;
        if (std::isnan(rms)) {
            any_nan = true;
        } else if (rms > r_t) {
            r_t = rms;
        }
    }
    report.r_t = any_nan ? std::numeric_limits<float>::quiet_NaN() : r_t;
    return report;
}

}  // namespace sdcforge
