// Online detector for harmful parameter updates. Signals: the step change of
// the max RMS update R_t and positive jumps of the pre-clip gradient norm.
// A step is anomalous when either signal is non-finite, or when
// dR > mu / (alpha * sqrt(dG)) with mu the warm-up mean of dR.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>

namespace sdcforge {

struct DetectorConfig {
    std::uint64_t warmup_len = 100;  // number of dR samples absorbed into mu
    float alpha = 0.05f;             // sensitivity in (0, 1]
    std::uint64_t min_steps = 10;    // threshold rule stays inactive this long

    void validate() const {
        if (!(alpha > 0.0f && alpha <= 1.0f)) {
            throw std::invalid_argument("detector.alpha: must be in (0, 1]");
        }
        if (warmup_len < 1) throw std::invalid_argument("detector.warmup_len: must be >= 1");
    }
};

inline bool float_bits_equal(float a, float b) {
    return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
}

struct DetectorState {
    DetectorConfig config;
    float prev_r = std::numeric_limits<float>::quiet_NaN();
    float prev_g = std::numeric_limits<float>::quiet_NaN();
    float sum_dr = 0.0f;       // warm-up accumulator for mu
    std::uint64_t samples = 0; // dR samples absorbed, capped at warmup_len
    std::uint64_t last_step = 0;

    float mu() const { return samples > 0 ? sum_dr / static_cast<float>(samples) : 0.0f; }

    // bitwise comparison: prev_r/prev_g start as NaN and must still compare equal
    friend bool operator==(const DetectorState& a, const DetectorState& b) {
        return a.config.warmup_len == b.config.warmup_len && a.config.alpha == b.config.alpha &&
               a.config.min_steps == b.config.min_steps && float_bits_equal(a.prev_r, b.prev_r) &&
               float_bits_equal(a.prev_g, b.prev_g) && float_bits_equal(a.sum_dr, b.sum_dr) &&
               a.samples == b.samples && a.last_step == b.last_step;
    }
};

enum class Verdict : std::uint8_t { Ok = 0, Anomalous = 1 };
enum class Reason : std::uint8_t { None = 0, NonFiniteNorm = 1, ThresholdExceeded = 2 };

struct Decision {
    Verdict verdict = Verdict::Ok;
    Reason reason = Reason::None;
    float delta_r = 0.0f;
    float delta_g = 0.0f;
    float threshold = std::numeric_limits<float>::infinity();
};

// Pure state transition, called once per completed optimizer step in order.
// mu statistics absorb dR only on Ok verdicts and only while still in warm-up;
// anomalous steps leave prev_r/prev_g untouched so the baseline trajectory is
// what the next step is measured against.
inline std::pair<DetectorState, Decision> detector_observe(DetectorState s, float r_t, float g_pre,
                                                           std::uint64_t step) {
    if (step != s.last_step + 1) {
        throw std::logic_error("detector_observe: out-of-order step");
    }
    s.last_step = step;
    Decision d;

    if (!std::isfinite(g_pre) || !std::isfinite(r_t)) {
        d.verdict = Verdict::Anomalous;
        d.reason = Reason::NonFiniteNorm;
        d.delta_r = std::abs(r_t - s.prev_r);
        d.delta_g = g_pre - s.prev_g;
        d.threshold = std::numeric_limits<float>::quiet_NaN();
        return {s, d};
    }

    const bool first = std::isnan(s.prev_r);
    d.delta_r = first ? 0.0f : std::abs(r_t - s.prev_r);
    d.delta_g = first ? 0.0f : std::max(0.0f, g_pre - s.prev_g);

    if (step > s.config.min_steps && d.delta_g > 0.0f && s.samples > 0) {
        d.threshold = s.mu() / (s.config.alpha * std::sqrt(d.delta_g));
        if (d.delta_r > d.threshold) {
            d.verdict = Verdict::Anomalous;
            d.reason = Reason::ThresholdExceeded;
            return {s, d};  // no mu absorption, prev_r/prev_g unchanged
        }
    }

    if (!first && s.samples < s.config.warmup_len) {
        s.sum_dr += d.delta_r;
        s.samples += 1;
    }
    s.prev_r = r_t;
    s.prev_g = g_pre;
    return {s, d};
}

// After a recomputation replaced the step's update: re-baseline on the adopted
// trajectory. The recomputed dR (measured against the pre-step prev_r) still
// counts toward the warm-up mean. Takes the pre-observe state (prev_* are
// unchanged by an anomalous observe, so the post-observe state works too as
// long as last_step is accounted for).
inline DetectorState detector_reset_after_recompute(DetectorState s, float r_t, float g_pre,
                                                    std::uint64_t step) {
    if (step != s.last_step && step != s.last_step + 1) {
        throw std::logic_error("detector_reset_after_recompute: step mismatch");
    }
    s.last_step = step;
    if (std::isfinite(r_t) && !std::isnan(s.prev_r) && s.samples < s.config.warmup_len) {
        s.sum_dr += std::abs(r_t - s.prev_r);
        s.samples += 1;
    }
    s.prev_r = r_t;
    s.prev_g = g_pre;
    return s;
}

}  // namespace sdcforge
