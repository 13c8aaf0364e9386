// Elementwise and reduction kernels around the GEMMs. All internal math is
// f32; outputs re-encode to bf16. Non-finite inputs propagate, they never trap.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sdcforge/bf16.hpp"
#include "sdcforge/matrix.hpp"

namespace sdcforge {

inline constexpr float kRmsNormEps = 1e-5f;

inline float silu_f32(float x) {
    return x / (1.0f + std::exp(-x));
}

inline std::vector<Bf16> silu(std::span<const Bf16> v) {
    std::vector<Bf16> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = bf16_encode(silu_f32(bf16_decode(v[i])));
    return out;
}

inline std::vector<Bf16> rmsnorm(std::span<const Bf16> v, std::span<const Bf16> gain) {
    float ss = 0.0f;
    for (const Bf16 x : v) {
        const float f = bf16_decode(x);
        ss += f * f;
    }
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(v.size()) + kRmsNormEps);
    std::vector<Bf16> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = bf16_encode(bf16_decode(v[i]) * inv * bf16_decode(gain[i]));
    }
    return out;
}

// Row-wise rmsnorm with a [1, d] gain matrix.
inline Bf16Matrix rmsnorm_rows(const Bf16Matrix& m, const Bf16Matrix& gain) {
    Bf16Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        float ss = 0.0f;
        for (std::size_t j = 0; j < m.cols; ++j) {
            const float f = m.value(i, j);
            ss += f * f;
        }
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(m.cols) + kRmsNormEps);
        for (std::size_t j = 0; j < m.cols; ++j) {
            out.data[i * m.cols + j] = bf16_encode(m.value(i, j) * inv * gain.value(0, j));
        }
    }
    return out;
}

// Softmax over the first `len` entries of a row, rest zeroed. Inf entries turn
// the row into NaN (inf - inf), which is the intended propagation behavior.
inline void softmax_row_prefix(const Bf16* in, Bf16* out, std::size_t len, std::size_t row_width) {
    thread_local std::vector<float> buf;
    buf.resize(len);
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
        buf[j] = bf16_decode(in[j]);
        if (buf[j] > mx) mx = buf[j];
    }
    float sum = 0.0f;
    for (std::size_t j = 0; j < len; ++j) {
        buf[j] = std::exp(buf[j] - mx);
        sum += buf[j];
    }
    for (std::size_t j = 0; j < len; ++j) out[j] = bf16_encode(buf[j] / sum);
    for (std::size_t j = len; j < row_width; ++j) out[j] = Bf16{0};
}

inline Bf16Matrix softmax_rows(const Bf16Matrix& m) {
    Bf16Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        softmax_row_prefix(&m.data[i * m.cols], &out.data[i * m.cols], m.cols, m.cols);
    }
    return out;
}

// Mean negative log-likelihood over rows whose target is >= 0.
// Rows with target -1 are excluded; if every row is excluded the loss is 0.
inline float cross_entropy(const Bf16Matrix& logits, std::span<const std::int32_t> targets) {
    float total = 0.0f;
    float count = 0.0f;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const std::int32_t t = targets[i];
        if (t < 0) continue;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < logits.cols; ++j) {
            const float f = logits.value(i, j);
            if (f > mx) mx = f;
        }
        float sum = 0.0f;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            sum += std::exp(logits.value(i, j) - mx);
        }
        total += mx + std::log(sum) - logits.value(i, static_cast<std::size_t>(t));
        count += 1.0f;
    }
    return count > 0.0f ? total / count : 0.0f;
}

}  // namespace sdcforge
