// GEMM with f32 accumulation and a fault hook on reads of the A operand.
// The hook is the only path by which corruption enters a computation: it can
// rewrite the bits of an A element for this call only, the stored matrix is
// never touched.
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/bf16.hpp"
#include "sdcforge/matrix.hpp"

namespace sdcforge {

enum class Pass : std::uint8_t { Forward = 0, Backward = 1 };

// Identifies one logical GEMM launch per training step: the ordinal counts
// launches within the pass in execution order and is stable across steps for a
// fixed model config.
struct GemmSiteId {
    Pass pass = Pass::Forward;
    std::uint32_t ordinal = 0;

    friend constexpr bool operator==(GemmSiteId a, GemmSiteId b) {
        return a.pass == b.pass && a.ordinal == b.ordinal;
    }
    friend constexpr bool operator<(GemmSiteId a, GemmSiteId b) {
        if (a.pass != b.pass) return a.pass < b.pass;
        return a.ordinal < b.ordinal;
    }
};

inline std::string site_to_string(GemmSiteId s) {
    return (s.pass == Pass::Forward ? std::string("FP:") : std::string("BP:")) + std::to_string(s.ordinal);
}

// Decides, per A-operand element of a GEMM call, whether to flip bits.
// Implementations must answer as a pure function of (site, row, col) for a
// given step; on_applied exists so the injector can keep a ground-truth log.
class GemmHook {
public:
    virtual ~GemmHook() = default;

    // Fast rejection: does this hook corrupt anything at this site?
    virtual bool touches(GemmSiteId site) const = 0;

    // XOR mask for element (row, col) of the site's A operand, 0 for clean.
    // a_rows/a_cols describe the full logical A operand of the site (grouped
    // calls stack their blocks row-wise).
    virtual std::uint16_t mask_for(GemmSiteId site, std::size_t row, std::size_t col,
                                   std::size_t a_rows, std::size_t a_cols) const = 0;

    // Called once per element actually flipped; flat = row * a_cols + col.
    virtual void on_applied(GemmSiteId site, std::size_t flat, std::uint16_t mask) const {
        (void)site;
        (void)flat;
        (void)mask;
    }
};

namespace detail {

// C block = A block x B block, f32 accumulation over k in ascending order,
// one bf16 re-encode per output element. row_offset/site_rows place this block
// inside the site's logical A operand.
inline void gemm_block(const Bf16Matrix& a, const Bf16Matrix& b, Bf16Matrix& c,
                       GemmSiteId site, const GemmHook* hook, bool hooked,
                       std::size_t row_offset, std::size_t site_rows) {
    const std::size_t m = a.rows, kk = a.cols, n = b.cols;
    thread_local std::vector<float> bbuf;
    thread_local std::vector<float> acc;
    bbuf.resize(kk * n);
    for (std::size_t i = 0; i < kk * n; ++i) bbuf[i] = bf16_decode(b.data[i]);
    acc.assign(m * n, 0.0f);

    for (std::size_t i = 0; i < m; ++i) {
        float* arow = &acc[i * n];
        for (std::size_t k = 0; k < kk; ++k) {
            Bf16 av = a.data[i * kk + k];
            if (hooked) {
                const std::uint16_t mask = hook->mask_for(site, row_offset + i, k, site_rows, kk);
                if (mask != 0) {
                    av = flip_bits(av, mask);
                    hook->on_applied(site, (row_offset + i) * kk + k, mask);
                }
            }
            const float afv = bf16_decode(av);
            const float* brow = &bbuf[k * n];
            float* out = arow;
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += afv * brow[j];
            }
        }
    }
    c.rows = m;
    c.cols = n;
    c.data.resize(m * n);
    for (std::size_t i = 0; i < m * n; ++i) c.data[i] = bf16_encode(acc[i]);
}

}  // namespace detail

inline Bf16Matrix gemm(const Bf16Matrix& a, const Bf16Matrix& b, GemmSiteId site,
                       const GemmHook* hook = nullptr) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("gemm: dimension mismatch (" + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols) + ")");
    }
    Bf16Matrix c;
    const bool hooked = hook != nullptr && hook->touches(site);
    detail::gemm_block(a, b, c, site, hook, hooked, 0, a.rows);
    return c;
}

// Many small matmuls under one site id (the software analogue of a batched
// GEMM launch). The site's logical A operand is the row-wise concatenation of
// the block A operands, so a single fault element index addresses exactly one
// element across all blocks.
inline std::vector<Bf16Matrix> gemm_blocks(const std::vector<Bf16Matrix>& as,
                                           const std::vector<Bf16Matrix>& bs, GemmSiteId site,
                                           const GemmHook* hook = nullptr) {
    if (as.size() != bs.size() || as.empty()) {
        throw std::invalid_argument("gemm_blocks: block count mismatch");
    }
    std::size_t total_rows = 0;
    for (std::size_t g = 0; g < as.size(); ++g) {
        if (as[g].cols != bs[g].rows) throw std::invalid_argument("gemm_blocks: dimension mismatch");
        if (as[g].cols != as[0].cols) throw std::invalid_argument("gemm_blocks: ragged A blocks");
        total_rows += as[g].rows;
    }
    const bool hooked = hook != nullptr && hook->touches(site);
    std::vector<Bf16Matrix> out(as.size());
    std::size_t row_offset = 0;
    for (std::size_t g = 0; g < as.size(); ++g) {
        detail::gemm_block(as[g], bs[g], out[g], site, hook, hooked, row_offset, total_rows);
        row_offset += as[g].rows;
    }
    return out;
}

}  // namespace sdcforge
