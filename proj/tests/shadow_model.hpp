// Test-only reference model: the same architecture as sdcforge::forward but
// computed entirely in double precision with naive loops and no bf16 rounding.
// Used as the independent oracle for finite-difference gradient checks. This
// file deliberately shares no computation code with the library.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sdcforge/model.hpp"

namespace shadow {

struct Params {
    // Same group order as sdcforge::ParameterSet, flattened row-major.
    std::vector<std::vector<double>> groups;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;

    static Params from(const sdcforge::ParameterSet& ps) {
        Params p;
        p.groups.reserve(ps.groups.size());
        for (const auto& g : ps.groups) {
            std::vector<double> v(g.w.size());
            for (std::size_t i = 0; i < g.w.size(); ++i) v[i] = sdcforge::bf16_decode(g.w.data[i]);
            p.groups.push_back(std::move(v));
            p.shapes.emplace_back(g.w.rows, g.w.cols);
        }
        return p;
    }
};

inline std::vector<double> matmul(const std::vector<double>& a, std::size_t m, std::size_t k,
                                  const std::vector<double>& b, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[i * k + kk];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[kk * n + j];
        }
    }
    return c;
}

inline void rmsnorm_inplace(std::vector<double>& x, std::size_t rows, std::size_t d,
                            const std::vector<double>& gain) {
    for (std::size_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + 1e-5);
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] *= inv * gain[j];
    }
}

// Mean NLL over unmasked rows, matching the library's loss definition.
inline double loss(const Params& p, const sdcforge::ModelConfig& cfg, const sdcforge::Batch& batch) {
    const std::size_t bsz = batch.batch_size;
    const std::size_t seq = cfg.seq_len;
    const std::size_t n = bsz * seq;
    const std::size_t d = cfg.d_model;
    const std::size_t heads = cfg.n_heads;
    const std::size_t dh = cfg.head_dim();
    const std::size_t f = cfg.ffn_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    sdcforge::ParameterSet idx;  // only used for group index arithmetic
    idx.config = cfg;

    std::vector<double> x(n * d);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t s = 0; s < seq; ++s) {
            const auto t = static_cast<std::size_t>(batch.tokens[b * seq + s]);
            for (std::size_t j = 0; j < d; ++j) {
                x[(b * seq + s) * d + j] = p.groups[0][t * d + j] + p.groups[1][s * d + j];
            }
        }
    }

    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        std::vector<double> h = x;
        rmsnorm_inplace(h, n, d, p.groups[idx.idx_attn_norm(l)]);
        const auto q = matmul(h, n, d, p.groups[idx.idx_wq(l)], d);
        const auto k = matmul(h, n, d, p.groups[idx.idx_wk(l)], d);
        const auto v = matmul(h, n, d, p.groups[idx.idx_wv(l)], d);

        std::vector<double> ctx(n * d, 0.0);
        for (std::size_t b = 0; b < bsz; ++b) {
            for (std::size_t hd = 0; hd < heads; ++hd) {
                for (std::size_t i = 0; i < seq; ++i) {
                    // scores over the causal prefix
                    std::vector<double> row(i + 1);
                    double mx = -1e300;
                    for (std::size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (std::size_t e = 0; e < dh; ++e) {
                            s += q[(b * seq + i) * d + hd * dh + e] * k[(b * seq + j) * d + hd * dh + e];
                        }
                        row[j] = s * scale;
                        if (row[j] > mx) mx = row[j];
                    }
                    double sum = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        row[j] = std::exp(row[j] - mx);
                        sum += row[j];
                    }
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double pr = row[j] / sum;
                        for (std::size_t e = 0; e < dh; ++e) {
                            ctx[(b * seq + i) * d + hd * dh + e] += pr * v[(b * seq + j) * d + hd * dh + e];
                        }
                    }
                }
            }
        }

        const auto attn_out = matmul(ctx, n, d, p.groups[idx.idx_wo(l)], d);
        for (std::size_t e = 0; e < n * d; ++e) x[e] += attn_out[e];

        std::vector<double> h2 = x;
        rmsnorm_inplace(h2, n, d, p.groups[idx.idx_ffn_norm(l)]);
        const auto up = matmul(h2, n, d, p.groups[idx.idx_w_up(l)], f);
        const auto gate = matmul(h2, n, d, p.groups[idx.idx_w_gate(l)], f);
        std::vector<double> act(n * f);
        for (std::size_t e = 0; e < n * f; ++e) {
            act[e] = gate[e] / (1.0 + std::exp(-gate[e])) * up[e];
        }
        const auto ffn_out = matmul(act, n, f, p.groups[idx.idx_w_down(l)], d);
        for (std::size_t e = 0; e < n * d; ++e) x[e] += ffn_out[e];
    }

    std::vector<double> hf = x;
    rmsnorm_inplace(hf, n, d, p.groups[idx.idx_final_norm()]);
    const auto logits = matmul(hf, n, d, p.groups[idx.idx_head()], cfg.vocab_size);

    double total = 0.0;
    double count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t t = batch.targets[i];
        if (t < 0) continue;
        double mx = -1e300;
        for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
            if (logits[i * cfg.vocab_size + j] > mx) mx = logits[i * cfg.vocab_size + j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
            sum += std::exp(logits[i * cfg.vocab_size + j] - mx);
        }
        total += mx + std::log(sum) - logits[i * cfg.vocab_size + static_cast<std::size_t>(t)];
        count += 1.0;
    }
    return count > 0.0 ? total / count : 0.0;
}

// Central finite differences of the shadow loss w.r.t. every parameter.
// Returns one vector per group.
inline std::vector<std::vector<double>> finite_difference_gradients(
    Params p, const sdcforge::ModelConfig& cfg, const sdcforge::Batch& batch, double h) {
    std::vector<std::vector<double>> out(p.groups.size());
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        out[g].resize(p.groups[g].size());
        for (std::size_t e = 0; e < p.groups[g].size(); ++e) {
            const double saved = p.groups[g][e];
            p.groups[g][e] = saved + h;
            const double lp = loss(p, cfg, batch);
            p.groups[g][e] = saved - h;
            const double lm = loss(p, cfg, batch);
            p.groups[g][e] = saved;
            out[g][e] = (lp - lm) / (2.0 * h);
        }
    }
    return out;
}

}  // namespace shadow
