// Byte-level corpus and deterministic batch streams. The synthetic mode
// generates word-structured pseudo-text (not uniform noise) so a desk-scale
// model has real structure to learn and fault-induced loss bumps are visible
// against actual training progress.
#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/model.hpp"
#include "sdcforge/rng.hpp"

namespace sdcforge {

struct Corpus {
    std::vector<std::uint8_t> bytes;
    std::uint32_t vocab = 256;
};

inline std::uint64_t corpus_checksum(const Corpus& c) {
    return fnv1a64(c.bytes.data(), c.bytes.size());
}

// Seeded pseudo-text: a fixed word list with skewed usage frequencies,
// separated by byte 0. All bytes are < vocab.
inline Corpus synth_corpus(std::uint64_t seed, std::size_t n_bytes, std::uint32_t vocab = 256) {
    if (vocab < 8) throw std::invalid_argument("synthetic corpus needs vocab_size >= 8");
    if (n_bytes < 1024) throw std::invalid_argument("synthetic corpus needs at least 1 KiB");

    const std::uint32_t alphabet = std::min<std::uint32_t>(vocab - 1, 95);
    constexpr std::size_t kWords = 256;
    SplitMix64 rng{seed ^ 0xC0897C5ull};

    std::vector<std::vector<std::uint8_t>> words(kWords);
    for (auto& w : words) {
        const std::size_t len = 2 + rng.next() % 7;
        w.resize(len);
        for (auto& ch : w) ch = static_cast<std::uint8_t>(1 + rng.next() % alphabet);
    }

    Corpus c;
    c.vocab = vocab;
    c.bytes.reserve(n_bytes);
    while (c.bytes.size() < n_bytes) {
        const double u = u64_to_unit(rng.next());
        const auto idx = static_cast<std::size_t>(u * u * static_cast<double>(kWords)) % kWords;
        for (const std::uint8_t ch : words[idx]) {
            if (c.bytes.size() >= n_bytes) break;
            c.bytes.push_back(ch);
        }
        if (c.bytes.size() < n_bytes) c.bytes.push_back(0);
    }
    return c;
}

inline Corpus load_corpus_file(const std::string& path, std::uint32_t vocab = 256) {
    if (vocab != 256) {
        throw std::invalid_argument("file corpora are raw bytes and require vocab_size = 256");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open " + path);
    Corpus c;
    c.vocab = vocab;
    c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (c.bytes.empty()) throw std::runtime_error("corpus: " + path + " is empty");
    return c;
}

// Deterministic training windows plus a fixed held-out tail for evaluation.
// Batch contents are a pure function of (corpus, seed, cursor), so replaying a
// cursor reproduces the batch bit-for-bit.
class BatchStream {
public:
    BatchStream(const Corpus& corpus, std::uint32_t seq_len, std::uint32_t batch_size,
                std::uint64_t seed, std::size_t eval_batches = 16)
        : corpus_(&corpus), seq_(seq_len), bsz_(batch_size), seed_(seed) {
        const std::size_t need_tail =
            static_cast<std::size_t>(eval_batches) * bsz_ * (seq_ + 2) + seq_ + 2;
        const std::size_t tail = std::min(corpus.bytes.size() / 4, std::max<std::size_t>(need_tail, 4096));
        if (corpus.bytes.size() < 2 * (static_cast<std::size_t>(seq_) + 2) + tail) {
            throw std::invalid_argument("corpus too small for seq_len and eval tail");
        }
        train_limit_ = corpus.bytes.size() - tail;
        eval_start_ = train_limit_;
        for (const std::uint8_t b : corpus.bytes) {
            if (b >= corpus.vocab) throw std::invalid_argument("corpus byte out of vocab range");
        }
    }

    Batch batch_at(std::uint64_t cursor) const {
        return window_batch(seed_ ^ 0x7261B475ull, cursor, 0, train_limit_);
    }

    std::vector<Batch> eval_batches(std::size_t count) const {
        std::vector<Batch> out;
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            out.push_back(window_batch(seed_ ^ 0xE7A1BA7Cull, k, eval_start_, corpus_->bytes.size()));
        }
        return out;
    }

    std::size_t train_limit() const { return train_limit_; }

private:
    Batch window_batch(std::uint64_t stream, std::uint64_t index, std::size_t lo, std::size_t hi) const {
        const std::size_t span = hi - lo - seq_ - 1;
        Batch b;
        b.batch_size = bsz_;
        b.seq_len = seq_;
        b.tokens.resize(static_cast<std::size_t>(bsz_) * seq_);
        b.targets.resize(static_cast<std::size_t>(bsz_) * seq_);
        for (std::uint32_t r = 0; r < bsz_; ++r) {
            const std::size_t off =
                lo + static_cast<std::size_t>(hash_mix(stream, index * bsz_ + r) % span);
            for (std::uint32_t s = 0; s < seq_; ++s) {
                b.tokens[r * seq_ + s] = corpus_->bytes[off + s];
                b.targets[r * seq_ + s] = corpus_->bytes[off + s + 1];
            }
        }
        return b;
    }

    const Corpus* corpus_;
    std::uint32_t seq_;
    std::uint32_t bsz_;
    std::uint64_t seed_;
    std::size_t train_limit_ = 0;
    std::size_t eval_start_ = 0;
};

}  // namespace sdcforge
