#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sdcforge/gemm.hpp"
#include "sdcforge/rng.hpp"

using namespace sdcforge;

namespace {

// Independent oracle: scalar triple loop, f32 accumulation in ascending k.
Bf16Matrix naive_gemm(const Bf16Matrix& a, const Bf16Matrix& b) {
    Bf16Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            float acc = 0.0f;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += bf16_decode(a.data[i * a.cols + k]) * bf16_decode(b.data[k * b.cols + j]);
            }
            c.data[i * c.cols + j] = bf16_encode(acc);
        }
    }
    return c;
}

Bf16Matrix random_matrix(SplitMix64& rng, std::size_t r, std::size_t c) {
    Bf16Matrix m(r, c);
    GaussianStream g{rng.next()};
    for (auto& v : m.data) v = bf16_encode(g.next());
    return m;
}

// Hook that flips one element of the A operand with a fixed mask.
class SingleElementHook : public GemmHook {
public:
    SingleElementHook(GemmSiteId site, std::uint64_t element, std::uint16_t mask)
        : site_(site), element_(element), mask_(mask) {}

    bool touches(GemmSiteId site) const override { return site == site_; }

    std::uint16_t mask_for(GemmSiteId site, std::size_t row, std::size_t col, std::size_t a_rows,
                           std::size_t a_cols) const override {
        if (!(site == site_)) return 0;
        const std::uint64_t flat = row * a_cols + col;
        return flat == element_ % (a_rows * a_cols) ? mask_ : 0;
    }

    void on_applied(GemmSiteId, std::size_t, std::uint16_t) const override { ++applied; }

    mutable int applied = 0;

private:
    GemmSiteId site_;
    std::uint64_t element_;
    std::uint16_t mask_;
};

const GemmSiteId kSite{Pass::Forward, 0};

}  // namespace

TEST_CASE("gemm: identity and dimension mismatch") {
    Bf16Matrix a(2, 2);
    a.set(0, 0, 1.0f);
    a.set(0, 1, 2.0f);
    a.set(1, 0, 3.0f);
    a.set(1, 1, 4.0f);
    Bf16Matrix eye(2, 2);
    eye.set(0, 0, 1.0f);
    eye.set(1, 1, 1.0f);

    const Bf16Matrix c = gemm(a, eye, kSite);
    CHECK(c == a);

    Bf16Matrix bad(3, 2);
    CHECK_THROWS_AS(gemm(a, bad, kSite), std::invalid_argument);
}

TEST_CASE("gemm matches the naive triple-loop oracle bit-exactly") {
    SplitMix64 rng{0xABCDEF};
    int cases = 0;
    while (cases < 1200) {
        const std::size_t m = 1 + rng.next() % 8;
        const std::size_t k = 1 + rng.next() % 8;
        const std::size_t n = 1 + rng.next() % 8;
        const Bf16Matrix a = random_matrix(rng, m, k);
        const Bf16Matrix b = random_matrix(rng, k, n);
        const Bf16Matrix got = gemm(a, b, kSite);
        const Bf16Matrix want = naive_gemm(a, b);
        REQUIRE(got == want);
        ++cases;
    }
}

TEST_CASE("gemm is deterministic across repeated calls") {
    SplitMix64 rng{42};
    const Bf16Matrix a = random_matrix(rng, 17, 9);
    const Bf16Matrix b = random_matrix(rng, 9, 13);
    const Bf16Matrix c1 = gemm(a, b, kSite);
    const Bf16Matrix c2 = gemm(a, b, kSite);
    CHECK(c1 == c2);
}

TEST_CASE("hooked gemm: 1x1 exponent-MSB flip produces +Inf") {
    Bf16Matrix a(1, 1);
    a.set(0, 0, 1.0f);
    Bf16Matrix b(1, 1);
    b.set(0, 0, 1.0f);
    SingleElementHook hook(kSite, 0, 1u << 14);
    const Bf16Matrix c = gemm(a, b, kSite, &hook);
    CHECK(bf16_decode(c.data[0]) == std::numeric_limits<float>::infinity());
    CHECK(hook.applied == 1);
}

TEST_CASE("corruption confinement: the stored A operand is never modified") {
    SplitMix64 rng{5};
    const Bf16Matrix a = random_matrix(rng, 6, 6);
    const Bf16Matrix b = random_matrix(rng, 6, 6);
    const Bf16Matrix a_copy = a;

    SingleElementHook hook(kSite, 11, 1u << 14);
    const Bf16Matrix corrupted = gemm(a, b, kSite, &hook);
    CHECK(a == a_copy);
    CHECK(hook.applied == 1);

    // And the corruption only exists while the hook is active.
    const Bf16Matrix clean = gemm(a, b, kSite);
    CHECK(clean == naive_gemm(a, b));
    CHECK(!(clean == corrupted));
}

TEST_CASE("hook fires exactly once per matching call and element") {
    SplitMix64 rng{6};
    const Bf16Matrix a = random_matrix(rng, 4, 5);
    const Bf16Matrix b = random_matrix(rng, 5, 3);

    SingleElementHook hook(kSite, 7, 0x0001);
    (void)gemm(a, b, kSite, &hook);
    CHECK(hook.applied == 1);

    // Different site: never fires.
    SingleElementHook other({Pass::Backward, 3}, 0, 0x4000);
    (void)gemm(a, b, kSite, &other);
    CHECK(other.applied == 0);

    // Element index wraps modulo the operand size.
    SingleElementHook wrap(kSite, 7 + 20, 0x0001);
    const Bf16Matrix c1 = gemm(a, b, kSite, &hook);
    const Bf16Matrix c2 = gemm(a, b, kSite, &wrap);
    CHECK(c1 == c2);
}

TEST_CASE("non-finite operands propagate into outputs") {
    Bf16Matrix a(2, 2);
    a.set(0, 0, std::numeric_limits<float>::infinity());
    a.set(0, 1, 1.0f);
    a.set(1, 0, 1.0f);
    a.set(1, 1, 1.0f);
    Bf16Matrix b(2, 2);
    b.set(0, 0, 1.0f);
    b.set(0, 1, -1.0f);
    b.set(1, 0, 1.0f);
    b.set(1, 1, 1.0f);
    const Bf16Matrix c = gemm(a, b, kSite);
    CHECK(bf16_decode(c.at(0, 0)) == std::numeric_limits<float>::infinity());
    CHECK(bf16_decode(c.at(0, 1)) == -std::numeric_limits<float>::infinity());
    CHECK(std::isfinite(bf16_decode(c.at(1, 0))));

    // Inf * 0 inside the accumulation yields NaN.
    Bf16Matrix z(2, 2);
    z.set(0, 0, 0.0f);
    z.set(0, 1, 0.0f);
    z.set(1, 0, 1.0f);
    z.set(1, 1, 1.0f);
    const Bf16Matrix cn = gemm(a, z, kSite);
    CHECK(bf16_is_nan(cn.at(0, 0)));
}

TEST_CASE("gemm_blocks: equals per-block gemm and indexes elements globally") {
    SplitMix64 rng{77};
    std::vector<Bf16Matrix> as, bs;
    for (int g = 0; g < 3; ++g) {
        as.push_back(random_matrix(rng, 4, 6));
        bs.push_back(random_matrix(rng, 6, 5));
    }
    const auto outs = gemm_blocks(as, bs, kSite);
    REQUIRE(outs.size() == 3);
    for (int g = 0; g < 3; ++g) {
        CHECK(outs[g] == gemm(as[g], bs[g], kSite));
    }

    // Element 4*6 + 2 lands in block 1, element (0, 2).
    SingleElementHook hook(kSite, 4 * 6 + 2, 1u << 14);
    const auto corrupted = gemm_blocks(as, bs, kSite, &hook);
    CHECK(hook.applied == 1);
    CHECK(corrupted[0] == outs[0]);
    CHECK(!(corrupted[1] == outs[1]));
    CHECK(corrupted[2] == outs[2]);
}
