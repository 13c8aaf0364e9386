#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "sdcforge/kernels.hpp"

using namespace sdcforge;

TEST_CASE("softmax_rows: symmetric inputs give uniform outputs") {
    Bf16Matrix m(1, 2);
    m.set(0, 0, 0.0f);
    m.set(0, 1, 0.0f);
    const Bf16Matrix p = softmax_rows(m);
    CHECK(p.value(0, 0) == 0.5f);
    CHECK(p.value(0, 1) == 0.5f);
}

TEST_CASE("softmax_rows: Inf and NaN poison the row") {
    Bf16Matrix m(2, 3);
    m.set(0, 0, std::numeric_limits<float>::infinity());
    m.set(0, 1, 1.0f);
    m.set(0, 2, 0.0f);
    m.set(1, 0, 1.0f);
    m.set(1, 1, 2.0f);
    m.set(1, 2, 3.0f);
    const Bf16Matrix p = softmax_rows(m);
    CHECK(bf16_is_nan(p.at(0, 0)));
    CHECK(bf16_is_nan(p.at(0, 1)));
    // The clean row is untouched.
    float sum = p.value(1, 0) + p.value(1, 1) + p.value(1, 2);
    CHECK(sum == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("cross_entropy: uniform logits over V classes give ln(V)") {
    const std::size_t v = 64;
    Bf16Matrix logits(3, v);  // all zeros = uniform
    std::vector<std::int32_t> targets{1, 5, 63};
    const float loss = cross_entropy(logits, targets);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-4));
}

TEST_CASE("cross_entropy: masked rows are excluded, all-masked is zero") {
    Bf16Matrix logits(2, 8);
    logits.set(0, 3, 5.0f);
    std::vector<std::int32_t> mixed{3, -1};
    const float one_row = cross_entropy(logits, mixed);
    std::vector<std::int32_t> only{3, 3};
    // Row 1 has uniform logits; masking it must change the mean.
    CHECK(one_row != cross_entropy(logits, only));

    std::vector<std::int32_t> none{-1, -1};
    CHECK(cross_entropy(logits, none) == 0.0f);
}

TEST_CASE("rmsnorm: direct formula oracle") {
    std::vector<Bf16> v{bf16_encode(3.0f), bf16_encode(4.0f)};
    std::vector<Bf16> gain{bf16_encode(1.0f), bf16_encode(1.0f)};
    const auto out = rmsnorm(v, gain);
    // [3,4] / sqrt((9+16)/2) = [0.84852..., 1.13137...]; compare post-bf16.
    CHECK(bf16_decode(out[0]) == doctest::Approx(3.0 / std::sqrt(12.5)).epsilon(0.01));
    CHECK(bf16_decode(out[1]) == doctest::Approx(4.0 / std::sqrt(12.5)).epsilon(0.01));
}

TEST_CASE("rmsnorm: huge rows are normalized to unit scale, not propagated") {
    Bf16Matrix m(1, 4);
    m.set(0, 0, 1e15f);
    m.set(0, 1, 1.0f);
    m.set(0, 2, -1.0f);
    m.set(0, 3, 0.5f);
    Bf16Matrix gain(1, 4);
    for (std::size_t j = 0; j < 4; ++j) gain.set(0, j, 1.0f);
    const Bf16Matrix out = rmsnorm_rows(m, gain);
    CHECK(out.value(0, 0) == doctest::Approx(2.0).epsilon(0.05));  // sqrt(d)
    CHECK(std::abs(out.value(0, 1)) < 1e-10f);
}

TEST_CASE("rmsnorm: sum-of-squares overflow zeroes the row instead of trapping") {
    // (1e30)^2 overflows f32, so the scale becomes 1/sqrt(inf) = 0.
    Bf16Matrix m(1, 2);
    m.set(0, 0, 1e30f);
    m.set(0, 1, 1.0f);
    Bf16Matrix gain(1, 2);
    gain.set(0, 0, 1.0f);
    gain.set(0, 1, 1.0f);
    const Bf16Matrix out = rmsnorm_rows(m, gain);
    CHECK(out.value(0, 0) == 0.0f);
    CHECK(out.value(0, 1) == 0.0f);
}

TEST_CASE("silu: fixed values and non-finite propagation") {
    std::vector<Bf16> v{bf16_encode(0.0f), bf16_encode(1.0f),
                        bf16_encode(std::numeric_limits<float>::quiet_NaN())};
    const auto out = silu(v);
    CHECK(bf16_decode(out[0]) == 0.0f);
    CHECK(bf16_decode(out[1]) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(0.01));
    CHECK(bf16_is_nan(out[2]));
}
