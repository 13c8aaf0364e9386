// Row-major matrix storage: Bf16Matrix for everything the model touches,
// MatF32 for optimizer moments and staging buffers.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcforge/bf16.hpp"

namespace sdcforge {

struct Bf16Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Bf16> data;

    Bf16Matrix() = default;
    Bf16Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c) {}

    std::size_t size() const { return rows * cols; }

    Bf16& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    Bf16 at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    float value(std::size_t i, std::size_t j) const { return bf16_decode(data[i * cols + j]); }

    void set(std::size_t i, std::size_t j, float v) { data[i * cols + j] = bf16_encode(v); }

    friend bool operator==(const Bf16Matrix& a, const Bf16Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
    }
};

struct MatF32 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    MatF32() = default;
    MatF32(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    std::size_t size() const { return rows * cols; }

    float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

inline Bf16Matrix transpose(const Bf16Matrix& m) {
    Bf16Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            t.data[j * m.rows + i] = m.data[i * m.cols + j];
        }
    }
    return t;
}

inline Bf16Matrix encode_matrix(const MatF32& m) {
    Bf16Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = bf16_encode(m.data[i]);
    return out;
}

inline MatF32 decode_matrix(const Bf16Matrix& m) {
    MatF32 out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = bf16_decode(m.data[i]);
    return out;
}

inline void require_same_shape(const Bf16Matrix& a, const Bf16Matrix& b, const char* what) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument(std::string("shape mismatch in ") + what);
    }
}

}  // namespace sdcforge
