#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "breadcrumbs/errors.hpp"

namespace breadcrumbs {

/// Dense row-major float matrix. The workhorse container for feature
/// batches (n x d) and classifier weights (C x d).
struct Matrix {
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<float> data; // row-major, rows*cols entries

    Matrix() = default;
    Matrix(uint32_t r, uint32_t c, float fill = 0.0f)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    float& at(uint32_t r, uint32_t c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(uint32_t r, uint32_t c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<float> row(uint32_t r) {
        return {data.data() + static_cast<size_t>(r) * cols, cols};
    }
    std::span<const float> row(uint32_t r) const {
        return {data.data() + static_cast<size_t>(r) * cols, cols};
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool finite() const {
        for (const float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Matrix& other) const {
        return rows == other.rows && cols == other.cols && data == other.data;
    }
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.finite()) throw InvalidInputError(std::string(what) + ": non-finite entries");
}

} // namespace breadcrumbs
