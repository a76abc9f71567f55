#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "shapprune/errors.hpp"

namespace shapprune {

// Dense row-major matrix. Deliberately minimal: the model code only needs
// storage, indexing, and shape checks; all arithmetic lives at the call site
// where the accumulation order is part of the determinism contract.
template <typename T>
struct matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    matrix() = default;

    matrix(int r, int c) : rows(r), cols(c) {
        if (r < 0 || c < 0) {
            throw invalid_parameter_error("matrix: negative dimension");
        }
        data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), T(0));
    }

    T& at(int r, int c) {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                    static_cast<std::size_t>(c)];
    }
    const T& at(int r, int c) const {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                    static_cast<std::size_t>(c)];
    }

    const T* row(int r) const {
        return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    }
    T* row(int r) {
        return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    }

    std::size_t numel() const { return data.size(); }

    bool same_shape(const matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    template <typename U>
    matrix<U> cast() const {
        matrix<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

} // namespace shapprune
