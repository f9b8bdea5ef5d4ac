#pragma once

#include <cstdint>
#include <vector>

namespace antlm {

// Dense row-major 2-D grid for token ids and binary masks. These ride
// alongside Tensors but never participate in differentiation.
template <typename T>
struct Grid {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(int64_t r, int64_t c, T fill = T{})
        : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}

    T& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
    const T& at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

    int64_t size() const { return rows * cols; }

    bool operator==(const Grid&) const = default;
};

using TokenGrid = Grid<int32_t>;
using BitGrid = Grid<uint8_t>;

}  // namespace antlm
