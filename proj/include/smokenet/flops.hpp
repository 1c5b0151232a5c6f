#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smokenet/common.hpp"

namespace smokenet {

// Analytic FLOP conventions. A multiply-accumulate counts as 2 FLOPs; bias
// additions are not counted (the conv figure is exactly
// 2*C_in*C_out*k_h*k_w*H_out*W_out per sample). Per-element costs for the
// remaining ops are fixed here and documented in the README.
struct LayerCost {
    std::string name;
    std::uint64_t flops = 0;
    bool conv = false;  // true for conv/transposed-conv MAC terms
};

inline std::uint64_t conv_flops(std::int64_t n, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                                std::int64_t kw, std::int64_t hout, std::int64_t wout) {
    return static_cast<std::uint64_t>(2) * n * cin * cout * kh * kw * hout * wout;
}

// Transposed convolutions perform the same MACs as their adjoint convs; the
// count is taken over the *input* grid.
inline std::uint64_t tconv_flops(std::int64_t n, std::int64_t cin, std::int64_t cout, std::int64_t kh,
                                 std::int64_t kw, std::int64_t hin, std::int64_t win) {
    return static_cast<std::uint64_t>(2) * n * cin * cout * kh * kw * hin * win;
}

// Per-element costs (inference-style accounting).
constexpr std::uint64_t kFlopsPerElemBatchNorm = 2;  // scale + shift
constexpr std::uint64_t kFlopsPerElemLayerNorm = 8;  // stats + normalize + affine
constexpr std::uint64_t kFlopsPerElemSoftmax = 5;    // max, sub, exp, sum, div
constexpr std::uint64_t kFlopsPerElemRelu = 1;
constexpr std::uint64_t kFlopsPerElemSigmoid = 4;
constexpr std::uint64_t kFlopsPerElemGelu = 8;
constexpr std::uint64_t kFlopsPerElemAdd = 1;
constexpr std::uint64_t kFlopsPerElemMul = 1;
constexpr std::uint64_t kFlopsPerOutElemMaxPool = 3;  // three comparisons per 2x2 window

inline std::uint64_t elem_flops(const Shape& s, std::uint64_t per_elem) {
    return static_cast<std::uint64_t>(s.numel()) * per_elem;
}

}  // namespace smokenet
