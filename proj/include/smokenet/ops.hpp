#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "smokenet/tensor.hpp"

namespace smokenet {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return a > 0 ? (a + b - 1) / b : a / b;
}
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a >= 0 ? a / b : (a - b + 1) / b;
}

// Learnable convolution weights plus geometry. Weight layout is
// (C_out, C_in, k_h, k_w) for conv2d and (C_in, C_out, k_h, k_w) for
// transposed_conv2d; bias, when present, is stored as (1, C, 1, 1).
template <typename S>
struct ConvKernel {
    TensorPtr<S> weight;
    TensorPtr<S> bias;  // may be null
    std::pair<int, int> stride{1, 1};
    std::pair<int, int> padding{0, 0};
    std::pair<int, int> dilation{1, 1};
    std::pair<int, int> output_padding{0, 0};  // transposed conv only
};

enum class Mode { train, eval };
enum class NormKind { batch, layer };

// Per-channel affine + (for batch norm) running statistics. gamma/beta are
// learnable; running stats are plain buffers updated in train mode.
template <typename S>
struct NormState {
    NormKind kind = NormKind::batch;
    TensorPtr<S> gamma;
    TensorPtr<S> beta;
    TensorPtr<S> running_mean;  // batch norm only
    TensorPtr<S> running_var;   // batch norm only, strictly positive
    double eps = 1e-5;
    double momentum = 0.1;
    bool ever_updated = false;
    bool warned_uninitialized = false;

    std::int64_t channels() const { return gamma->shape.c; }

    static NormState batch(std::int64_t c) {
        NormState s;
        s.kind = NormKind::batch;
        s.gamma = ones<S>({1, c, 1, 1}, true);
        s.beta = zeros<S>({1, c, 1, 1}, true);
        s.running_mean = zeros<S>({1, c, 1, 1}, false);
        s.running_var = ones<S>({1, c, 1, 1}, false);
        return s;
    }
    static NormState layer(std::int64_t c) {
        NormState s;
        s.kind = NormKind::layer;
        s.gamma = ones<S>({1, c, 1, 1}, true);
        s.beta = zeros<S>({1, c, 1, 1}, true);
        return s;
    }
};

struct AxisSet {
    bool c = false;
    bool h = false;
    bool w = false;
};

template <typename S>
TensorPtr<S> make_node_vec(Shape shape, const std::vector<TensorPtr<S>>& parents, const char* opname) {
    bool req = false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) {
            req = true;
        }
    }
    auto t = make_tensor<S>(shape, req);
    t->op = opname;
    if (req) {
        t->parents = parents;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> conv2d(const TensorPtr<S>& x, const ConvKernel<S>& k) {
    const auto& w = k.weight;
    if (x->shape.c != w->shape.c) {
        throw ShapeError(format_msg("conv2d: channel axis mismatch: input C=", x->shape.c,
                                    ", kernel C_in=", w->shape.c));
    }
    const std::int64_t N = x->shape.n, Cin = x->shape.c, H = x->shape.h, W = x->shape.w;
    const std::int64_t Cout = w->shape.n, KH = w->shape.h, KW = w->shape.w;
    const std::int64_t sh = k.stride.first, sw = k.stride.second;
    const std::int64_t ph = k.padding.first, pw = k.padding.second;
    const std::int64_t dh = k.dilation.first, dw = k.dilation.second;
    if (sh < 1 || sw < 1 || dh < 1 || dw < 1 || ph < 0 || pw < 0) {
        throw ConfigError("conv2d: stride/dilation must be >= 1 and padding >= 0");
    }
    if (k.bias && (k.bias->shape.c != Cout || k.bias->shape.numel() != Cout)) {
        throw ShapeError(format_msg("conv2d: bias channel axis C=", k.bias->shape.c,
                                    " does not match C_out=", Cout));
    }
    const std::int64_t Hout = (H + 2 * ph - dh * (KH - 1) - 1) / sh + 1;
    const std::int64_t Wout = (W + 2 * pw - dw * (KW - 1) - 1) / sw + 1;
    if (Hout < 1 || Wout < 1) {
        throw ShapeError(format_msg("conv2d: spatial axes collapse: H'=", Hout, " W'=", Wout,
                                    " for input ", x->shape.str()));
    }

    auto out = make_node<S>({N, Cout, Hout, Wout}, {x, w, k.bias}, "conv2d");

    const S* xd = x->data.data();
    const S* wd = w->data.data();
    S* od = out->data.data();
    for (std::int64_t n = 0; n < N; ++n) {
        if (k.bias) {
            for (std::int64_t co = 0; co < Cout; ++co) {
                const S bv = k.bias->data[static_cast<std::size_t>(co)];
                S* orow = od + ((n * Cout + co) * Hout) * Wout;
                std::fill(orow, orow + Hout * Wout, bv);
            }
        }
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const S* xc = xd + ((n * Cin + ci) * H) * W;
            for (std::int64_t co = 0; co < Cout; ++co) {
                S* oc = od + ((n * Cout + co) * Hout) * Wout;
                const S* wc = wd + ((co * Cin + ci) * KH) * KW;
                for (std::int64_t kh = 0; kh < KH; ++kh) {
                    const std::int64_t offh = kh * dh - ph;
                    const std::int64_t ho_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                    const std::int64_t ho_end = std::min(Hout, floor_div(H - 1 - offh, sh) + 1);
                    for (std::int64_t kw = 0; kw < KW; ++kw) {
                        const S wv = wc[kh * KW + kw];
                        const std::int64_t offw = kw * dw - pw;
                        const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                        const std::int64_t wo_end = std::min(Wout, floor_div(W - 1 - offw, sw) + 1);
                        for (std::int64_t ho = ho_lo; ho < ho_end; ++ho) {
                            const S* xrow = xc + (ho * sh + offh) * W + offw;
                            S* orow = oc + ho * Wout;
                            for (std::int64_t wo = wo_lo; wo < wo_end; ++wo) {
                                orow[wo] += wv * xrow[wo * sw];
                            }
                        }
                    }
                }
            }
        }
    }

    if (out->requires_grad) {
        auto xp = x;
        auto wp = w;
        auto bp = k.bias;
        out->backprop = [xp, wp, bp, sh, sw, ph, pw, dh, dw](Tensor<S>& o) {
            const std::int64_t N = xp->shape.n, Cin = xp->shape.c, H = xp->shape.h, W = xp->shape.w;
            const std::int64_t Cout = wp->shape.n, KH = wp->shape.h, KW = wp->shape.w;
            const std::int64_t Hout = o.shape.h, Wout = o.shape.w;
            const S* gy = o.grad.data();
            if (xp->requires_grad) {
                xp->ensure_grad();
                S* dx = xp->grad.data();
                const S* wd = wp->data.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        S* dxc = dx + ((n * Cin + ci) * H) * W;
                        for (std::int64_t co = 0; co < Cout; ++co) {
                            const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                            const S* wc = wd + ((co * Cin + ci) * KH) * KW;
                            for (std::int64_t kh = 0; kh < KH; ++kh) {
                                const std::int64_t offh = kh * dh - ph;
                                const std::int64_t ho_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                                const std::int64_t ho_end = std::min(Hout, floor_div(H - 1 - offh, sh) + 1);
                                for (std::int64_t kw = 0; kw < KW; ++kw) {
                                    const S wv = wc[kh * KW + kw];
                                    const std::int64_t offw = kw * dw - pw;
                                    const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                                    const std::int64_t wo_end = std::min(Wout, floor_div(W - 1 - offw, sw) + 1);
                                    for (std::int64_t ho = ho_lo; ho < ho_end; ++ho) {
                                        S* dxrow = dxc + (ho * sh + offh) * W + offw;
                                        const S* grow = gc + ho * Wout;
                                        for (std::int64_t wo = wo_lo; wo < wo_end; ++wo) {
                                            dxrow[wo * sw] += wv * grow[wo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                S* dw_ = wp->grad.data();
                const S* xd = xp->data.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        const S* xc = xd + ((n * Cin + ci) * H) * W;
                        for (std::int64_t co = 0; co < Cout; ++co) {
                            const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                            S* dwc = dw_ + ((co * Cin + ci) * KH) * KW;
                            for (std::int64_t kh = 0; kh < KH; ++kh) {
                                const std::int64_t offh = kh * dh - ph;
                                const std::int64_t ho_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                                const std::int64_t ho_end = std::min(Hout, floor_div(H - 1 - offh, sh) + 1);
                                for (std::int64_t kw = 0; kw < KW; ++kw) {
                                    const std::int64_t offw = kw * dw - pw;
                                    const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                                    const std::int64_t wo_end = std::min(Wout, floor_div(W - 1 - offw, sw) + 1);
                                    S acc = 0;
                                    for (std::int64_t ho = ho_lo; ho < ho_end; ++ho) {
                                        const S* xrow = xc + (ho * sh + offh) * W + offw;
                                        const S* grow = gc + ho * Wout;
                                        for (std::int64_t wo = wo_lo; wo < wo_end; ++wo) {
                                            acc += xrow[wo * sw] * grow[wo];
                                        }
                                    }
                                    dwc[kh * KW + kw] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                        S acc = 0;
                        for (std::int64_t i = 0; i < Hout * Wout; ++i) {
                            acc += gc[i];
                        }
                        bp->grad[static_cast<std::size_t>(co)] += acc;
                    }
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> transposed_conv2d(const TensorPtr<S>& x, const ConvKernel<S>& k) {
    const auto& w = k.weight;
    if (x->shape.c != w->shape.n) {
        throw ShapeError(format_msg("transposed_conv2d: channel axis mismatch: input C=", x->shape.c,
                                    ", kernel C_in=", w->shape.n));
    }
    const std::int64_t N = x->shape.n, Cin = x->shape.c, H = x->shape.h, W = x->shape.w;
    const std::int64_t Cout = w->shape.c, KH = w->shape.h, KW = w->shape.w;
    const std::int64_t sh = k.stride.first, sw = k.stride.second;
    const std::int64_t ph = k.padding.first, pw = k.padding.second;
    const std::int64_t dh = k.dilation.first, dw = k.dilation.second;
    const std::int64_t oph = k.output_padding.first, opw = k.output_padding.second;
    if (oph < 0 || opw < 0 || oph >= sh || opw >= sw) {
        throw ConfigError(format_msg("transposed_conv2d: output_padding (", oph, ",", opw,
                                     ") must be in [0, stride)"));
    }
    if (k.bias && (k.bias->shape.c != Cout || k.bias->shape.numel() != Cout)) {
        throw ShapeError(format_msg("transposed_conv2d: bias channel axis C=", k.bias->shape.c,
                                    " does not match C_out=", Cout));
    }
    const std::int64_t Hout = (H - 1) * sh - 2 * ph + dh * (KH - 1) + 1 + oph;
    const std::int64_t Wout = (W - 1) * sw - 2 * pw + dw * (KW - 1) + 1 + opw;
    if (Hout < 1 || Wout < 1) {
        throw ShapeError(format_msg("transposed_conv2d: spatial axes collapse: H'=", Hout, " W'=", Wout));
    }

    auto out = make_node<S>({N, Cout, Hout, Wout}, {x, w, k.bias}, "transposed_conv2d");

    const S* xd = x->data.data();
    const S* wd = w->data.data();
    S* od = out->data.data();
    for (std::int64_t n = 0; n < N; ++n) {
        if (k.bias) {
            for (std::int64_t co = 0; co < Cout; ++co) {
                const S bv = k.bias->data[static_cast<std::size_t>(co)];
                S* orow = od + ((n * Cout + co) * Hout) * Wout;
                std::fill(orow, orow + Hout * Wout, bv);
            }
        }
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const S* xc = xd + ((n * Cin + ci) * H) * W;
            for (std::int64_t co = 0; co < Cout; ++co) {
                S* oc = od + ((n * Cout + co) * Hout) * Wout;
                const S* wc = wd + ((ci * Cout + co) * KH) * KW;
                for (std::int64_t kh = 0; kh < KH; ++kh) {
                    const std::int64_t offh = kh * dh - ph;
                    const std::int64_t hi_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                    const std::int64_t hi_end = std::min(H, floor_div(Hout - 1 - offh, sh) + 1);
                    for (std::int64_t kw = 0; kw < KW; ++kw) {
                        const S wv = wc[kh * KW + kw];
                        const std::int64_t offw = kw * dw - pw;
                        const std::int64_t wi_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                        const std::int64_t wi_end = std::min(W, floor_div(Wout - 1 - offw, sw) + 1);
                        for (std::int64_t hi = hi_lo; hi < hi_end; ++hi) {
                            const S* xrow = xc + hi * W;
                            S* orow = oc + (hi * sh + offh) * Wout + offw;
                            for (std::int64_t wi = wi_lo; wi < wi_end; ++wi) {
                                orow[wi * sw] += wv * xrow[wi];
                            }
                        }
                    }
                }
            }
        }
    }

    if (out->requires_grad) {
        auto xp = x;
        auto wp = w;
        auto bp = k.bias;
        out->backprop = [xp, wp, bp, sh, sw, ph, pw, dh, dw](Tensor<S>& o) {
            const std::int64_t N = xp->shape.n, Cin = xp->shape.c, H = xp->shape.h, W = xp->shape.w;
            const std::int64_t Cout = wp->shape.c, KH = wp->shape.h, KW = wp->shape.w;
            const std::int64_t Hout = o.shape.h, Wout = o.shape.w;
            const S* gy = o.grad.data();
            if (xp->requires_grad) {
                xp->ensure_grad();
                S* dx = xp->grad.data();
                const S* wd = wp->data.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        S* dxc = dx + ((n * Cin + ci) * H) * W;
                        for (std::int64_t co = 0; co < Cout; ++co) {
                            const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                            const S* wc = wd + ((ci * Cout + co) * KH) * KW;
                            for (std::int64_t kh = 0; kh < KH; ++kh) {
                                const std::int64_t offh = kh * dh - ph;
                                const std::int64_t hi_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                                const std::int64_t hi_end = std::min(H, floor_div(Hout - 1 - offh, sh) + 1);
                                for (std::int64_t kw = 0; kw < KW; ++kw) {
                                    const S wv = wc[kh * KW + kw];
                                    const std::int64_t offw = kw * dw - pw;
                                    const std::int64_t wi_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                                    const std::int64_t wi_end = std::min(W, floor_div(Wout - 1 - offw, sw) + 1);
                                    for (std::int64_t hi = hi_lo; hi < hi_end; ++hi) {
                                        S* dxrow = dxc + hi * W;
                                        const S* grow = gc + (hi * sh + offh) * Wout + offw;
                                        for (std::int64_t wi = wi_lo; wi < wi_end; ++wi) {
                                            dxrow[wi] += wv * grow[wi * sw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                S* dw_ = wp->grad.data();
                const S* xd = xp->data.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        const S* xc = xd + ((n * Cin + ci) * H) * W;
                        for (std::int64_t co = 0; co < Cout; ++co) {
                            const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                            S* dwc = dw_ + ((ci * Cout + co) * KH) * KW;
                            for (std::int64_t kh = 0; kh < KH; ++kh) {
                                const std::int64_t offh = kh * dh - ph;
                                const std::int64_t hi_lo = std::max<std::int64_t>(0, ceil_div(-offh, sh));
                                const std::int64_t hi_end = std::min(H, floor_div(Hout - 1 - offh, sh) + 1);
                                for (std::int64_t kw = 0; kw < KW; ++kw) {
                                    const std::int64_t offw = kw * dw - pw;
                                    const std::int64_t wi_lo = std::max<std::int64_t>(0, ceil_div(-offw, sw));
                                    const std::int64_t wi_end = std::min(W, floor_div(Wout - 1 - offw, sw) + 1);
                                    S acc = 0;
                                    for (std::int64_t hi = hi_lo; hi < hi_end; ++hi) {
                                        const S* xrow = xc + hi * W;
                                        const S* grow = gc + (hi * sh + offh) * Wout + offw;
                                        for (std::int64_t wi = wi_lo; wi < wi_end; ++wi) {
                                            acc += xrow[wi] * grow[wi * sw];
                                        }
                                    }
                                    dwc[kh * KW + kw] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const S* gc = gy + ((n * Cout + co) * Hout) * Wout;
                        S acc = 0;
                        for (std::int64_t i = 0; i < Hout * Wout; ++i) {
                            acc += gc[i];
                        }
                        bp->grad[static_cast<std::size_t>(co)] += acc;
                    }
                }
            }
        };
    }
    return out;
}

// A k×m convolution emulated by its 1-D factors: the horizontal 1×m pass
// runs first, then the vertical k×1 pass.
template <typename S>
TensorPtr<S> sequential_factorized_conv(const TensorPtr<S>& x, const ConvKernel<S>& vertical,
                                        const ConvKernel<S>& horizontal) {
    if (vertical.weight->shape.w != 1) {
        throw ShapeError(format_msg("sequential_factorized_conv: vertical kernel width axis must be 1, got ",
                                    vertical.weight->shape.w));
    }
    if (horizontal.weight->shape.h != 1) {
        throw ShapeError(format_msg("sequential_factorized_conv: horizontal kernel height axis must be 1, got ",
                                    horizontal.weight->shape.h));
    }
    if (horizontal.weight->shape.n != vertical.weight->shape.c) {
        throw ShapeError(format_msg("sequential_factorized_conv: channel chaining mismatch: horizontal C_out=",
                                    horizontal.weight->shape.n, ", vertical C_in=", vertical.weight->shape.c));
    }
    return conv2d(conv2d(x, horizontal), vertical);
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// 2×2/stride-2 max pooling. Odd extents are padded on the right/bottom by
// replication; gradient goes to the first (row-major) maximum of a window.
template <typename S>
TensorPtr<S> max_pool2d(const TensorPtr<S>& x) {
    const std::int64_t N = x->shape.n, C = x->shape.c, H = x->shape.h, W = x->shape.w;
    const std::int64_t Hout = (H + 1) / 2, Wout = (W + 1) / 2;
    auto out = make_node<S>({N, C, Hout, Wout}, {x}, "max_pool2d");

    std::vector<std::int64_t> argmax(static_cast<std::size_t>(out->numel()));
    const S* xd = x->data.data();
    S* od = out->data.data();
    std::int64_t oi = 0;
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* xc = xd + nc * H * W;
        for (std::int64_t ho = 0; ho < Hout; ++ho) {
            for (std::int64_t wo = 0; wo < Wout; ++wo) {
                S best{};
                std::int64_t best_idx = -1;
                for (std::int64_t dh = 0; dh < 2; ++dh) {
                    const std::int64_t hi = std::min(2 * ho + dh, H - 1);
                    for (std::int64_t dw = 0; dw < 2; ++dw) {
                        const std::int64_t wi = std::min(2 * wo + dw, W - 1);
                        const S v = xc[hi * W + wi];
                        if (best_idx < 0 || v > best) {
                            best = v;
                            best_idx = nc * H * W + hi * W + wi;
                        }
                    }
                }
                od[oi] = best;
                argmax[static_cast<std::size_t>(oi)] = best_idx;
                ++oi;
            }
        }
    }

    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, argmax = std::move(argmax)](Tensor<S>& o) {
            if (!xp->requires_grad) {
                return;
            }
            xp->ensure_grad();
            for (std::size_t i = 0; i < argmax.size(); ++i) {
                xp->grad[static_cast<std::size_t>(argmax[i])] += o.grad[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> batch_norm(const TensorPtr<S>& x, NormState<S>& state, Mode mode) {
    if (state.kind != NormKind::batch) {
        throw ConfigError("batch_norm: state kind is not batch");
    }
    const std::int64_t N = x->shape.n, C = x->shape.c, H = x->shape.h, W = x->shape.w;
    if (C != state.channels()) {
        throw ShapeError(format_msg("batch_norm: channel axis mismatch: input C=", C,
                                    ", state C=", state.channels()));
    }
    const std::int64_t m = N * H * W;
    if (mode == Mode::train && m < 2) {
        throw Error(format_msg("batch_norm: train mode needs N*H*W >= 2, got ", m));
    }

    std::vector<S> mean(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    const S* xd = x->data.data();
    if (mode == Mode::train) {
        for (std::int64_t c = 0; c < C; ++c) {
            S acc = 0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* xc = xd + ((n * C + c) * H) * W;
                for (std::int64_t i = 0; i < H * W; ++i) {
                    acc += xc[i];
                }
            }
            mean[static_cast<std::size_t>(c)] = acc / S(m);
        }
        for (std::int64_t c = 0; c < C; ++c) {
            const S mu = mean[static_cast<std::size_t>(c)];
            S acc = 0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* xc = xd + ((n * C + c) * H) * W;
                for (std::int64_t i = 0; i < H * W; ++i) {
                    const S d = xc[i] - mu;
                    acc += d * d;
                }
            }
            var[static_cast<std::size_t>(c)] = acc / S(m);
        }
        // Running stats follow the usual convention: exponential average with
        // the unbiased variance estimate.
        const S mom = S(state.momentum);
        for (std::int64_t c = 0; c < C; ++c) {
            auto& rm = state.running_mean->data[static_cast<std::size_t>(c)];
            auto& rv = state.running_var->data[static_cast<std::size_t>(c)];
            rm = (S(1) - mom) * rm + mom * mean[static_cast<std::size_t>(c)];
            rv = (S(1) - mom) * rv + mom * var[static_cast<std::size_t>(c)] * S(m) / S(m - 1);
        }
        state.ever_updated = true;
    } else {
        if (!state.ever_updated && !state.warned_uninitialized) {
            warn("batch_norm: eval mode before any train-mode update; using initialized stats (mean 0, var 1)");
            state.warned_uninitialized = true;
        }
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = state.running_mean->data[static_cast<std::size_t>(c)];
            var[static_cast<std::size_t>(c)] = state.running_var->data[static_cast<std::size_t>(c)];
        }
    }

    std::vector<S> invstd(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        invstd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var[static_cast<std::size_t>(c)] + S(state.eps));
    }

    auto out = make_node<S>(x->shape, {x, state.gamma, state.beta}, "batch_norm");
    std::vector<S> xhat(x->data.size());
    S* od = out->data.data();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const S mu = mean[static_cast<std::size_t>(c)];
            const S is = invstd[static_cast<std::size_t>(c)];
            const S g = state.gamma->data[static_cast<std::size_t>(c)];
            const S b = state.beta->data[static_cast<std::size_t>(c)];
            const std::int64_t base = ((n * C + c) * H) * W;
            for (std::int64_t i = 0; i < H * W; ++i) {
                const S xh = (xd[base + i] - mu) * is;
                xhat[static_cast<std::size_t>(base + i)] = xh;
                od[base + i] = xh * g + b;
            }
        }
    }

    if (out->requires_grad) {
        auto xp = x;
        auto gp = state.gamma;
        auto bp = state.beta;
        const bool batch_stats = (mode == Mode::train);
        out->backprop = [xp, gp, bp, batch_stats, xhat = std::move(xhat),
                         invstd = std::move(invstd)](Tensor<S>& o) {
            const std::int64_t N = xp->shape.n, C = xp->shape.c, HW = xp->shape.h * xp->shape.w;
            const std::int64_t m = N * HW;
            const S* gy = o.grad.data();
            std::vector<S> sum_dy(static_cast<std::size_t>(C), S(0));
            std::vector<S> sum_dy_xhat(static_cast<std::size_t>(C), S(0));
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::int64_t base = (n * C + c) * HW;
                    S s1 = 0, s2 = 0;
                    for (std::int64_t i = 0; i < HW; ++i) {
                        s1 += gy[base + i];
                        s2 += gy[base + i] * xhat[static_cast<std::size_t>(base + i)];
                    }
                    sum_dy[static_cast<std::size_t>(c)] += s1;
                    sum_dy_xhat[static_cast<std::size_t>(c)] += s2;
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    bp->grad[static_cast<std::size_t>(c)] += sum_dy[static_cast<std::size_t>(c)];
                }
            }
            if (gp->requires_grad) {
                gp->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) {
                    gp->grad[static_cast<std::size_t>(c)] += sum_dy_xhat[static_cast<std::size_t>(c)];
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                S* dx = xp->grad.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const S g = gp->data[static_cast<std::size_t>(c)];
                        const S is = invstd[static_cast<std::size_t>(c)];
                        const std::int64_t base = (n * C + c) * HW;
                        if (batch_stats) {
                            const S sdy = sum_dy[static_cast<std::size_t>(c)];
                            const S sdyx = sum_dy_xhat[static_cast<std::size_t>(c)];
                            for (std::int64_t i = 0; i < HW; ++i) {
                                dx[base + i] += (g * is / S(m)) *
                                                (S(m) * gy[base + i] - sdy -
                                                 xhat[static_cast<std::size_t>(base + i)] * sdyx);
                            }
                        } else {
                            for (std::int64_t i = 0; i < HW; ++i) {
                                dx[base + i] += g * is * gy[base + i];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Layer norm over the (C,H,W) axes of each sample, per-channel affine.
template <typename S>
TensorPtr<S> layer_norm(const TensorPtr<S>& x, NormState<S>& state) {
    if (state.kind != NormKind::layer) {
        throw ConfigError("layer_norm: state kind is not layer");
    }
    const std::int64_t N = x->shape.n, C = x->shape.c, HW = x->shape.h * x->shape.w;
    if (C != state.channels()) {
        throw ShapeError(format_msg("layer_norm: channel axis mismatch: input C=", C,
                                    ", state C=", state.channels()));
    }
    const std::int64_t m = C * HW;

    auto out = make_node<S>(x->shape, {x, state.gamma, state.beta}, "layer_norm");
    std::vector<S> xhat(x->data.size());
    std::vector<S> invstd(static_cast<std::size_t>(N));
    const S* xd = x->data.data();
    S* od = out->data.data();
    for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t base = n * m;
        S acc = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            acc += xd[base + i];
        }
        const S mu = acc / S(m);
        S vacc = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            const S d = xd[base + i] - mu;
            vacc += d * d;
        }
        const S is = S(1) / std::sqrt(vacc / S(m) + S(state.eps));
        invstd[static_cast<std::size_t>(n)] = is;
        for (std::int64_t c = 0; c < C; ++c) {
            const S g = state.gamma->data[static_cast<std::size_t>(c)];
            const S b = state.beta->data[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < HW; ++i) {
                const std::int64_t idx = base + c * HW + i;
                const S xh = (xd[idx] - mu) * is;
                xhat[static_cast<std::size_t>(idx)] = xh;
                od[idx] = xh * g + b;
            }
        }
    }

    if (out->requires_grad) {
        auto xp = x;
        auto gp = state.gamma;
        auto bp = state.beta;
        out->backprop = [xp, gp, bp, xhat = std::move(xhat), invstd = std::move(invstd)](Tensor<S>& o) {
            const std::int64_t N = xp->shape.n, C = xp->shape.c, HW = xp->shape.h * xp->shape.w;
            const std::int64_t m = C * HW;
            const S* gy = o.grad.data();
            if (gp->requires_grad || bp->requires_grad) {
                gp->ensure_grad();
                bp->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const std::int64_t base = n * m + c * HW;
                        S dg = 0, db = 0;
                        for (std::int64_t i = 0; i < HW; ++i) {
                            dg += gy[base + i] * xhat[static_cast<std::size_t>(base + i)];
                            db += gy[base + i];
                        }
                        if (gp->requires_grad) {
                            gp->grad[static_cast<std::size_t>(c)] += dg;
                        }
                        if (bp->requires_grad) {
                            bp->grad[static_cast<std::size_t>(c)] += db;
                        }
                    }
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                S* dx = xp->grad.data();
                for (std::int64_t n = 0; n < N; ++n) {
                    const std::int64_t base = n * m;
                    S s1 = 0, s2 = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const S g = gp->data[static_cast<std::size_t>(c)];
                        for (std::int64_t i = 0; i < HW; ++i) {
                            const std::int64_t idx = base + c * HW + i;
                            const S gg = gy[idx] * g;
                            s1 += gg;
                            s2 += gg * xhat[static_cast<std::size_t>(idx)];
                        }
                    }
                    const S mean_g = s1 / S(m);
                    const S mean_gx = s2 / S(m);
                    const S is = invstd[static_cast<std::size_t>(n)];
                    for (std::int64_t c = 0; c < C; ++c) {
                        const S g = gp->data[static_cast<std::size_t>(c)];
                        for (std::int64_t i = 0; i < HW; ++i) {
                            const std::int64_t idx = base + c * HW + i;
                            dx[idx] += is * (gy[idx] * g - mean_g -
                                             xhat[static_cast<std::size_t>(idx)] * mean_gx);
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over an axis subset
// ---------------------------------------------------------------------------

// Softmax jointly over the flattened axes in `axes`, independently for every
// index of the complementary axes. Stabilized by max subtraction.
template <typename S>
TensorPtr<S> softmax_axes(const TensorPtr<S>& x, AxisSet axes) {
    if (!axes.c && !axes.h && !axes.w) {
        throw Error("softmax_axes: empty axis set");
    }
    const std::int64_t N = x->shape.n, C = x->shape.c, H = x->shape.h, W = x->shape.w;
    const std::int64_t groups = N * (axes.c ? 1 : C) * (axes.h ? 1 : H) * (axes.w ? 1 : W);

    auto group_of = [&](std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        std::int64_t g = n;
        if (!axes.c) {
            g = g * C + c;
        }
        if (!axes.h) {
            g = g * H + h;
        }
        if (!axes.w) {
            g = g * W + w;
        }
        return g;
    };

    auto out = make_node<S>(x->shape, {x}, "softmax_axes");
    const S* xd = x->data.data();
    S* od = out->data.data();

    std::vector<S> gmax(static_cast<std::size_t>(groups), std::numeric_limits<S>::lowest());
    std::vector<S> gsum(static_cast<std::size_t>(groups), S(0));
    std::vector<std::int64_t> gid(x->data.size());
    std::int64_t idx = 0;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t h = 0; h < H; ++h) {
                for (std::int64_t w = 0; w < W; ++w, ++idx) {
                    const std::int64_t g = group_of(n, c, h, w);
                    gid[static_cast<std::size_t>(idx)] = g;
                    gmax[static_cast<std::size_t>(g)] = std::max(gmax[static_cast<std::size_t>(g)], xd[idx]);
                }
            }
        }
    }
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const S e = std::exp(xd[i] - gmax[static_cast<std::size_t>(gid[i])]);
        od[i] = e;
        gsum[static_cast<std::size_t>(gid[i])] += e;
    }
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        od[i] /= gsum[static_cast<std::size_t>(gid[i])];
    }

    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, gid = std::move(gid), groups](Tensor<S>& o) {
            if (!xp->requires_grad) {
                return;
            }
            xp->ensure_grad();
            const S* s = o.data.data();
            const S* gy = o.grad.data();
            std::vector<S> dot(static_cast<std::size_t>(groups), S(0));
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                dot[static_cast<std::size_t>(gid[i])] += gy[i] * s[i];
            }
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                xp->grad[i] += s[i] * (gy[i] - dot[static_cast<std::size_t>(gid[i])]);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> relu(const TensorPtr<S>& x) {
    auto out = make_node<S>(x->shape, {x}, "relu");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = x->data[i] > S(0) ? x->data[i] : S(0);
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                if (xp->data[i] > S(0)) {
                    xp->grad[i] += o.grad[i];
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> sigmoid(const TensorPtr<S>& x) {
    auto out = make_node<S>(x->shape, {x}, "sigmoid");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = S(1) / (S(1) + std::exp(-x->data[i]));
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                xp->grad[i] += o.grad[i] * o.data[i] * (S(1) - o.data[i]);
            }
        };
    }
    return out;
}

// Exact Gaussian-CDF form: gelu(x) = x * Phi(x).
template <typename S>
TensorPtr<S> gelu(const TensorPtr<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    auto out = make_node<S>(x->shape, {x}, "gelu");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const double v = static_cast<double>(x->data[i]);
        out->data[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp](Tensor<S>& o) {
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                const double v = static_cast<double>(xp->data[i]);
                const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                xp->grad[i] += o.grad[i] * static_cast<S>(phi + v * pdf);
            }
        };
    }
    return out;
}

template <typename S>
void check_same_shape(const TensorPtr<S>& a, const TensorPtr<S>& b, const char* opname) {
    if (a->shape != b->shape) {
        const char* axis = a->shape.n != b->shape.n   ? "batch"
                           : a->shape.c != b->shape.c ? "channel"
                           : a->shape.h != b->shape.h ? "height"
                                                      : "width";
        throw ShapeError(format_msg(opname, ": ", axis, " axis mismatch: ", a->shape.str(), " vs ",
                                    b->shape.str()));
    }
}

template <typename S>
TensorPtr<S> add(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    check_same_shape(a, b, "add");
    auto out = make_node<S>(a->shape, {a, b}, "add");
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        out->data[i] = a->data[i] + b->data[i];
    }
    if (out->requires_grad) {
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp](Tensor<S>& o) {
            if (ap->requires_grad) {
                ap->accumulate_grad(o.grad.data(), o.grad.size());
            }
            if (bp->requires_grad) {
                bp->accumulate_grad(o.grad.data(), o.grad.size());
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> mul(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node<S>(a->shape, {a, b}, "mul");
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        out->data[i] = a->data[i] * b->data[i];
    }
    if (out->requires_grad) {
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp](Tensor<S>& o) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < o.data.size(); ++i) {
                    ap->grad[i] += o.grad[i] * bp->data[i];
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < o.data.size(); ++i) {
                    bp->grad[i] += o.grad[i] * ap->data[i];
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> div(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    check_same_shape(a, b, "div");
    auto out = make_node<S>(a->shape, {a, b}, "div");
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        out->data[i] = a->data[i] / b->data[i];
    }
    if (out->requires_grad) {
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp](Tensor<S>& o) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (std::size_t i = 0; i < o.data.size(); ++i) {
                    ap->grad[i] += o.grad[i] / bp->data[i];
                }
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (std::size_t i = 0; i < o.data.size(); ++i) {
                    bp->grad[i] += -o.grad[i] * ap->data[i] / (bp->data[i] * bp->data[i]);
                }
            }
        };
    }
    return out;
}

// y = scale * x + shift (elementwise with scalar coefficients).
template <typename S>
TensorPtr<S> affine(const TensorPtr<S>& x, S scale, S shift) {
    auto out = make_node<S>(x->shape, {x}, "affine");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = scale * x->data[i] + shift;
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, scale](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                xp->grad[i] += scale * o.grad[i];
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> log_op(const TensorPtr<S>& x) {
    auto out = make_node<S>(x->shape, {x}, "log");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = std::log(x->data[i]);
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                xp->grad[i] += o.grad[i] / xp->data[i];
            }
        };
    }
    return out;
}

// Gradient passes only through the strict interior of [lo, hi].
template <typename S>
TensorPtr<S> clamp(const TensorPtr<S>& x, S lo, S hi) {
    auto out = make_node<S>(x->shape, {x}, "clamp");
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        out->data[i] = std::min(std::max(x->data[i], lo), hi);
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, lo, hi](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                if (xp->data[i] > lo && xp->data[i] < hi) {
                    xp->grad[i] += o.grad[i];
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel split / concat
// ---------------------------------------------------------------------------

template <typename S>
std::vector<TensorPtr<S>> channel_split(const TensorPtr<S>& x, int parts) {
    const std::int64_t C = x->shape.c;
    if (parts < 1 || C % parts != 0) {
        throw ShapeError(format_msg("channel_split: channel axis C=", C, " not divisible by ", parts));
    }
    const std::int64_t N = x->shape.n, H = x->shape.h, W = x->shape.w;
    const std::int64_t Cp = C / parts;
    std::vector<TensorPtr<S>> out;
    out.reserve(static_cast<std::size_t>(parts));
    for (int p = 0; p < parts; ++p) {
        auto t = make_node<S>({N, Cp, H, W}, {x}, "channel_split");
        const std::int64_t c0 = p * Cp;
        for (std::int64_t n = 0; n < N; ++n) {
            const S* src = x->data.data() + ((n * C + c0) * H) * W;
            S* dst = t->data.data() + (n * Cp * H) * W;
            std::copy(src, src + Cp * H * W, dst);
        }
        if (t->requires_grad) {
            auto xp = x;
            t->backprop = [xp, c0, Cp](Tensor<S>& o) {
                xp->ensure_grad();
                const std::int64_t N = xp->shape.n, C = xp->shape.c;
                const std::int64_t HW = xp->shape.h * xp->shape.w;
                for (std::int64_t n = 0; n < N; ++n) {
                    S* dst = xp->grad.data() + ((n * C + c0) * HW);
                    const S* src = o.grad.data() + n * Cp * HW;
                    for (std::int64_t i = 0; i < Cp * HW; ++i) {
                        dst[i] += src[i];
                    }
                }
            };
        }
        out.push_back(std::move(t));
    }
    return out;
}

template <typename S>
TensorPtr<S> channel_concat(const std::vector<TensorPtr<S>>& parts) {
    if (parts.empty()) {
        throw ShapeError("channel_concat: no parts");
    }
    const std::int64_t N = parts[0]->shape.n, H = parts[0]->shape.h, W = parts[0]->shape.w;
    std::int64_t Cout = 0;
    for (const auto& p : parts) {
        if (p->shape.n != N || p->shape.h != H || p->shape.w != W) {
            const char* axis = p->shape.n != N ? "batch" : p->shape.h != H ? "height" : "width";
            throw ShapeError(format_msg("channel_concat: ", axis, " axis mismatch: ", p->shape.str(),
                                        " vs ", parts[0]->shape.str()));
        }
        Cout += p->shape.c;
    }
    auto out = make_node_vec<S>({N, Cout, H, W}, parts, "channel_concat");
    std::int64_t c0 = 0;
    for (const auto& p : parts) {
        const std::int64_t Cp = p->shape.c;
        for (std::int64_t n = 0; n < N; ++n) {
            const S* src = p->data.data() + (n * Cp * H) * W;
            S* dst = out->data.data() + ((n * Cout + c0) * H) * W;
            std::copy(src, src + Cp * H * W, dst);
        }
        c0 += Cp;
    }
    if (out->requires_grad) {
        auto ps = parts;
        out->backprop = [ps](Tensor<S>& o) {
            const std::int64_t N = o.shape.n, Cout = o.shape.c, HW = o.shape.h * o.shape.w;
            std::int64_t c0 = 0;
            for (const auto& p : ps) {
                const std::int64_t Cp = p->shape.c;
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t n = 0; n < N; ++n) {
                        const S* src = o.grad.data() + ((n * Cout + c0) * HW);
                        S* dst = p->grad.data() + n * Cp * HW;
                        for (std::int64_t i = 0; i < Cp * HW; ++i) {
                            dst[i] += src[i];
                        }
                    }
                }
                c0 += Cp;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and resampling
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> sum_all(const TensorPtr<S>& x) {
    auto out = make_node<S>({1, 1, 1, 1}, {x}, "sum_all");
    S acc = 0;
    for (S v : x->data) {
        acc += v;
    }
    out->data[0] = acc;
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp](Tensor<S>& o) {
            xp->ensure_grad();
            const S g = o.grad[0];
            for (auto& v : xp->grad) {
                v += g;
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> mean_all(const TensorPtr<S>& x) {
    auto out = make_node<S>({1, 1, 1, 1}, {x}, "mean_all");
    S acc = 0;
    for (S v : x->data) {
        acc += v;
    }
    const S inv = S(1) / S(x->numel());
    out->data[0] = acc * inv;
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, inv](Tensor<S>& o) {
            xp->ensure_grad();
            const S g = o.grad[0] * inv;
            for (auto& v : xp->grad) {
                v += g;
            }
        };
    }
    return out;
}

// Sum over (C,H,W) per sample -> (N,1,1,1).
template <typename S>
TensorPtr<S> sum_per_sample(const TensorPtr<S>& x) {
    const std::int64_t N = x->shape.n;
    const std::int64_t m = x->shape.c * x->shape.h * x->shape.w;
    auto out = make_node<S>({N, 1, 1, 1}, {x}, "sum_per_sample");
    for (std::int64_t n = 0; n < N; ++n) {
        S acc = 0;
        const S* base = x->data.data() + n * m;
        for (std::int64_t i = 0; i < m; ++i) {
            acc += base[i];
        }
        out->data[static_cast<std::size_t>(n)] = acc;
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, m](Tensor<S>& o) {
            xp->ensure_grad();
            for (std::int64_t n = 0; n < o.shape.n; ++n) {
                const S g = o.grad[static_cast<std::size_t>(n)];
                S* base = xp->grad.data() + n * m;
                for (std::int64_t i = 0; i < m; ++i) {
                    base[i] += g;
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorPtr<S> upsample_nearest(const TensorPtr<S>& x, int factor) {
    if (factor < 1) {
        throw ConfigError(format_msg("upsample_nearest: factor must be >= 1, got ", factor));
    }
    const std::int64_t N = x->shape.n, C = x->shape.c, H = x->shape.h, W = x->shape.w;
    const std::int64_t f = factor;
    auto out = make_node<S>({N, C, H * f, W * f}, {x}, "upsample_nearest");
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const S* xc = x->data.data() + nc * H * W;
        S* oc = out->data.data() + nc * H * f * W * f;
        for (std::int64_t ho = 0; ho < H * f; ++ho) {
            const S* xrow = xc + (ho / f) * W;
            S* orow = oc + ho * W * f;
            for (std::int64_t wo = 0; wo < W * f; ++wo) {
                orow[wo] = xrow[wo / f];
            }
        }
    }
    if (out->requires_grad) {
        auto xp = x;
        out->backprop = [xp, f](Tensor<S>& o) {
            xp->ensure_grad();
            const std::int64_t N = xp->shape.n, C = xp->shape.c, H = xp->shape.h, W = xp->shape.w;
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                S* dxc = xp->grad.data() + nc * H * W;
                const S* gc = o.grad.data() + nc * H * f * W * f;
                for (std::int64_t ho = 0; ho < H * f; ++ho) {
                    S* dxrow = dxc + (ho / f) * W;
                    const S* grow = gc + ho * W * f;
                    for (std::int64_t wo = 0; wo < W * f; ++wo) {
                        dxrow[wo / f] += grow[wo];
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace smokenet
