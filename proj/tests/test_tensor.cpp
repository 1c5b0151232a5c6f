#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "smokenet/gradcheck.hpp"
#include "smokenet/ops.hpp"

using namespace smokenet;

namespace {

TensorPtr<double> randt(std::mt19937_64& rng, Shape s, double lo = -1, double hi = 1, bool grad = false) {
    return uniform<double>(s, rng, lo, hi, grad);
}

ConvKernel<double> kernel_of(TensorPtr<double> w, TensorPtr<double> b = nullptr,
                             std::pair<int, int> stride = {1, 1}, std::pair<int, int> padding = {0, 0},
                             std::pair<int, int> dilation = {1, 1},
                             std::pair<int, int> output_padding = {0, 0}) {
    ConvKernel<double> k{std::move(w), std::move(b)};
    k.stride = stride;
    k.padding = padding;
    k.dilation = dilation;
    k.output_padding = output_padding;
    return k;
}

double dot(const TensorPtr<double>& a, const TensorPtr<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        acc += a->data[i] * b->data[i];
    }
    return acc;
}

}  // namespace

TEST_CASE("conv2d: 1x3 box filter on ones") {
    auto x = ones<double>({1, 1, 3, 3});
    auto w = from_values<double>({1, 1, 1, 3}, {1, 1, 1});
    auto y = conv2d(x, kernel_of(w, nullptr, {1, 1}, {0, 1}));
    REQUIRE(y->shape == Shape{1, 1, 3, 3});
    for (std::int64_t h = 0; h < 3; ++h) {
        CHECK(y->at(0, 0, h, 0) == doctest::Approx(2.0));
        CHECK(y->at(0, 0, h, 1) == doctest::Approx(3.0));
        CHECK(y->at(0, 0, h, 2) == doctest::Approx(2.0));
    }
}

TEST_CASE("conv2d: degenerate 1x1 is w*x + b") {
    auto x = from_values<double>({1, 1, 1, 1}, {1.7});
    auto w = from_values<double>({1, 1, 1, 1}, {-2.5});
    auto b = from_values<double>({1, 1, 1, 1}, {0.25});
    auto y = conv2d(x, kernel_of(w, b));
    CHECK(y->item() == doctest::Approx(-2.5 * 1.7 + 0.25).epsilon(1e-15));
}

TEST_CASE("conv2d: matches direct-loop oracle") {
    std::mt19937_64 rng(7);
    auto x = randt(rng, {2, 3, 8, 8});
    auto w = randt(rng, {4, 3, 3, 3});
    auto b = randt(rng, {1, 4, 1, 1});
    auto y = conv2d(x, kernel_of(w, b, {1, 1}, {1, 1}));
    int ho = 0, wo = 0;
    std::vector<double> bias(b->data.begin(), b->data.end());
    auto ref = oracle::conv2d_ref(x->data, 2, 3, 8, 8, w->data, 4, 3, 3, &bias, 1, 1, 1, 1, 1, 1, ho, wo);
    REQUIRE(y->shape == Shape{2, 4, ho, wo});
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(y->data[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("conv2d: strided + dilated matches oracle") {
    std::mt19937_64 rng(11);
    auto x = randt(rng, {1, 2, 9, 10});
    auto w = randt(rng, {3, 2, 3, 3});
    auto y = conv2d(x, kernel_of(w, nullptr, {2, 2}, {2, 1}, {2, 1}));
    int ho = 0, wo = 0;
    auto ref = oracle::conv2d_ref(x->data, 1, 2, 9, 10, w->data, 3, 3, 3, nullptr, 2, 2, 2, 1, 2, 1, ho, wo);
    REQUIRE(y->shape.h == ho);
    REQUIRE(y->shape.w == wo);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(y->data[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("conv2d: channel mismatch names the axis") {
    auto x = ones<double>({1, 3, 4, 4});
    auto w = ones<double>({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, kernel_of(w)), doctest::Contains("channel"), ShapeError);
}

TEST_CASE("factorized conv equals direct outer-product conv") {
    std::mt19937_64 rng(3);
    auto x = randt(rng, {1, 1, 6, 6});
    auto wv = from_values<double>({1, 1, 3, 1}, {1, 2, 1});
    auto wh = from_values<double>({1, 1, 1, 3}, {1, 0, -1});
    auto y = sequential_factorized_conv(x, kernel_of(wv, nullptr, {1, 1}, {1, 0}),
                                        kernel_of(wh, nullptr, {1, 1}, {0, 1}));
    // direct kernel v (x) h
    std::vector<double> k2;
    for (double v : {1.0, 2.0, 1.0}) {
        for (double h : {1.0, 0.0, -1.0}) {
            k2.push_back(v * h);
        }
    }
    auto wd = from_values<double>({1, 1, 3, 3}, k2);
    auto yd = conv2d(x, kernel_of(wd, nullptr, {1, 1}, {1, 1}));
    REQUIRE(y->shape == yd->shape);
    for (std::size_t i = 0; i < y->data.size(); ++i) {
        CHECK(std::abs(y->data[i] - yd->data[i]) < 1e-12);
    }
}

TEST_CASE("factorized conv: identity vertical factor collapses to the horizontal conv") {
    std::mt19937_64 rng(4);
    auto x = randt(rng, {1, 1, 5, 5});
    auto wid = from_values<double>({1, 1, 1, 1}, {1.0});
    auto wh = from_values<double>({1, 1, 1, 3}, {0.5, -1.0, 2.0});
    auto hk = kernel_of(wh, nullptr, {1, 1}, {0, 1});
    auto y = sequential_factorized_conv(x, kernel_of(wid), hk);
    auto yd = conv2d(x, hk);
    for (std::size_t i = 0; i < y->data.size(); ++i) {
        CHECK(y->data[i] == yd->data[i]);
    }
}

TEST_CASE("factorized 5x5 shape matches direct 5x5 shape") {
    std::mt19937_64 rng(5);
    for (int pad : {0, 2}) {
        auto x = randt(rng, {1, 1, 12, 9});
        auto wv = randt(rng, {1, 1, 5, 1});
        auto wh = randt(rng, {1, 1, 1, 5});
        auto y = sequential_factorized_conv(x, kernel_of(wv, nullptr, {1, 1}, {pad, 0}),
                                            kernel_of(wh, nullptr, {1, 1}, {0, pad}));
        auto wd = randt(rng, {1, 1, 5, 5});
        auto yd = conv2d(x, kernel_of(wd, nullptr, {1, 1}, {pad, pad}));
        CHECK(y->shape == yd->shape);
    }
}

TEST_CASE("factorized conv: channel chaining mismatch throws") {
    auto x = ones<double>({1, 2, 5, 5});
    auto wv = ones<double>({2, 3, 3, 1});  // vertical expects 3 in-channels
    auto wh = ones<double>({2, 2, 1, 3});  // horizontal emits 2
    CHECK_THROWS_AS(sequential_factorized_conv(x, kernel_of(wv, nullptr, {1, 1}, {1, 0}),
                                               kernel_of(wh, nullptr, {1, 1}, {0, 1})),
                    ShapeError);
}

TEST_CASE("transposed_conv2d: impulse kernel stamps inputs on the stride-2 grid") {
    auto x = from_values<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    std::vector<double> kv(9, 0.0);
    kv[4] = 1.0;  // center tap
    auto w = from_values<double>({1, 1, 3, 3}, kv);
    auto y = transposed_conv2d(x, kernel_of(w, nullptr, {2, 2}, {1, 1}, {1, 1}, {1, 1}));
    REQUIRE(y->shape == Shape{1, 1, 4, 4});
    for (std::int64_t h = 0; h < 4; ++h) {
        for (std::int64_t wq = 0; wq < 4; ++wq) {
            const double expect = (h % 2 == 0 && wq % 2 == 0) ? x->at(0, 0, h / 2, wq / 2) : 0.0;
            CHECK(y->at(0, 0, h, wq) == doctest::Approx(expect));
        }
    }
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = randt(rng, {1, 3, 8, 8});
        auto w = randt(rng, {2, 3, 3, 3});
        auto y = randt(rng, {1, 2, 4, 4});
        auto cx = conv2d(x, kernel_of(w, nullptr, {2, 2}, {1, 1}));
        REQUIRE(cx->shape == y->shape);
        auto ty = transposed_conv2d(y, kernel_of(w, nullptr, {2, 2}, {1, 1}, {1, 1}, {1, 1}));
        REQUIRE(ty->shape == x->shape);
        CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-10);
    }
}

TEST_CASE("transposed_conv2d: stride-2 upsampler doubles spatial extents") {
    std::mt19937_64 rng(13);
    auto x = randt(rng, {1, 4, 16, 16});
    auto w = randt(rng, {4, 6, 3, 3});
    auto y = transposed_conv2d(x, kernel_of(w, nullptr, {2, 2}, {1, 1}, {1, 1}, {1, 1}));
    CHECK(y->shape == Shape{1, 6, 32, 32});
}

TEST_CASE("transposed_conv2d: output padding must stay below stride") {
    auto x = ones<double>({1, 1, 4, 4});
    auto w = ones<double>({1, 1, 3, 3});
    CHECK_THROWS_AS(transposed_conv2d(x, kernel_of(w, nullptr, {2, 2}, {1, 1}, {1, 1}, {2, 0})),
                    ConfigError);
}

TEST_CASE("max_pool2d basics") {
    auto x = from_values<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool2d(x)->item() == 4.0);

    auto c = full<double>({1, 1, 4, 4}, 2.5, true);
    auto y = max_pool2d(c);
    for (double v : y->data) {
        CHECK(v == 2.5);
    }
    auto loss = sum_all(y);
    loss->backward();
    // Tie-break: gradient mass lands on the top-left of each window.
    for (std::int64_t h = 0; h < 4; ++h) {
        for (std::int64_t w = 0; w < 4; ++w) {
            CHECK(c->grad[static_cast<std::size_t>(h * 4 + w)] == ((h % 2 == 0 && w % 2 == 0) ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("max_pool2d matches brute-force scan, including odd extents") {
    std::mt19937_64 rng(17);
    for (Shape s : {Shape{1, 2, 6, 6}, Shape{2, 1, 5, 7}}) {
        auto x = randt(rng, s);
        auto y = max_pool2d(x);
        int ho = 0, wo = 0;
        auto ref = oracle::maxpool_ref(x->data, static_cast<int>(s.n), static_cast<int>(s.c),
                                       static_cast<int>(s.h), static_cast<int>(s.w), ho, wo);
        REQUIRE(y->shape == Shape{s.n, s.c, ho, wo});
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(y->data[i] == ref[i]);
        }
    }
}

TEST_CASE("batch_norm: train mode normalizes per channel") {
    std::mt19937_64 rng(21);
    auto x = randt(rng, {4, 3, 5, 5}, -3, 3);
    auto st = NormState<double>::batch(3);
    auto y = batch_norm(x, st, Mode::train);
    const std::int64_t m = 4 * 5 * 5;
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (std::int64_t n = 0; n < 4; ++n) {
            for (std::int64_t i = 0; i < 25; ++i) {
                mean += y->at(n, c, i / 5, i % 5);
            }
        }
        mean /= static_cast<double>(m);
        for (std::int64_t n = 0; n < 4; ++n) {
            for (std::int64_t i = 0; i < 25; ++i) {
                const double d = y->at(n, c, i / 5, i % 5) - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(m);
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-4);  // eps-floored
    }
    CHECK(st.ever_updated);
}

TEST_CASE("batch_norm: constant channel maps to zero pre-affine") {
    auto x = full<double>({2, 1, 2, 2}, 3.25);
    auto st = NormState<double>::batch(1);
    auto y = batch_norm(x, st, Mode::train);
    for (double v : y->data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("batch_norm: eval mode matches hand arithmetic") {
    auto x = from_values<double>({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto st = NormState<double>::batch(1);
    st.running_mean->data[0] = 1.5;
    st.running_var->data[0] = 4.0;
    st.gamma->data[0] = 2.0;
    st.beta->data[0] = -1.0;
    st.ever_updated = true;
    auto y = batch_norm(x, st, Mode::eval);
    for (std::size_t i = 0; i < 8; ++i) {
        const double expect = (x->data[i] - 1.5) / std::sqrt(4.0 + 1e-5) * 2.0 - 1.0;
        CHECK(y->data[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm: train mode requires at least two values per channel") {
    auto x = ones<double>({1, 2, 1, 1});
    auto st = NormState<double>::batch(2);
    CHECK_THROWS_AS(batch_norm(x, st, Mode::train), Error);
}

TEST_CASE("layer_norm: per-sample statistics") {
    std::mt19937_64 rng(23);
    auto x = randt(rng, {3, 4, 2, 2}, -2, 2);
    auto st = NormState<double>::layer(4);
    auto y = layer_norm(x, st);
    for (std::int64_t n = 0; n < 3; ++n) {
        double mean = 0;
        for (std::int64_t i = 0; i < 16; ++i) {
            mean += y->data[static_cast<std::size_t>(n * 16 + i)];
        }
        CHECK(std::abs(mean / 16.0) < 1e-10);
    }

    auto single = from_values<double>({1, 1, 1, 1}, {7.0});
    auto st1 = NormState<double>::layer(1);
    CHECK(layer_norm(single, st1)->item() == 0.0);
}

TEST_CASE("layer_norm matches hand arithmetic on 1x2x1x2") {
    auto x = from_values<double>({1, 2, 1, 2}, {1, 2, 3, 6});
    auto st = NormState<double>::layer(2);
    st.gamma->data = {2.0, 0.5};
    st.beta->data = {0.0, 1.0};
    auto y = layer_norm(x, st);
    const double mu = 3.0;
    const double var = ((1 - mu) * (1 - mu) + (2 - mu) * (2 - mu) + (3 - mu) * (3 - mu) + (6 - mu) * (6 - mu)) / 4.0;
    const double is = 1.0 / std::sqrt(var + 1e-5);
    CHECK(y->data[0] == doctest::Approx((1 - mu) * is * 2.0).epsilon(1e-12));
    CHECK(y->data[1] == doctest::Approx((2 - mu) * is * 2.0).epsilon(1e-12));
    CHECK(y->data[2] == doctest::Approx((3 - mu) * is * 0.5 + 1.0).epsilon(1e-12));
    CHECK(y->data[3] == doctest::Approx((6 - mu) * is * 0.5 + 1.0).epsilon(1e-12));
}

TEST_CASE("softmax_axes: uniform input, saturation, partition, shift invariance") {
    auto u = full<double>({1, 4, 3, 3}, 0.37);
    auto su = softmax_axes(u, AxisSet{.c = false, .h = true, .w = true});
    for (double v : su->data) {
        CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
    }

    auto x = zeros<double>({1, 1, 3, 3});
    x->data[4] = 50.0;
    auto sx = softmax_axes(x, AxisSet{.c = false, .h = true, .w = true});
    CHECK(sx->data[4] > 1.0 - 1e-12);

    std::mt19937_64 rng(29);
    const AxisSet views[] = {{false, true, true}, {true, true, false}, {true, false, true}};
    for (const AxisSet& ax : views) {
        auto r = randt(rng, {2, 4, 3, 3}, -4, 4);
        auto s = softmax_axes(r, ax);
        // partition: sums over each group equal 1
        const std::int64_t N = 2, C = 4, H = 3, W = 3;
        std::vector<double> sums(64, 0.0);
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t c = 0; c < C; ++c) {
                for (std::int64_t h = 0; h < H; ++h) {
                    for (std::int64_t w = 0; w < W; ++w) {
                        std::int64_t g = n;
                        if (!ax.c) {
                            g = g * C + c;
                        }
                        if (!ax.h) {
                            g = g * H + h;
                        }
                        if (!ax.w) {
                            g = g * W + w;
                        }
                        sums[static_cast<std::size_t>(g)] += s->at(n, c, h, w);
                    }
                }
            }
        }
        const std::int64_t groups = N * (ax.c ? 1 : C) * (ax.h ? 1 : H) * (ax.w ? 1 : W);
        for (std::int64_t g = 0; g < groups; ++g) {
            CHECK(std::abs(sums[static_cast<std::size_t>(g)] - 1.0) < 1e-12);
        }
        // invariance under adding a constant along the softmax axes
        auto shifted = affine(r, 1.0, 17.5);
        auto s2 = softmax_axes(shifted, ax);
        for (std::size_t i = 0; i < s->data.size(); ++i) {
            CHECK(std::abs(s->data[i] - s2->data[i]) < 1e-12);
        }
    }

    CHECK_THROWS_AS(softmax_axes(u, AxisSet{}), Error);
}

TEST_CASE("activations: fixed points and quadrature oracle for gelu") {
    auto x = from_values<double>({1, 1, 1, 2}, {-2, 3});
    auto r = relu(x);
    CHECK(r->data[0] == 0.0);
    CHECK(r->data[1] == 3.0);

    CHECK(sigmoid(from_values<double>({1, 1, 1, 1}, {0.0}))->item() == doctest::Approx(0.5).epsilon(1e-15));

    for (double v : {-2.0, 0.0, 1.0}) {
        auto g = gelu(from_values<double>({1, 1, 1, 1}, {v}));
        const double expect = v * oracle::gaussian_cdf_quad(v);
        CHECK(std::abs(g->item() - expect) < 1e-9);
    }
}

TEST_CASE("channel_split: round trip, ordering, divisibility error") {
    std::mt19937_64 rng(31);
    auto x = randt(rng, {2, 8, 3, 3});
    auto parts = channel_split(x, 4);
    REQUIRE(parts.size() == 4);
    for (const auto& p : parts) {
        CHECK(p->shape == Shape{2, 2, 3, 3});
    }
    auto back = channel_concat(parts);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        CHECK(back->data[i] == x->data[i]);
    }

    auto x4 = from_values<double>({1, 4, 1, 1}, {10, 20, 30, 40});
    auto p4 = channel_split(x4, 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(p4[static_cast<std::size_t>(i)]->item() == 10.0 * (i + 1));
    }

    auto bad = ones<double>({1, 6, 2, 2});
    CHECK_THROWS_WITH_AS(channel_split(bad, 4), doctest::Contains("channel"), ShapeError);
}

TEST_CASE("channel_concat: sums channels and validates spatial axes") {
    std::mt19937_64 rng(37);
    auto a = randt(rng, {1, 2, 3, 3});
    auto b = randt(rng, {1, 3, 3, 3});
    auto cat = channel_concat<double>({a, b});
    CHECK(cat->shape == Shape{1, 5, 3, 3});

    auto bad = randt(rng, {1, 2, 4, 3});
    CHECK_THROWS_WITH_AS(channel_concat<double>({a, bad}), doctest::Contains("height"), ShapeError);
}

TEST_CASE("backward: linear map gradient is exact, accumulation doubles") {
    std::mt19937_64 rng(41);
    auto x = randt(rng, {1, 2, 3, 3});
    auto w = randt(rng, {1, 2, 3, 3}, -1, 1, true);
    auto loss = sum_all(mul(w, x));
    loss->backward();
    REQUIRE(w->grad.size() == w->data.size());
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        CHECK(w->grad[i] == x->data[i]);
    }
    loss->backward();
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        CHECK(w->grad[i] == 2.0 * x->data[i]);
    }
}

TEST_CASE("backward: non-scalar loss rejected") {
    auto w = ones<double>({1, 2, 2, 2}, true);
    auto y = relu(w);
    CHECK_THROWS_AS(y->backward(), ShapeError);
}

TEST_CASE("determinism: identical seeds give bit-identical results") {
    auto run = [] {
        std::mt19937_64 rng(1234);
        auto x = uniform<double>({2, 3, 6, 6}, rng, -1, 1);
        auto w = uniform<double>({4, 3, 3, 3}, rng, -1, 1);
        ConvKernel<double> k{w, nullptr};
        k.padding = {1, 1};
        auto y = max_pool2d(relu(conv2d(x, k)));
        return oracle::fnv1a(y->data.data(), y->data.size() * sizeof(double));
    };
    CHECK(run() == run());
}

TEST_CASE("finite outputs on finite inputs") {
    std::mt19937_64 rng(43);
    auto x = randt(rng, {2, 4, 8, 8}, -10, 10);
    auto w = randt(rng, {4, 4, 3, 3});
    ConvKernel<double> k{w, nullptr};
    k.padding = {1, 1};
    auto st = NormState<double>::batch(4);
    auto y = softmax_axes(gelu(batch_norm(conv2d(x, k), st, Mode::train)),
                          AxisSet{.c = false, .h = true, .w = true});
    for (double v : y->data) {
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("gradient suite: all ops pass central finite differences") {
    for (const auto& r : run_gradient_suite(3)) {
        INFO(r.op);
        CHECK(r.max_rel_err < 1e-6);
    }
}

TEST_CASE("gradient suite: corrupted backward is detected (negative control)") {
    std::mt19937_64 rng(47);
    auto x = uniform<double>({1, 2, 3, 3}, rng, -1, 1, true);
    auto broken_scale = [&x] {
        auto out = make_node<double>(x->shape, {x}, "broken_scale");
        for (std::size_t i = 0; i < x->data.size(); ++i) {
            out->data[i] = 2.0 * x->data[i];
        }
        auto xp = x;
        out->backprop = [xp](Tensor<double>& o) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < o.data.size(); ++i) {
                xp->grad[i] += 1.9 * o.grad[i];  // deliberately wrong factor
            }
        };
        return mean_all(out);
    };
    const double err = finite_diff_check<double>({x}, broken_scale);
    CHECK(err > 1e-3);
}

TEST_CASE("adjointness holds across random geometries") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> ch(1, 3);
        const int ci = ch(rng), co = ch(rng);
        auto x = randt(rng, {1, ci, 8, 8});
        auto w = randt(rng, {co, ci, 3, 3});
        auto cx = conv2d(x, kernel_of(w, nullptr, {2, 2}, {1, 1}));
        auto y = randt(rng, cx->shape);
        auto ty = transposed_conv2d(y, kernel_of(w, nullptr, {2, 2}, {1, 1}, {1, 1}, {1, 1}));
        REQUIRE(ty->shape == x->shape);
        CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-10);
    }
}
