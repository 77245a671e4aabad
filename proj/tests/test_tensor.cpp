#include <gtest/gtest.h>

#include <cmath>

#include "adxr/grad_check.hpp"
#include "adxr/nn.hpp"
#include "adxr/tensor.hpp"

using namespace adxr;

namespace {

// Values quantized to float so the same Rng stream yields bit-identical
// tensors at both precisions (the f32 sweep probes a double twin).
template <typename S>
Tensor<S> rand_t(Shape shape, Rng& rng, double sd = 1.0) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<S>(static_cast<float>(sd * rng.normal()));
    return t;
}

}  // namespace

TEST(Tensor, BasicInvariants) {
    auto t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.ndim(), 2u);
    EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
    EXPECT_THROW(Tensor<float>::from({2, 2}, {1, 2, 3}), ShapeError);
    auto r = t.reshape({3, 2});
    EXPECT_TRUE(r.same_storage(t));
    EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(Backward, SumOfSquares) {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    auto loss = sum_all(square(x));
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = Tensor<double>::from({2}, {1, 2});
    x.set_requires_grad(true);
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    auto y = square(x);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, NoGradWithoutRequires) {
    auto x = Tensor<double>::from({2}, {1, 2});
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    auto loss = sum_all(square(x));
    EXPECT_FALSE(loss.requires_grad());
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, TwoLayerCompositionMatchesFiniteDifferences) {
    Rng rng(7);
    auto w1 = rand_t<double>({3, 4}, rng, 0.5);
    auto w2 = rand_t<double>({4, 1}, rng, 0.5);
    auto f = [&](const Tensor<double>& x) {
        return sum_all(tanh_t(matmul(silu(matmul(x, w1)), w2)));
    };
    auto x = rand_t<double>({2, 3}, rng);
    EXPECT_LT(grad_check<double>(f, x), 1e-6);
}

TEST(Backward, IndependentSubgraphsGetIndependentGradients) {
    Rng rng(11);
    auto a = rand_t<double>({3}, rng);
    auto b = rand_t<double>({3}, rng);

    std::vector<double> ga_joint, gb_joint, ga_solo, gb_solo;
    {
        auto a1 = a.clone().set_requires_grad(true);
        auto b1 = b.clone().set_requires_grad(true);
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        auto loss = add(sum_all(square(a1)), sum_all(silu(b1)));
        tape.backward(loss);
        ga_joint = a1.grad();
        gb_joint = b1.grad();
    }
    {
        auto a1 = a.clone().set_requires_grad(true);
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        tape.backward(sum_all(square(a1)));
        ga_solo = a1.grad();
    }
    {
        auto b1 = b.clone().set_requires_grad(true);
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        tape.backward(sum_all(silu(b1)));
        gb_solo = b1.grad();
    }
    for (int i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(ga_joint[i], ga_solo[i]);
        EXPECT_DOUBLE_EQ(gb_joint[i], gb_solo[i]);
    }
}

TEST(Conv2d, AllOnesSumsToNine) {
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, w, 1, 0);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_FLOAT_EQ(y.data()[0], 9.0f);
}

TEST(Conv2d, IdentityKernelWithPadding) {
    Rng rng(3);
    auto x = rand_t<float>({2, 1, 5, 5}, rng);
    auto w = Tensor<float>::zeros({1, 1, 3, 3});
    w.data()[4] = 1.0f;  // center tap
    auto y = conv2d(x, w, 1, 1);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, ShapeArithmetic) {
    Rng rng(4);
    auto x = rand_t<float>({2, 3, 8, 8}, rng);
    auto w = rand_t<float>({4, 3, 3, 3}, rng);
    auto y = conv2d(x, w, 1, 0);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 6, 6}));
}

TEST(Conv2d, Errors) {
    Rng rng(5);
    auto x = rand_t<float>({1, 3, 8, 8}, rng);
    auto w_bad = rand_t<float>({4, 2, 3, 3}, rng);
    EXPECT_THROW(conv2d(x, w_bad, 1, 0), ShapeError);
    auto w_big = rand_t<float>({1, 3, 9, 9}, rng);
    EXPECT_THROW(conv2d(x, w_big, 1, 0), ShapeError);
}

TEST(GroupNorm, ConstantInputCollapsesToZero) {
    auto x = Tensor<float>::full({2, 4, 3, 3}, 5.0f);
    auto gain = Tensor<float>::full({4}, 1.0f);
    auto bias = Tensor<float>::zeros({4});
    auto y = group_norm(x, 2, gain, bias, 1e-5f);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], 0.0f, 1e-6f);
}

TEST(GroupNorm, StandardizedInputIsNearIdentity) {
    // One group of two channels, values with exact zero mean and unit variance.
    auto x = Tensor<float>::from({1, 2, 1, 2}, {-1, 1, -1, 1});
    auto gain = Tensor<float>::full({2}, 1.0f);
    auto bias = Tensor<float>::zeros({2});
    auto y = group_norm(x, 1, gain, bias, 1e-6f);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-4f);
}

TEST(GroupNorm, ZeroGainLeavesBias) {
    Rng rng(6);
    auto x = rand_t<float>({2, 4, 2, 2}, rng);
    auto gain = Tensor<float>::zeros({4});
    auto bias = Tensor<float>::from({4}, {1, 2, 3, 4});
    auto y = group_norm(x, 4, gain, bias, 1e-5f);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t e = 0; e < 4; ++e)
                EXPECT_FLOAT_EQ(y.data()[(n * 4 + c) * 4 + e], bias.data()[c]);
}

TEST(GroupNorm, IndivisibleChannelsRejected) {
    auto x = Tensor<float>::zeros({1, 6, 2, 2});
    auto gain = Tensor<float>::full({6}, 1.0f);
    auto bias = Tensor<float>::zeros({6});
    EXPECT_THROW(group_norm(x, 4, gain, bias, 1e-5f), ShapeError);
}

TEST(CrossAttention, SingleContextIsProjectedContext) {
    Rng rng(8);
    auto eye = [](std::size_t d) {
        auto t = Tensor<float>::zeros({d, d});
        for (std::size_t i = 0; i < d; ++i) t.data()[i * d + i] = 1.0f;
        return t;
    };
    auto q = rand_t<float>({4, 6}, rng);
    auto ctx = rand_t<float>({1, 6}, rng);
    auto y = cross_attention(q, ctx, eye(6), eye(6), eye(6), eye(6));
    ASSERT_EQ(y.shape(), (Shape{4, 6}));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y.data()[i * 6 + j], ctx.data()[j], 1e-5f);
}

TEST(CrossAttention, IdenticalContextRowsIgnoreQuery) {
    Rng rng(9);
    auto ctx_row = rand_t<float>({1, 5}, rng);
    auto ctx = Tensor<float>::zeros({7, 5});
    for (std::size_t i = 0; i < 7; ++i)
        std::copy(ctx_row.data(), ctx_row.data() + 5, ctx.data() + i * 5);
    auto wq = rand_t<float>({4, 3}, rng);
    auto wk = rand_t<float>({5, 3}, rng);
    auto wv = rand_t<float>({5, 3}, rng);
    auto wo = rand_t<float>({3, 4}, rng);
    auto q1 = rand_t<float>({2, 4}, rng);
    auto q2 = rand_t<float>({2, 4}, rng);
    auto y1 = cross_attention(q1, ctx, wq, wk, wv, wo);
    auto y2 = cross_attention(q2, ctx, wq, wk, wv, wo);
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1.data()[i], y2.data()[i], 1e-5f);
}

TEST(CrossAttention, ShapeContractAndEmptyContext) {
    Rng rng(10);
    auto q = rand_t<float>({4, 8}, rng);
    auto ctx = rand_t<float>({7, 8}, rng);
    auto wq = rand_t<float>({8, 8}, rng);
    auto wk = rand_t<float>({8, 8}, rng);
    auto wv = rand_t<float>({8, 8}, rng);
    auto wo = rand_t<float>({8, 8}, rng);
    EXPECT_EQ(cross_attention(q, ctx, wq, wk, wv, wo).shape(), (Shape{4, 8}));
    EXPECT_THROW(cross_attention(q, Tensor<float>{}, wq, wk, wv, wo), ShapeError);
}

TEST(CrossAttention, RowsOfAttentionSumToOne) {
    Rng rng(12);
    auto s = rand_t<double>({5, 9}, rng);
    auto a = softmax_rows(s);
    for (std::size_t i = 0; i < 5; ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < 9; ++j) acc += a.data()[i * 9 + j];
        EXPECT_NEAR(acc, 1.0, 1e-12);
    }
}

TEST(GradCheck, SiluAtHalf) {
    auto f = [](const Tensor<double>& x) { return sum_all(silu(x)); };
    auto x = Tensor<double>::from({1}, {0.5});
    EXPECT_LT(grad_check<double>(f, x), 1e-6);
}

TEST(GradCheck, Conv2dRandom) {
    Rng rng(13);
    auto w = rand_t<double>({3, 2, 3, 3}, rng, 0.5);
    auto f = [&](const Tensor<double>& x) { return mean_all(square(conv2d(x, w, 1, 1))); };
    auto x = rand_t<double>({1, 2, 5, 5}, rng);
    EXPECT_LT(grad_check<double>(f, x), 1e-5);
    auto fw = [&](const Tensor<double>& ww) { return mean_all(square(conv2d(x, ww, 2, 1))); };
    EXPECT_LT(grad_check<double>(fw, w), 1e-5);
}

TEST(GradCheck, CrossAttentionRandom) {
    Rng rng(14);
    auto ctx = rand_t<double>({5, 4}, rng);
    auto wq = rand_t<double>({4, 4}, rng, 0.5);
    auto wk = rand_t<double>({4, 4}, rng, 0.5);
    auto wv = rand_t<double>({4, 4}, rng, 0.5);
    auto wo = rand_t<double>({4, 4}, rng, 0.5);
    auto f = [&](const Tensor<double>& q) {
        return sum_all(square(cross_attention(q, ctx, wq, wk, wv, wo)));
    };
    auto q = rand_t<double>({3, 4}, rng);
    EXPECT_LT(grad_check<double>(f, q), 1e-5);
    auto fk = [&](const Tensor<double>& w) {
        return sum_all(square(cross_attention(q, ctx, wq, w, wv, wo)));
    };
    EXPECT_LT(grad_check<double>(fk, wk), 1e-5);
}

// Weights bounded away from zero keep per-coordinate gradients O(1).
template <typename S>
Tensor<S> probe_w(Shape shape, Rng& rng) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.values())
        v = static_cast<S>(static_cast<float>((rng.bernoulli(0.5) ? 1.0 : -1.0) *
                                              rng.uniform(0.5, 1.5)));
    return t;
}

template <typename S>
struct PrimitiveCase {
    std::string name;
    std::function<Tensor<S>(const Tensor<S>&)> fn;
    Tensor<S> point;
};

// Every differentiable primitive on a tiny random input. Built from a fixed
// Rng stream, so the <float> and <double> case lists hold identical values.
template <typename S>
std::vector<PrimitiveCase<S>> build_primitive_cases() {
    Rng rng(100);
    using T = Tensor<S>;

    std::vector<PrimitiveCase<S>> out;
    auto push = [&out](std::string name, std::function<T(const T&)> fn, T point) {
        out.push_back({std::move(name), std::move(fn), std::move(point)});
    };
    std::vector<std::pair<std::string, std::pair<std::function<T(const T&)>, T>>> cases;
    auto wsum = [](const T& y, const T& w) { return sum_all(mul(y, w)); };

    auto b = rand_t<S>({2, 3}, rng);
    auto w23 = probe_w<S>({2, 3}, rng);
    cases.push_back({"add", {[=](const T& x) { return wsum(add(x, b), w23); }, rand_t<S>({2, 3}, rng)}});
    cases.push_back({"sub", {[=](const T& x) { return wsum(sub(b, x), w23); }, rand_t<S>({2, 3}, rng)}});
    cases.push_back({"mul", {[=](const T& x) { return wsum(mul(x, b), w23); }, rand_t<S>({2, 3}, rng)}});
    auto w5 = probe_w<S>({5}, rng);
    cases.push_back({"scale", {[=](const T& x) { return wsum(scale(x, S(2.5)), w5); }, rand_t<S>({5}, rng)}});
    cases.push_back({"sigmoid", {[=](const T& x) { return wsum(sigmoid(x), w5); }, rand_t<S>({5}, rng)}});
    cases.push_back({"silu", {[=](const T& x) { return wsum(silu(x), w5); }, rand_t<S>({5}, rng, 0.4)}});
    cases.push_back({"tanh", {[=](const T& x) { return wsum(tanh_t(x), w5); }, rand_t<S>({5}, rng, 0.5)}});
    cases.push_back({"exp", {[=](const T& x) { return wsum(exp_t(x), w5); }, rand_t<S>({5}, rng, 0.5)}});
    cases.push_back({"square", {[=](const T& x) { return wsum(square(x), w5); }, rand_t<S>({5}, rng)}});
    cases.push_back({"mse", {[=](const T& x) { return mse_loss(x, b); }, rand_t<S>({2, 3}, rng)}});

    auto mw = rand_t<S>({3, 2}, rng, 0.6);
    auto w22 = probe_w<S>({2, 2}, rng);
    cases.push_back({"matmul_a", {[=](const T& x) { return wsum(matmul(x, mw), w22); }, rand_t<S>({2, 3}, rng)}});
    auto ma = rand_t<S>({2, 3}, rng);
    cases.push_back({"matmul_b", {[=](const T& x) { return wsum(matmul(ma, x), w22); }, rand_t<S>({3, 2}, rng)}});
    auto w32 = probe_w<S>({3, 2}, rng);
    cases.push_back({"transpose", {[=](const T& x) { return wsum(transpose(x), w32); }, rand_t<S>({2, 3}, rng)}});
    auto v3 = rand_t<S>({3}, rng);
    cases.push_back({"add_rowvec_x", {[=](const T& x) { return wsum(add_rowvec(x, v3), w23); }, rand_t<S>({2, 3}, rng)}});
    auto m23 = rand_t<S>({2, 3}, rng);
    auto w3 = probe_w<S>({3}, rng);
    cases.push_back({"add_rowvec_v", {[=](const T& x) {
                         return wsum(add_rowvec(m23, x), w23);
                     }, rand_t<S>({3}, rng)}});
    auto w22b = probe_w<S>({2, 2}, rng);
    cases.push_back({"slice_cols", {[=](const T& x) { return wsum(slice_cols(x, 1, 3), w22b); }, rand_t<S>({2, 4}, rng)}});
    auto w24 = probe_w<S>({2, 4}, rng);
    cases.push_back({"softmax", {[=](const T& x) { return wsum(softmax_rows(x), w24); }, rand_t<S>({2, 4}, rng)}});
    auto w33 = probe_w<S>({3, 3}, rng);
    cases.push_back({"softmax_causal", {[=](const T& x) { return wsum(softmax_rows(x, true), w33); }, rand_t<S>({3, 3}, rng)}});
    auto w2 = probe_w<S>({2}, rng);
    cases.push_back({"logsumexp", {[=](const T& x) { return wsum(row_logsumexp(x), w2); }, rand_t<S>({2, 4}, rng)}});
    cases.push_back({"diag", {[=](const T& x) { return wsum(diag_part(x), w3); }, rand_t<S>({3, 3}, rng)}});
    cases.push_back({"l2norm", {[=](const T& x) { return wsum(l2_normalize_rows(x), w23); }, rand_t<S>({2, 3}, rng)}});
    auto w13 = probe_w<S>({1, 3}, rng);
    cases.push_back({"mean_rows", {[=](const T& x) { return wsum(mean_rows(x), w13); }, rand_t<S>({3, 3}, rng)}});
    cases.push_back({"row", {[=](const T& x) { return wsum(row(x, 1), w13); }, rand_t<S>({3, 3}, rng)}});

    auto lg = rand_t<S>({4}, rng, 0.3);
    auto lb = rand_t<S>({4}, rng, 0.3);
    cases.push_back({"layer_norm_x", {[=](const T& x) {
                         return wsum(layer_norm(x, lg, lb, S(1e-5)), w24);
                     }, rand_t<S>({2, 4}, rng)}});
    auto lx = rand_t<S>({2, 4}, rng);
    auto w4 = probe_w<S>({4}, rng);
    cases.push_back({"layer_norm_g", {[=](const T& x) {
                         return wsum(layer_norm(lx, x, lb, S(1e-5)), w24);
                     }, rand_t<S>({4}, rng)}});

    auto gg = rand_t<S>({4}, rng, 0.3);
    auto gb2 = rand_t<S>({4}, rng, 0.3);
    auto wgn = probe_w<S>({1, 4, 1, 2}, rng);
    cases.push_back({"group_norm_x", {[=](const T& x) {
                         return wsum(group_norm(x, 2, gg, gb2, S(1e-5)), wgn);
                     }, rand_t<S>({1, 4, 1, 2}, rng)}});
    auto gx = rand_t<S>({1, 4, 1, 2}, rng);
    cases.push_back({"group_norm_g", {[=](const T& x) {
                         return wsum(group_norm(gx, 2, x, gb2, S(1e-5)), wgn);
                     }, rand_t<S>({4}, rng)}});

    auto cw = rand_t<S>({2, 2, 2, 2}, rng, 0.5);
    auto wcv = probe_w<S>({1, 2, 2, 2}, rng);
    cases.push_back({"conv_x", {[=](const T& x) { return wsum(conv2d(x, cw, 1, 0), wcv); }, rand_t<S>({1, 2, 3, 3}, rng)}});
    auto cx = rand_t<S>({1, 2, 3, 3}, rng);
    cases.push_back({"conv_w", {[=](const T& x) { return wsum(conv2d(cx, x, 1, 0), wcv); }, rand_t<S>({2, 2, 2, 2}, rng)}});
    auto wch = probe_w<S>({1, 2, 3, 3}, rng);
    cases.push_back({"chan_bias", {[=](const T& x) { return wsum(add_channel_bias(cx, x), wch); }, rand_t<S>({2}, rng)}});
    cases.push_back({"sample_chan_bias", {[=](const T& x) {
                         return wsum(add_sample_channel_bias(cx, x), wch);
                     }, rand_t<S>({1, 2}, rng)}});
    auto w12 = probe_w<S>({1, 2}, rng);
    cases.push_back({"spatial_mean", {[=](const T& x) { return wsum(spatial_mean(x), w12); }, rand_t<S>({1, 2, 2, 2}, rng)}});
    auto wup = probe_w<S>({1, 1, 4, 4}, rng);
    cases.push_back({"upsample", {[=](const T& x) { return wsum(upsample2x(x), wup); }, rand_t<S>({1, 1, 2, 2}, rng)}});
    auto other = rand_t<S>({1, 1, 2, 2}, rng);
    auto wcc = probe_w<S>({1, 3, 2, 2}, rng);
    cases.push_back({"concat_ch", {[=](const T& x) { return wsum(concat_channels(x, other), wcc); }, rand_t<S>({1, 2, 2, 2}, rng)}});
    auto wtk = probe_w<S>({4, 2}, rng);
    cases.push_back({"tokens", {[=](const T& x) { return wsum(sample_tokens(x, 1), wtk); }, rand_t<S>({2, 2, 2, 2}, rng)}});

    std::vector<int> ids = {0, 2, 1};
    auto wem = probe_w<S>({3, 3}, rng);
    cases.push_back({"embedding", {[=](const T& x) { return wsum(embedding(x, ids), wem); }, rand_t<S>({3, 3}, rng)}});
    std::vector<int> tg = {1, 0};
    cases.push_back({"ce_rows", {[=](const T& x) { return ce_rows(x, tg); }, rand_t<S>({2, 4}, rng)}});
    std::vector<S> bt = {1, 0, 1, 0, 1, 1};
    std::vector<S> bm = {1, 1, 0, 1, 1, 1};
    cases.push_back({"bce", {[=](const T& x) { return bce_logits_masked(x, bt, bm); }, rand_t<S>({2, 3}, rng)}});

    for (auto& [name, c] : cases) push(name, c.first, c.second);
    return out;
}

TEST(GradCheck, PrimitiveSweep64) {
    for (auto& c : build_primitive_cases<double>()) {
        const double err = grad_check<double>(c.fn, c.point);
        EXPECT_LT(err, 1e-6) << "primitive " << c.name << " rel err " << err;
    }
}

// 32-bit autodiff vs a double-precision central-difference oracle of the same
// function (identical values; see rand_t quantization above).
TEST(GradCheck, PrimitiveSweep32) {
    auto f32 = build_primitive_cases<float>();
    auto f64 = build_primitive_cases<double>();
    ASSERT_EQ(f32.size(), f64.size());
    for (std::size_t i = 0; i < f32.size(); ++i) {
        auto& cf = f32[i];
        auto& cd = f64[i];
        for (std::size_t j = 0; j < cf.point.size(); ++j)
            ASSERT_EQ(static_cast<double>(cf.point.data()[j]), cd.point.data()[j]);
        auto ref = [&cd](const std::vector<double>& x) {
            std::copy(x.begin(), x.end(), cd.point.data());
            return cd.fn(cd.point).item();
        };
        const double err = grad_check_vs_ref<float>(cf.fn, ref, cf.point);
        EXPECT_LT(err, 1e-4) << "primitive " << cf.name << " rel err " << err;
    }
}

TEST(GradCheck, CompositeStackAndAttention) {
    Rng rng(21);
    auto q = rand_t<double>({4, 6}, rng);
    auto blkps = ParamStore<double>();
    SelfAttnLayer<double> attn(blkps, "attn", 6, 2, rng);
    auto f = [&](const Tensor<double>& x) { return sum_all(square(attn(x, true))); };
    EXPECT_LT(grad_check<double>(f, q), 1e-6);

    std::vector<Tensor<double>> rows = {rand_t<double>({3}, rng), rand_t<double>({3}, rng)};
    auto sw = rand_t<double>({2, 3}, rng);
    auto fs = [&](const Tensor<double>& x) {
        std::vector<Tensor<double>> rs = {x, rows[1]};
        return sum_all(mul(l2_normalize_rows(stack_rows(rs)), sw));
    };
    EXPECT_LT(grad_check<double>(fs, rows[0]), 1e-6);
}

TEST(GradCheck, NonFiniteProbeRaises) {
    auto f = [](const Tensor<double>& x) {
        auto y = exp_t(scale(x, 1000.0));
        return sum_all(y);
    };
    auto x = Tensor<double>::from({1}, {1.0});
    EXPECT_THROW(grad_check<double>(f, x), NumericError);
}
