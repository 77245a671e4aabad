#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adxr/optim.hpp"
#include "adxr/tensor.hpp"

namespace adxr {

template <typename S>
struct Linear {
    Tensor<S> w, b;

    Linear() = default;
    // w_scale < 0 selects the fan-in default; 0 gives an exact zero init.
    Linear(ParamStore<S>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           double w_scale = -1.0) {
        const double sd = w_scale < 0 ? std::sqrt(2.0 / static_cast<double>(in)) : w_scale;
        w = ps.create(name + ".w", sd == 0.0 ? Tensor<S>::zeros({in, out})
                                             : Tensor<S>::randn({in, out}, rng, sd));
        b = ps.create(name + ".b", Tensor<S>::zeros({out}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return add_rowvec(matmul(x, w), b); }
};

template <typename S>
struct Conv {
    Tensor<S> w, b;
    std::size_t stride = 1, pad = 0;

    Conv() = default;
    Conv(ParamStore<S>& ps, const std::string& name, std::size_t in_c, std::size_t out_c,
         std::size_t k, std::size_t stride_, std::size_t pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        const double sd = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
        w = ps.create(name + ".w", Tensor<S>::randn({out_c, in_c, k, k}, rng, sd));
        b = ps.create(name + ".b", Tensor<S>::zeros({out_c}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return add_channel_bias(conv2d(x, w, stride, pad), b);
    }
};

template <typename S>
struct GroupNormLayer {
    Tensor<S> gain, bias;
    std::size_t groups = 1;

    GroupNormLayer() = default;
    GroupNormLayer(ParamStore<S>& ps, const std::string& name, std::size_t channels,
                   std::size_t groups_)
        : groups(groups_) {
        gain = ps.create(name + ".g", Tensor<S>::full({channels}, S(1)));
        bias = ps.create(name + ".b", Tensor<S>::zeros({channels}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return group_norm(x, groups, gain, bias, S(1e-5));
    }
};

template <typename S>
struct LayerNormLayer {
    Tensor<S> gain, bias;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore<S>& ps, const std::string& name, std::size_t dim) {
        gain = ps.create(name + ".g", Tensor<S>::full({dim}, S(1)));
        bias = ps.create(name + ".b", Tensor<S>::zeros({dim}));
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return layer_norm(x, gain, bias, S(1e-5));
    }
};

// Single-head cross-attention layer; the conditioning path of the denoisers.
// zero_out makes the output projection exactly zero at init, so the layer is
// an identity add until trained.
template <typename S>
struct CrossAttnLayer {
    Tensor<S> wq, wk, wv, wo;

    CrossAttnLayer() = default;
    CrossAttnLayer(ParamStore<S>& ps, const std::string& name, std::size_t dq, std::size_t dc,
                   std::size_t da, Rng& rng, bool zero_out = false) {
        const double sq = std::sqrt(1.0 / static_cast<double>(dq));
        const double sc = std::sqrt(1.0 / static_cast<double>(dc));
        const double sa = std::sqrt(1.0 / static_cast<double>(da));
        wq = ps.create(name + ".wq", Tensor<S>::randn({dq, da}, rng, sq));
        wk = ps.create(name + ".wk", Tensor<S>::randn({dc, da}, rng, sc));
        wv = ps.create(name + ".wv", Tensor<S>::randn({dc, da}, rng, sc));
        wo = ps.create(name + ".wo", zero_out ? Tensor<S>::zeros({da, dq})
                                              : Tensor<S>::randn({da, dq}, rng, sa));
    }

    Tensor<S> operator()(const Tensor<S>& query, const Tensor<S>& context) const {
        return cross_attention(query, context, wq, wk, wv, wo);
    }
};

// Multi-head self-attention over a token matrix [L,d].
template <typename S>
struct SelfAttnLayer {
    Tensor<S> wq, wk, wv, wo;
    std::size_t heads = 1;

    SelfAttnLayer() = default;
    SelfAttnLayer(ParamStore<S>& ps, const std::string& name, std::size_t d, std::size_t heads_,
                  Rng& rng)
        : heads(heads_) {
        check(d % heads_ == 0, "SelfAttnLayer: dim not divisible by heads");
        const double sd = std::sqrt(1.0 / static_cast<double>(d));
        wq = ps.create(name + ".wq", Tensor<S>::randn({d, d}, rng, sd));
        wk = ps.create(name + ".wk", Tensor<S>::randn({d, d}, rng, sd));
        wv = ps.create(name + ".wv", Tensor<S>::randn({d, d}, rng, sd));
        wo = ps.create(name + ".wo", Tensor<S>::randn({d, d}, rng, sd));
    }

    Tensor<S> operator()(const Tensor<S>& x, bool causal) const {
        const std::size_t d = x.dim(1), dh = d / heads;
        const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
        Tensor<S> q = matmul(x, wq);
        Tensor<S> k = matmul(x, wk);
        Tensor<S> v = matmul(x, wv);
        std::vector<Tensor<S>> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(q, h * dh, (h + 1) * dh);
            Tensor<S> kh = slice_cols(k, h * dh, (h + 1) * dh);
            Tensor<S> vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor<S> att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), causal);
            outs.push_back(matmul(att, vh));
        }
        return matmul(concat_cols(outs), wo);
    }
};

// Pre-norm transformer block: x += attn(ln(x)); x += mlp(ln(x)).
template <typename S>
struct TransformerBlock {
    LayerNormLayer<S> ln1, ln2;
    SelfAttnLayer<S> attn;
    Linear<S> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<S>& ps, const std::string& name, std::size_t d, std::size_t heads,
                     std::size_t hidden, Rng& rng)
        : ln1(ps, name + ".ln1", d),
          ln2(ps, name + ".ln2", d),
          attn(ps, name + ".attn", d, heads, rng),
          fc1(ps, name + ".fc1", d, hidden, rng),
          fc2(ps, name + ".fc2", hidden, d, rng) {}

    Tensor<S> operator()(const Tensor<S>& x, bool causal) const {
        Tensor<S> h = add(x, attn(ln1(x), causal));
        return add(h, fc2(silu(fc1(ln2(h)))));
    }
};

// Sinusoidal features for integer timesteps; constant w.r.t. the tape.
template <typename S>
Tensor<S> timestep_features(const std::vector<int>& t, std::size_t dim) {
    check(dim >= 2 && dim % 2 == 0, "timestep_features: dim must be even and >= 2");
    const std::size_t half = dim / 2;
    Tensor<S> out({t.size(), dim});
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) /
                         static_cast<double>(half > 1 ? half - 1 : 1));
            const double arg = static_cast<double>(t[i]) * freq;
            out.data()[i * dim + j] = static_cast<S>(std::sin(arg));
            out.data()[i * dim + half + j] = static_cast<S>(std::cos(arg));
        }
    }
    return out;
}

}  // namespace adxr
