#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "protomargin/autodiff.hpp"
#include "protomargin/rng.hpp"

// Embedding backbones: the four-block convolutional encoder used for images
// and a small MLP for vector inputs. Both share one parameter-store layout so
// training, checkpointing and the gradient checker treat them uniformly.

namespace protomargin {

struct Conv4Config {
    int blocks = 4;
    int filters = 64;
    int kernel = 3;
    int pool = 2;
    int in_h = 84, in_w = 84, in_c = 3;
    Padding padding = Padding::Same;

    void validate() const {
        if (blocks < 1 || filters < 1 || kernel < 1 || in_h < 1 || in_w < 1 || in_c < 1)
            throw std::invalid_argument("conv4: degenerate config");
        if (pool != 2) throw std::invalid_argument("conv4: only 2x2 pooling is supported");
        int h = in_h, w = in_w;
        for (int b = 0; b < blocks; ++b) {
            if (padding == Padding::Valid) {
                h -= kernel - 1;
                w -= kernel - 1;
            }
            h /= 2;
            w /= 2;
            if (h < 1 || w < 1)
                throw std::invalid_argument("conv4: spatial extent collapses below 1 after block " + std::to_string(b));
        }
    }

    // spatial size after all conv/pool stages
    std::pair<int, int> out_spatial() const {
        int h = in_h, w = in_w;
        for (int b = 0; b < blocks; ++b) {
            if (padding == Padding::Valid) {
                h -= kernel - 1;
                w -= kernel - 1;
            }
            h /= 2;
            w /= 2;
        }
        return {h, w};
    }

    int out_dim() const {
        auto [h, w] = out_spatial();
        return h * w * filters;
    }
};

struct MLPConfig {
    std::vector<int> widths;  // input D, hidden..., output d

    void validate() const {
        if (widths.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
        for (int w : widths)
            if (w < 1) throw std::invalid_argument("mlp: non-positive layer width");
        if (widths.back() < 2) throw std::invalid_argument("mlp: output width must be >= 2");
    }

    int out_dim() const { return widths.back(); }
};

using BackboneConfig = std::variant<MLPConfig, Conv4Config>;

inline int backbone_out_dim(const BackboneConfig& cfg) {
    return std::visit([](const auto& c) { return c.out_dim(); }, cfg);
}

template <typename T>
struct EmbeddingParams {
    BackboneConfig config;
    ParamStore<T> store;
    int embedding_dim = 0;

    template <typename U>
    EmbeddingParams<U> cast() const {
        return EmbeddingParams<U>{config, store.template cast<U>(), embedding_dim};
    }
};

namespace detail {

template <typename T>
void add_gaussian(ParamStore<T>& store, const std::string& name, Shape shape, double std_dev, Rng& rng) {
    Tensor<T> t(shape);
    T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(std_dev * rng.gaussian());
    store.add(name, std::move(t));
}

}  // namespace detail

/// Fan-in scaled Gaussian init (variance 2/fan_in) for weights; zero biases,
/// unit batchnorm gains. Deterministic in (config, seed).
template <typename T>
EmbeddingParams<T> init_params(const BackboneConfig& config, uint64_t seed) {
    std::visit([](const auto& c) { c.validate(); }, config);
    EmbeddingParams<T> params;
    params.config = config;
    params.embedding_dim = backbone_out_dim(config);
    Rng rng(derive_seed(seed, "init"));

    if (const auto* mlp = std::get_if<MLPConfig>(&config)) {
        for (size_t l = 0; l + 1 < mlp->widths.size(); ++l) {
            int in = mlp->widths[l], out = mlp->widths[l + 1];
            std::string base = "layer" + std::to_string(l);
            detail::add_gaussian(params.store, base + ".w", {in, out}, std::sqrt(2.0 / in), rng);
            params.store.add(base + ".b", Tensor<T>({out}));
        }
    } else {
        const auto& c = std::get<Conv4Config>(config);
        int cin = c.in_c;
        for (int b = 0; b < c.blocks; ++b) {
            std::string base = "block" + std::to_string(b);
            double fan_in = static_cast<double>(c.kernel) * c.kernel * cin;
            detail::add_gaussian(params.store, base + ".conv.w", {c.kernel, c.kernel, cin, c.filters},
                                 std::sqrt(2.0 / fan_in), rng);
            params.store.add(base + ".conv.b", Tensor<T>({c.filters}));
            params.store.add(base + ".bn.gamma", Tensor<T>({c.filters}, T(1)));
            params.store.add(base + ".bn.beta", Tensor<T>({c.filters}));
            cin = c.filters;
        }
    }
    return params;
}

template <typename T>
int64_t count_params(const EmbeddingParams<T>& params) {
    return params.store.total_params();
}

/// Encode a batch: conv blocks run conv -> batchnorm -> relu -> maxpool, the
/// MLP runs affine -> relu per hidden layer with a final affine. Returns
/// [B, embedding_dim]. With track_gradients off the graph is not retained.
template <typename T>
Value<T> forward(EmbeddingParams<T>& params, const Tensor<T>& batch, bool track_gradients) {
    auto p = [&](const std::string& name) {
        return track_gradients ? param(params.store, name) : constant(params.store.value(name));
    };

    if (const auto* mlp = std::get_if<MLPConfig>(&params.config)) {
        if (batch.rank() != 2 || batch.extent(1) != mlp->widths.front())
            throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape()) +
                                        " does not match mlp input width " + std::to_string(mlp->widths.front()));
        Value<T> h = constant(batch);
        size_t layers = mlp->widths.size() - 1;
        for (size_t l = 0; l < layers; ++l) {
            std::string base = "layer" + std::to_string(l);
            h = add(matmul(h, p(base + ".w")), p(base + ".b"));
            if (l + 1 < layers) h = relu(h);
        }
        return h;
    }

    const auto& c = std::get<Conv4Config>(params.config);
    if (batch.rank() != 4 || batch.extent(1) != c.in_h || batch.extent(2) != c.in_w ||
        batch.extent(3) != c.in_c)
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape()) + " does not match conv4 input " +
                                    std::to_string(c.in_h) + "x" + std::to_string(c.in_w) + "x" +
                                    std::to_string(c.in_c));
    if (batch.extent(0) < 2)
        throw std::invalid_argument("forward: batchnorm requires batch size >= 2, got " +
                                    std::to_string(batch.extent(0)));
    Value<T> h = constant(batch);
    for (int b = 0; b < c.blocks; ++b) {
        std::string base = "block" + std::to_string(b);
        h = conv2d(h, p(base + ".conv.w"), p(base + ".conv.b"), c.padding);
        h = batchnorm(h, p(base + ".bn.gamma"), p(base + ".bn.beta"));
        h = relu(h);
        h = maxpool2x2(h);
    }
    return flatten(h);
}

}  // namespace protomargin
