#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relex/errors.hpp"
#include "relex/rng.hpp"
#include "relex/tensor.hpp"

namespace relex {

// 1 = real token, 0 = PAD. An empty mask means every position is real.
using PadMask = std::vector<std::uint8_t>;

inline std::size_t unmasked_count(const PadMask& mask, std::size_t len) {
    if (mask.empty()) return len;
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m ? 1 : 0;
    return n;
}

// Additive attention bias: 0 for real keys, a large negative number for PAD
// keys so their post-softmax weight underflows to exactly zero.
inline Tensor key_mask_bias(const PadMask& mask) {
    Tensor bias = Tensor::zeros({mask.size()});
    double* v = bias.data();
    for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 0.0 : -1e30;
    return bias;
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

enum class Init { xavier, zeros, ones };

// Owns every trainable tensor of a model in creation order. The order is the
// contract for optimizer state and checkpoints.
class ParamStore {
public:
    Tensor create(const std::string& name, Shape shape, Init init, Rng& rng) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        Tensor t;
        switch (init) {
            case Init::zeros:
                t = Tensor::zeros(shape, true);
                break;
            case Init::ones:
                t = Tensor::full(shape, 1.0, true);
                break;
            case Init::xavier: {
                double fan_in = static_cast<double>(shape.size() >= 2 ? shape[0] : shape.back());
                double fan_out = static_cast<double>(shape.back());
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                t = Tensor::uniform(shape, -limit, limit, rng, true);
                break;
            }
        }
        index_[name] = named_.size();
        named_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, Tensor>>& named() const { return named_; }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(named_.size());
        for (const auto& [_, t] : named_) out.push_back(t);
        return out;
    }

    Tensor find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return named_[it->second].second;
    }

    void zero_grads() {
        for (auto& [_, t] : named_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor>> named_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

struct EmbeddingTable {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    Tensor weights;  // (vocab_size, dim); row 0 is PAD
};

inline EmbeddingTable make_embedding(ParamStore& store, const std::string& name,
                                     std::size_t vocab, std::size_t dim, Rng& rng) {
    return {vocab, dim, store.create(name, {vocab, dim}, Init::xavier, rng)};
}

inline Tensor embed(const std::vector<int>& token_ids, const EmbeddingTable& table) {
    return gather_rows(table.weights, token_ids);
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

// Gate weights act on [x_t; h_{t-1}], so every matrix is
// (input + hidden, hidden). Forget bias starts at 1.
struct LstmParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Tensor w_i, b_i, w_f, b_f, w_o, b_o, w_c, b_c;
};

inline LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input,
                            std::size_t hidden, Rng& rng) {
    LstmParams p;
    p.input_dim = input;
    p.hidden_dim = hidden;
    const Shape w{input + hidden, hidden};
    p.w_i = store.create(prefix + ".w_i", w, Init::xavier, rng);
    p.b_i = store.create(prefix + ".b_i", {hidden}, Init::zeros, rng);
    p.w_f = store.create(prefix + ".w_f", w, Init::xavier, rng);
    p.b_f = store.create(prefix + ".b_f", {hidden}, Init::ones, rng);
    p.w_o = store.create(prefix + ".w_o", w, Init::xavier, rng);
    p.b_o = store.create(prefix + ".b_o", {hidden}, Init::zeros, rng);
    p.w_c = store.create(prefix + ".w_c", w, Init::xavier, rng);
    p.b_c = store.create(prefix + ".b_c", {hidden}, Init::zeros, rng);
    return p;
}

struct LstmState {
    Tensor h, c;  // each (1, hidden)
};

inline LstmState lstm_cell(const Tensor& x_row, const LstmState& prev, const LstmParams& p) {
    Tensor z = concat({x_row, prev.h}, 1);
    Tensor i = sigmoid(add(matmul(z, p.w_i), p.b_i));
    Tensor f = sigmoid(add(matmul(z, p.w_f), p.b_f));
    Tensor o = sigmoid(add(matmul(z, p.w_o), p.b_o));
    Tensor g = tanh(add(matmul(z, p.w_c), p.b_c));
    Tensor c = add(mul(f, prev.c), mul(i, g));
    Tensor h = mul(o, tanh(c));
    return {h, c};
}

// Left-to-right recurrence over the rows of x; output row t depends only on
// x[0..t].
inline Tensor lstm_layer(const Tensor& x, const LstmParams& p, Tensor h0 = Tensor(),
                         Tensor c0 = Tensor()) {
    if (x.shape().size() != 2 || x.shape()[1] != p.input_dim)
        throw DimensionError("lstm_layer: expected (len, " + std::to_string(p.input_dim) +
                             "), got " + shape_str(x.shape()));
    const std::size_t len = x.shape()[0];
    LstmState state{h0.defined() ? h0 : Tensor::zeros({1, p.hidden_dim}),
                    c0.defined() ? c0 : Tensor::zeros({1, p.hidden_dim})};
    std::vector<Tensor> outputs;
    outputs.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
        state = lstm_cell(slice(x, 0, t, t + 1), state, p);
        outputs.push_back(state.h);
    }
    return concat(outputs, 0);
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

// Per-head width is ceil(model_dim / heads): the projections keep working
// when the model dim is not a multiple of the head count, which happens
// whenever the dim is an odd concat width. For divisible dims this is the
// usual model_dim / heads split.
struct MhaParams {
    std::size_t model_dim = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

inline MhaParams make_mha(ParamStore& store, const std::string& prefix, std::size_t dim,
                          std::size_t heads, Rng& rng) {
    if (heads == 0) throw ContractError("make_mha: head count must be positive");
    MhaParams p;
    p.model_dim = dim;
    p.heads = heads;
    p.head_dim = (dim + heads - 1) / heads;
    const std::size_t inner = p.heads * p.head_dim;
    p.wq = store.create(prefix + ".wq", {dim, inner}, Init::xavier, rng);
    p.bq = store.create(prefix + ".bq", {inner}, Init::zeros, rng);
    p.wk = store.create(prefix + ".wk", {dim, inner}, Init::xavier, rng);
    p.bk = store.create(prefix + ".bk", {inner}, Init::zeros, rng);
    p.wv = store.create(prefix + ".wv", {dim, inner}, Init::xavier, rng);
    p.bv = store.create(prefix + ".bv", {inner}, Init::zeros, rng);
    p.wo = store.create(prefix + ".wo", {inner, dim}, Init::xavier, rng);
    p.bo = store.create(prefix + ".bo", {dim}, Init::zeros, rng);
    return p;
}

// Captures attention weight rows for inspection in tests.
struct AttnTrace {
    std::vector<Tensor> head_weights;  // one (l, l) tensor per head
};

inline Tensor multi_head_self_attention(const Tensor& x, const MhaParams& p,
                                        const PadMask& mask = {},
                                        AttnTrace* trace = nullptr) {
    if (x.shape().size() != 2 || x.shape()[1] != p.model_dim)
        throw DimensionError("multi_head_self_attention: expected (len, " +
                             std::to_string(p.model_dim) + "), got " + shape_str(x.shape()));
    const std::size_t len = x.shape()[0];
    if (!mask.empty() && mask.size() != len)
        throw DimensionError("multi_head_self_attention: mask length " +
                             std::to_string(mask.size()) + " vs sequence length " +
                             std::to_string(len));
    if (unmasked_count(mask, len) == 0)
        throw ContractError("multi_head_self_attention: all positions masked");

    Tensor q = add(matmul(x, p.wq), p.bq);
    Tensor k = add(matmul(x, p.wk), p.bk);
    Tensor v = add(matmul(x, p.wv), p.bv);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
    const bool has_pad = !mask.empty() && unmasked_count(mask, len) < len;
    Tensor bias = has_pad ? key_mask_bias(mask) : Tensor();

    std::vector<Tensor> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t lo = h * p.head_dim, hi = lo + p.head_dim;
        Tensor qh = slice(q, 1, lo, hi);
        Tensor kh = slice(k, 1, lo, hi);
        Tensor vh = slice(v, 1, lo, hi);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
        if (has_pad) scores = add(scores, bias);
        Tensor weights = softmax(scores);
        if (trace) trace->head_weights.push_back(weights);
        heads.push_back(matmul(weights, vh));
    }
    return add(matmul(concat(heads, 1), p.wo), p.bo);
}

// ---------------------------------------------------------------------------
// Transformer encoder block
// ---------------------------------------------------------------------------

struct EncoderLayerParams {
    MhaParams attn;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct EncoderParams {
    std::size_t model_dim = 0;
    std::size_t heads = 0;
    double ln_eps = 1e-10;
    std::vector<EncoderLayerParams> layers;
};

inline EncoderParams make_encoder(ParamStore& store, const std::string& prefix,
                                  std::size_t dim, std::size_t heads, std::size_t layers,
                                  Rng& rng, double ln_eps = 1e-10) {
    EncoderParams p;
    p.model_dim = dim;
    p.heads = heads;
    p.ln_eps = ln_eps;
    const std::size_t ffn = 4 * dim;
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string lp = prefix + ".l" + std::to_string(i);
        EncoderLayerParams layer;
        layer.attn = make_mha(store, lp + ".attn", dim, heads, rng);
        layer.ff_w1 = store.create(lp + ".ff_w1", {dim, ffn}, Init::xavier, rng);
        layer.ff_b1 = store.create(lp + ".ff_b1", {ffn}, Init::zeros, rng);
        layer.ff_w2 = store.create(lp + ".ff_w2", {ffn, dim}, Init::xavier, rng);
        layer.ff_b2 = store.create(lp + ".ff_b2", {dim}, Init::zeros, rng);
        layer.ln1_g = store.create(lp + ".ln1_g", {dim}, Init::ones, rng);
        layer.ln1_b = store.create(lp + ".ln1_b", {dim}, Init::zeros, rng);
        layer.ln2_g = store.create(lp + ".ln2_g", {dim}, Init::ones, rng);
        layer.ln2_b = store.create(lp + ".ln2_b", {dim}, Init::zeros, rng);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

// Inverted dropout. Inference mode and rate 0 both return the input tensor
// itself.
inline Tensor dropout_apply(const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ContractError("dropout_apply: rate must lie in [0, 1), got " +
                            std::to_string(rate));
    if (!training || rate == 0.0) return x;
    Tensor mask = Tensor::zeros(x.shape());
    double* mv = mask.data();
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.numel(); ++i)
        mv[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    return mul(x, mask);
}

struct DropoutCtx {
    double rate = 0.0;
    bool training = false;
    Rng* rng = nullptr;

    Tensor apply(const Tensor& x) const {
        if (!training || rate == 0.0 || rng == nullptr) return x;
        return dropout_apply(x, rate, training, *rng);
    }
};

// Post-norm Transformer encoder stack: self-attention, residual add & norm,
// feed-forward, residual add & norm, repeated per layer. Zero layers is the
// identity.
inline Tensor encoder_block(const Tensor& x, const EncoderParams& p, const PadMask& mask = {},
                            const DropoutCtx& drop = {}) {
    Tensor h = x;
    for (const auto& layer : p.layers) {
        Tensor a = multi_head_self_attention(h, layer.attn, mask);
        h = layer_norm(add(h, drop.apply(a)), layer.ln1_g, layer.ln1_b, p.ln_eps);
        Tensor f = add(matmul(relu(add(matmul(h, layer.ff_w1), layer.ff_b1)), layer.ff_w2),
                       layer.ff_b2);
        h = layer_norm(add(h, drop.apply(f)), layer.ln2_g, layer.ln2_b, p.ln_eps);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Additive attention pooling
// ---------------------------------------------------------------------------

struct AttentionPoolParams {
    std::size_t in_dim = 0;
    std::size_t attn_dim = 0;
    std::size_t out_dim = 0;
    Tensor score_w, score_b, score_v;  // score_i = v^T tanh(W L_i + b)
    Tensor proj_w, proj_b;             // row projection to out_dim
};

inline AttentionPoolParams make_attention_pool(ParamStore& store, const std::string& prefix,
                                               std::size_t in_dim, std::size_t attn_dim,
                                               std::size_t out_dim, Rng& rng) {
    AttentionPoolParams p;
    p.in_dim = in_dim;
    p.attn_dim = attn_dim;
    p.out_dim = out_dim;
    p.score_w = store.create(prefix + ".score_w", {in_dim, attn_dim}, Init::xavier, rng);
    p.score_b = store.create(prefix + ".score_b", {attn_dim}, Init::zeros, rng);
    p.score_v = store.create(prefix + ".score_v", {attn_dim, 1}, Init::xavier, rng);
    p.proj_w = store.create(prefix + ".proj_w", {in_dim, out_dim}, Init::xavier, rng);
    p.proj_b = store.create(prefix + ".proj_b", {out_dim}, Init::zeros, rng);
    return p;
}

struct PoolTrace {
    Tensor weights;  // (1, l) softmax weights over positions
};

// Pools rows of L into a single vector: softmax over additive scores of the
// unmasked positions, then a weighted sum of the projected rows.
inline Tensor attention_pool(const Tensor& L, const AttentionPoolParams& p,
                             const PadMask& mask = {}, PoolTrace* trace = nullptr) {
    if (L.shape().size() != 2 || L.shape()[1] != p.in_dim)
        throw DimensionError("attention_pool: expected (len, " + std::to_string(p.in_dim) +
                             "), got " + shape_str(L.shape()));
    const std::size_t len = L.shape()[0];
    if (unmasked_count(mask, len) == 0)
        throw ContractError("attention_pool: all positions masked");
    Tensor scores = matmul(tanh(add(matmul(L, p.score_w), p.score_b)), p.score_v);
    Tensor row = transpose(scores);  // (1, len)
    if (!mask.empty() && unmasked_count(mask, len) < len) row = add(row, key_mask_bias(mask));
    Tensor weights = softmax(row);
    if (trace) trace->weights = weights;
    Tensor projected = add(matmul(L, p.proj_w), p.proj_b);
    return reshape(matmul(weights, projected), {p.out_dim});
}

}  // namespace relex
