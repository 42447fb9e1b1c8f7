#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "relex/errors.hpp"
#include "relex/nn.hpp"
#include "relex/tensor.hpp"

namespace relex {

// Recurrent cell whose four LSTM gates each run their own Transformer-style
// encoder over the full token sequence before the gate projection. The four
// encoders share structure but never parameters. With all encoders at zero
// layers the cell degenerates to a per-token LSTM over [Z; H_{t-1}], which
// isolates exactly what the in-gate encoders add.
struct EncoderLstmParams {
    std::size_t input_dim = 0;   // width of Z
    std::size_t hidden_dim = 0;  // width of H and C
    EncoderParams enc_i, enc_f, enc_o, enc_c;
    Tensor w_i, b_i, w_f, b_f, w_o, b_o, w_c, b_c;  // (input+hidden, hidden)
};

inline EncoderLstmParams make_encoder_lstm(ParamStore& store, const std::string& prefix,
                                           std::size_t input_dim, std::size_t hidden_dim,
                                           std::size_t heads, std::size_t encoder_layers,
                                           Rng& rng, double ln_eps = 1e-10) {
    EncoderLstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    const std::size_t x_dim = input_dim + hidden_dim;
    p.enc_i = make_encoder(store, prefix + ".enc_i", x_dim, heads, encoder_layers, rng, ln_eps);
    p.enc_f = make_encoder(store, prefix + ".enc_f", x_dim, heads, encoder_layers, rng, ln_eps);
    p.enc_o = make_encoder(store, prefix + ".enc_o", x_dim, heads, encoder_layers, rng, ln_eps);
    p.enc_c = make_encoder(store, prefix + ".enc_c", x_dim, heads, encoder_layers, rng, ln_eps);
    const Shape w{x_dim, hidden_dim};
    p.w_i = store.create(prefix + ".w_i", w, Init::xavier, rng);
    p.b_i = store.create(prefix + ".b_i", {hidden_dim}, Init::zeros, rng);
    p.w_f = store.create(prefix + ".w_f", w, Init::xavier, rng);
    p.b_f = store.create(prefix + ".b_f", {hidden_dim}, Init::ones, rng);
    p.w_o = store.create(prefix + ".w_o", w, Init::xavier, rng);
    p.b_o = store.create(prefix + ".b_o", {hidden_dim}, Init::zeros, rng);
    p.w_c = store.create(prefix + ".w_c", w, Init::xavier, rng);
    p.b_c = store.create(prefix + ".b_c", {hidden_dim}, Init::zeros, rng);
    return p;
}

struct EncoderLstmState {
    Tensor h;  // (l, hidden)
    Tensor c;  // (l, hidden)
};

inline EncoderLstmState encoder_lstm_initial_state(std::size_t len, std::size_t hidden) {
    return {Tensor::zeros({len, hidden}), Tensor::zeros({len, hidden})};
}

// One recurrent step. Z stays the same across steps; only the state evolves.
inline EncoderLstmState encoder_lstm_step(const Tensor& z, const EncoderLstmState& state,
                                          const EncoderLstmParams& p, const PadMask& mask = {},
                                          const DropoutCtx& drop = {}) {
    if (z.shape().size() != 2 || z.shape()[1] != p.input_dim)
        throw DimensionError("encoder_lstm_step: expected Z of shape (len, " +
                             std::to_string(p.input_dim) + "), got " + shape_str(z.shape()));
    if (state.h.shape() != Shape{z.shape()[0], p.hidden_dim})
        throw DimensionError("encoder_lstm_step: state shape " + shape_str(state.h.shape()) +
                             " does not match (len, hidden) = (" +
                             std::to_string(z.shape()[0]) + ", " +
                             std::to_string(p.hidden_dim) + ")");
    Tensor x = concat({z, state.h}, 1);
    Tensor gate_i = sigmoid(add(matmul(encoder_block(x, p.enc_i, mask, drop), p.w_i), p.b_i));
    Tensor gate_f = sigmoid(add(matmul(encoder_block(x, p.enc_f, mask, drop), p.w_f), p.b_f));
    Tensor gate_o = sigmoid(add(matmul(encoder_block(x, p.enc_o, mask, drop), p.w_o), p.b_o));
    Tensor cand = tanh(add(matmul(encoder_block(x, p.enc_c, mask, drop), p.w_c), p.b_c));
    Tensor c = add(mul(gate_i, cand), mul(state.c, gate_f));
    Tensor h = mul(gate_o, tanh(c));
    return {h, c};
}

// n recurrent steps from the zero state, all over the same Z. Returns
// H_1..H_n, each (len, hidden).
inline std::vector<Tensor> encoder_lstm_unroll(const Tensor& z, std::size_t n,
                                               const EncoderLstmParams& p,
                                               const PadMask& mask = {},
                                               const DropoutCtx& drop = {}) {
    if (n == 0) throw ContractError("encoder_lstm_unroll: n must be positive");
    EncoderLstmState state = encoder_lstm_initial_state(z.shape()[0], p.hidden_dim);
    std::vector<Tensor> outputs;
    outputs.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        state = encoder_lstm_step(z, state, p, mask, drop);
        outputs.push_back(state.h);
    }
    return outputs;
}

}  // namespace relex
