#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "relex/encoder_lstm.hpp"
#include "support/reference_cells.hpp"

using namespace relex;
using Catch::Approx;

namespace {

refcell::GateWeights export_gate_weights(const EncoderLstmParams& p) {
    refcell::GateWeights w;
    w.input = p.input_dim;
    w.hidden = p.hidden_dim;
    w.w_i = p.w_i.value();
    w.b_i = p.b_i.value();
    w.w_f = p.w_f.value();
    w.b_f = p.b_f.value();
    w.w_o = p.w_o.value();
    w.b_o = p.b_o.value();
    w.w_c = p.w_c.value();
    w.b_c = p.b_c.value();
    return w;
}

void zero_all(ParamStore& store) {
    for (auto& [name, t] : store.named()) {
        Tensor tt = t;
        std::fill(tt.data(), tt.data() + tt.numel(), 0.0);
    }
}

}  // namespace

TEST_CASE("encoder_lstm_step") {
    SECTION("zero weights halve the cell state and zero the candidate") {
        Rng rng(1);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 5, 3, 2, 0, rng);
        zero_all(store);
        EncoderLstmState state{Tensor::uniform({4, 3}, -1, 1, rng),
                               Tensor::uniform({4, 3}, -1, 1, rng)};
        Tensor z = Tensor::uniform({4, 5}, -1, 1, rng);
        EncoderLstmState next = encoder_lstm_step(z, state, p);
        // I = F = O = 0.5 and the candidate is 0 everywhere.
        for (std::size_t i = 0; i < 12; ++i) {
            REQUIRE(next.c.value()[i] == Approx(0.5 * state.c.value()[i]).margin(1e-15));
            REQUIRE(next.h.value()[i] ==
                    Approx(0.5 * std::tanh(0.5 * state.c.value()[i])).margin(1e-15));
        }
    }
    SECTION("with zero encoder layers the step is a per-token plain LSTM") {
        for (int draw = 0; draw < 20; ++draw) {
            Rng rng(100 + draw);
            ParamStore store;
            EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 6, 2, 0, rng);
            refcell::GateWeights w = export_gate_weights(p);
            const std::size_t len = 1 + draw % 5;
            Tensor z = Tensor::uniform({len, 4}, -2, 2, rng);
            EncoderLstmState state{Tensor::uniform({len, 6}, -1, 1, rng),
                                   Tensor::uniform({len, 6}, -1, 1, rng)};
            EncoderLstmState next = encoder_lstm_step(z, state, p);
            for (std::size_t t = 0; t < len; ++t) {
                std::vector<double> x(z.value().begin() + t * 4, z.value().begin() + (t + 1) * 4);
                std::vector<double> h(state.h.value().begin() + t * 6,
                                      state.h.value().begin() + (t + 1) * 6);
                std::vector<double> c(state.c.value().begin() + t * 6,
                                      state.c.value().begin() + (t + 1) * 6);
                refcell::lstm_step(w, x, h, c);
                for (std::size_t j = 0; j < 6; ++j) {
                    REQUIRE(std::abs(next.h.value()[t * 6 + j] - h[j]) < 1e-12);
                    REQUIRE(std::abs(next.c.value()[t * 6 + j] - c[j]) < 1e-12);
                }
            }
        }
    }
    SECTION("outputs stay inside the tanh-sigmoid envelope") {
        Rng rng(7);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 5, 4, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 5}, -3, 3, rng);
        std::vector<Tensor> hs = encoder_lstm_unroll(z, 3, p);
        for (const auto& h : hs)
            for (double v : h.value()) REQUIRE(std::abs(v) < 1.0);
    }
    SECTION("shape mismatches are dimension errors") {
        Rng rng(8);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 5, 4, 2, 0, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);  // wrong width
        EncoderLstmState st = encoder_lstm_initial_state(3, 4);
        REQUIRE_THROWS_AS(encoder_lstm_step(z, st, p), DimensionError);
        Tensor z_ok = Tensor::uniform({3, 5}, -1, 1, rng);
        EncoderLstmState bad = encoder_lstm_initial_state(2, 4);
        REQUIRE_THROWS_AS(encoder_lstm_step(z_ok, bad, p), DimensionError);
    }
    SECTION("gradient check through one step, l=4, d_w=6") {
        Rng rng(9);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 3, 6, 2, 1, rng);
        Tensor z = Tensor::uniform({4, 3}, -1, 1, rng, true);
        Tensor readout = Tensor::uniform({6, 1}, -1, 1, rng);
        auto f = [&] {
            EncoderLstmState st = encoder_lstm_initial_state(4, 6);
            EncoderLstmState next = encoder_lstm_step(z, st, p);
            return sum(relex::tanh(matmul(next.h, readout)));
        };
        REQUIRE(grad_check(f, z) <= 1e-4);
        REQUIRE(grad_check(f, p.w_i) <= 1e-4);
        REQUIRE(grad_check(f, p.enc_c.layers[0].attn.wq) <= 1e-4);
        REQUIRE(grad_check(f, p.enc_f.layers[0].ff_w2) <= 1e-4);
    }
}

TEST_CASE("encoder_lstm_unroll") {
    SECTION("n = 1 equals a single step from the zero state") {
        Rng rng(10);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
        std::vector<Tensor> hs = encoder_lstm_unroll(z, 1, p);
        EncoderLstmState once = encoder_lstm_step(z, encoder_lstm_initial_state(3, 5), p);
        REQUIRE(hs.size() == 1);
        REQUIRE(hs[0].value() == once.h.value());
    }
    SECTION("n = 0 is a contract error") {
        Rng rng(11);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 0, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
        REQUIRE_THROWS_AS(encoder_lstm_unroll(z, 0, p), ContractError);
    }
    SECTION("slots differ pairwise under random weights") {
        for (int seed = 0; seed < 10; ++seed) {
            Rng rng(200 + seed);
            ParamStore store;
            EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 1, rng);
            Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
            std::vector<Tensor> hs = encoder_lstm_unroll(z, 3, p);
            for (std::size_t a = 0; a < 3; ++a)
                for (std::size_t b = a + 1; b < 3; ++b) {
                    double max_diff = 0;
                    for (std::size_t i = 0; i < hs[a].numel(); ++i)
                        max_diff = std::max(max_diff,
                                            std::abs(hs[a].value()[i] - hs[b].value()[i]));
                    REQUIRE(max_diff > 1e-8);
                }
        }
    }
    SECTION("zero parameters give identically zero outputs at every slot") {
        Rng rng(12);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 0, rng);
        zero_all(store);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
        for (const auto& h : encoder_lstm_unroll(z, 3, p))
            for (double v : h.value()) REQUIRE(v == 0.0);
    }
    SECTION("stacked output has shape (n, l, d_w)") {
        Rng rng(13);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
        Tensor h = stack0(encoder_lstm_unroll(z, 2, p));
        REQUIRE(h.shape() == Shape{2, 3, 5});
    }
    SECTION("same seed, same inputs, bitwise-identical outputs") {
        auto run = [] {
            Rng rng(404);
            ParamStore store;
            EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 1, rng);
            Tensor z = Tensor::uniform({3, 4}, -1, 1, rng);
            return encoder_lstm_unroll(z, 3, p);
        };
        std::vector<Tensor> a = run(), b = run();
        for (std::size_t t = 0; t < 3; ++t) REQUIRE(a[t].value() == b[t].value());
    }
    SECTION("gradient reaches all four gate encoders") {
        Rng rng(14);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 5, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng, true);
        store.zero_grads();
        std::vector<Tensor> hs = encoder_lstm_unroll(z, 2, p);
        backward(sum(hs.back()));
        auto has_grad_signal = [](const EncoderParams& enc) {
            double peak = 0;
            for (const auto& layer : enc.layers)
                for (const Tensor& t :
                     {layer.attn.wq, layer.attn.wk, layer.attn.wv, layer.attn.wo, layer.ff_w1,
                      layer.ff_w2, layer.ln1_g, layer.ln2_g})
                    for (double g : t.grad()) peak = std::max(peak, std::abs(g));
            return peak > 1e-12;
        };
        REQUIRE(has_grad_signal(p.enc_i));
        REQUIRE(has_grad_signal(p.enc_f));
        REQUIRE(has_grad_signal(p.enc_o));
        REQUIRE(has_grad_signal(p.enc_c));
    }
    SECTION("gradient check through a two-step unroll") {
        Rng rng(15);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 3, 4, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 3}, -1, 1, rng, true);
        Tensor readout = Tensor::uniform({4, 1}, -1, 1, rng);
        auto f = [&] {
            std::vector<Tensor> hs = encoder_lstm_unroll(z, 2, p);
            return sum(relex::tanh(matmul(hs.back(), readout)));
        };
        REQUIRE(grad_check(f, z) <= 1e-4);
        REQUIRE(grad_check(f, p.w_f) <= 1e-4);
        REQUIRE(grad_check(f, p.enc_i.layers[0].attn.wv) <= 1e-4);
    }
}
