#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relex/encoder_lstm.hpp"
#include "relex/model.hpp"
#include "relex/nn.hpp"
#include "relex/tensor.hpp"
#include "relex/train.hpp"

namespace relex {

struct BlockCheck {
    std::string name;
    double max_rel_err = 0.0;
    double seconds = 0.0;
    bool pass(double tolerance = 1e-4) const { return max_rel_err <= tolerance; }
};

namespace detail {

// Scalar readout that touches every output coordinate with fixed random
// weights, so the whole block is exercised.
inline Tensor weighted_readout(const Tensor& y, Rng& rng) {
    Tensor w = Tensor::uniform(y.shape(), -1.0, 1.0, rng);
    return sum(mul(y, w));
}

// A six-token, two-triple sentence over two entity and two relation types,
// matching the tiny shapes used for the end-to-end checks
// (l=8, d=8, d_w=8, n=2, n_t=5, n_d=5, n_r=3).
inline std::vector<AnnotatedSentence> tiny_corpus() {
    AnnotatedSentence s;
    s.tokens = {"u", "v", "w", "x", "y", "z"};
    s.entities = {{0, 1, "TA"}, {2, 4, "TB"}, {5, 6, "TA"}};
    s.relations = {{0, 1, "RA"}, {1, 2, "RB"}};
    return {s};
}

inline ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.l = 8;
    cfg.d = 8;
    cfg.d_w = 8;
    cfg.n = 2;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.context_layers = 1;
    cfg.dropout_ner = cfg.dropout_epe = cfg.dropout_rc = 0.0;
    return cfg;
}

struct TinyModel {
    Pipeline pipe;
    EncodedSample sample;
};

inline TinyModel tiny_model(std::uint64_t seed) {
    TinyModel tm{build_pipeline(tiny_corpus(), tiny_config(), seed), {}};
    tm.sample = encode_sample(tiny_corpus()[0], tm.pipe.catalog, tm.pipe.vocab, 8, 2);
    return tm;
}

// Max gradient error across every parameter of the store plus the listed
// extra leaves, each swept in full.
inline double check_all(const std::function<Tensor()>& f, const ParamStore& store,
                        const std::vector<Tensor>& extra = {}) {
    double worst = 0.0;
    for (const auto& [name, t] : store.named()) worst = std::max(worst, grad_check(f, t));
    for (const Tensor& t : extra) worst = std::max(worst, grad_check(f, t));
    return worst;
}

// Sampled variant for the larger end-to-end graphs: a handful of coordinates
// per tensor keeps the sweep inside the runtime budget while still touching
// every parameter tensor.
inline double check_all_sampled(const std::function<Tensor()>& f, const ParamStore& store,
                                std::size_t coords_per_tensor, Rng& rng) {
    double worst = 0.0;
    for (const auto& [name, t] : store.named())
        worst = std::max(worst, grad_check_sampled(f, t, 1e-5, coords_per_tensor, rng));
    return worst;
}

}  // namespace detail

// Runs the central-difference gradient suite over every named block and the
// end-to-end loss at tiny shapes. `corrupt_block`, when non-empty, inflates
// that block's reported error; it exists so the failure path of the detector
// itself can be exercised. `only_block` restricts the run to one block.
inline std::vector<BlockCheck> run_gradient_suite(std::uint64_t seed,
                                                  const std::string& corrupt_block = "",
                                                  const std::string& only_block = "") {
    std::vector<BlockCheck> checks;
    auto timed = [&](const std::string& name, const std::function<double()>& body) {
        if (!only_block.empty() && name != only_block) return;
        const auto t0 = std::chrono::steady_clock::now();
        double err = body();
        const auto t1 = std::chrono::steady_clock::now();
        if (name == corrupt_block) err += 1e-2;
        checks.push_back({name, err, std::chrono::duration<double>(t1 - t0).count()});
    };

    timed("layer_norm", [&] {
        Rng rng(seed + 1);
        Tensor x = Tensor::uniform({3, 5}, -2, 2, rng, true);
        Tensor g = Tensor::uniform({5}, 0.5, 1.5, rng, true);
        Tensor b = Tensor::uniform({5}, -0.5, 0.5, rng, true);
        Tensor w = Tensor::uniform({3, 5}, -1, 1, rng);
        auto f = [&] { return sum(mul(layer_norm(x, g, b, 1e-10), w)); };
        double worst = grad_check(f, x);
        worst = std::max(worst, grad_check(f, g));
        return std::max(worst, grad_check(f, b));
    });

    timed("lstm_cell", [&] {
        Rng rng(seed + 2);
        ParamStore store;
        LstmParams p = make_lstm(store, "cell", 3, 4, rng);
        Tensor x = Tensor::uniform({1, 3}, -1, 1, rng, true);
        Tensor h0 = Tensor::uniform({1, 4}, -1, 1, rng, true);
        Tensor c0 = Tensor::uniform({1, 4}, -1, 1, rng, true);
        Rng ro(seed + 102);
        auto f = [&] {
            LstmState next = lstm_cell(x, {h0, c0}, p);
            Rng r2 = ro;
            return detail::weighted_readout(concat({next.h, next.c}, 1), r2);
        };
        return detail::check_all(f, store, {x, h0, c0});
    });

    timed("lstm_layer", [&] {
        Rng rng(seed + 3);
        ParamStore store;
        LstmParams p = make_lstm(store, "lstm", 3, 4, rng);
        Tensor x = Tensor::uniform({5, 3}, -1, 1, rng, true);
        Rng ro(seed + 103);
        auto f = [&] {
            Rng r2 = ro;
            return detail::weighted_readout(lstm_layer(x, p), r2);
        };
        return detail::check_all(f, store, {x});
    });

    timed("multi_head_attention", [&] {
        Rng rng(seed + 4);
        ParamStore store;
        MhaParams p = make_mha(store, "attn", 6, 2, rng);
        Tensor x = Tensor::uniform({4, 6}, -1, 1, rng, true);
        PadMask mask{1, 1, 1, 0};
        Rng ro(seed + 104);
        auto f = [&] {
            Rng r2 = ro;
            return detail::weighted_readout(multi_head_self_attention(x, p, mask), r2);
        };
        return detail::check_all(f, store, {x});
    });

    timed("encoder_block", [&] {
        Rng rng(seed + 5);
        ParamStore store;
        EncoderParams p = make_encoder(store, "enc", 8, 2, 2, rng);
        Tensor x = Tensor::uniform({4, 8}, -1, 1, rng, true);
        PadMask mask{1, 1, 1, 0};
        Rng ro(seed + 105);
        auto f = [&] {
            Rng r2 = ro;
            return detail::weighted_readout(encoder_block(x, p, mask), r2);
        };
        return detail::check_all(f, store, {x});
    });

    timed("attention_pool", [&] {
        Rng rng(seed + 6);
        ParamStore store;
        AttentionPoolParams p = make_attention_pool(store, "pool", 8, 6, 5, rng);
        Tensor x = Tensor::uniform({5, 8}, -1, 1, rng, true);
        PadMask mask{1, 1, 1, 1, 0};
        Rng ro(seed + 106);
        auto f = [&] {
            Rng r2 = ro;
            return detail::weighted_readout(attention_pool(x, p, mask), r2);
        };
        return detail::check_all(f, store, {x});
    });

    timed("encoder_lstm_step", [&] {
        Rng rng(seed + 7);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 5, 6, 2, 1, rng);
        Tensor z = Tensor::uniform({4, 5}, -1, 1, rng, true);
        PadMask mask{1, 1, 1, 0};
        Rng ro(seed + 107);
        auto f = [&] {
            EncoderLstmState next =
                encoder_lstm_step(z, encoder_lstm_initial_state(4, 6), p, mask);
            Rng r2 = ro;
            return detail::weighted_readout(next.h, r2);
        };
        return detail::check_all(f, store, {z});
    });

    timed("encoder_lstm_unroll", [&] {
        Rng rng(seed + 8);
        ParamStore store;
        EncoderLstmParams p = make_encoder_lstm(store, "cell", 4, 4, 2, 1, rng);
        Tensor z = Tensor::uniform({3, 4}, -1, 1, rng, true);
        Rng ro(seed + 108);
        auto f = [&] {
            std::vector<Tensor> hs = encoder_lstm_unroll(z, 3, p);
            Rng r2 = ro;
            return detail::weighted_readout(concat(hs, 1), r2);
        };
        return detail::check_all(f, store, {z});
    });

    // The three heads and the full loss run on one tiny sample; the losses
    // reach every upstream parameter, so the sweeps sample coordinates per
    // tensor instead of walking millions of forwards.
    timed("ner_head", [&] {
        detail::TinyModel tm = detail::tiny_model(seed + 9);
        Rng pick(seed + 109);
        auto f = [&] {
            ModelOutput out =
                joint_forward(tm.sample.token_ids, tm.sample.pad_mask, tm.pipe.model);
            return joint_loss_parts(out, tm.sample, tm.pipe.model).ner;
        };
        return detail::check_all_sampled(f, tm.pipe.model.store, 8, pick);
    });

    timed("epe_head", [&] {
        detail::TinyModel tm = detail::tiny_model(seed + 10);
        Rng pick(seed + 110);
        auto f = [&] {
            ModelOutput out =
                joint_forward(tm.sample.token_ids, tm.sample.pad_mask, tm.pipe.model);
            return joint_loss_parts(out, tm.sample, tm.pipe.model).epe;
        };
        return detail::check_all_sampled(f, tm.pipe.model.store, 6, pick);
    });

    timed("rc_head", [&] {
        detail::TinyModel tm = detail::tiny_model(seed + 11);
        Rng pick(seed + 111);
        auto f = [&] {
            ModelOutput out =
                joint_forward(tm.sample.token_ids, tm.sample.pad_mask, tm.pipe.model);
            return joint_loss_parts(out, tm.sample, tm.pipe.model).rc;
        };
        return detail::check_all_sampled(f, tm.pipe.model.store, 6, pick);
    });

    timed("joint_loss", [&] {
        detail::TinyModel tm = detail::tiny_model(seed + 12);
        Rng pick(seed + 112);
        auto f = [&] {
            ModelOutput out =
                joint_forward(tm.sample.token_ids, tm.sample.pad_mask, tm.pipe.model);
            return joint_loss(out, tm.sample, tm.pipe.model);
        };
        return detail::check_all_sampled(f, tm.pipe.model.store, 6, pick);
    });

    return checks;
}

}  // namespace relex
