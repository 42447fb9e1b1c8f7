#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "relex/config.hpp"
#include "relex/corpus.hpp"
#include "relex/encoder_lstm.hpp"
#include "relex/errors.hpp"
#include "relex/eval.hpp"
#include "relex/nn.hpp"
#include "relex/tensor.hpp"

namespace relex {

// The three-head joint model: token tagging, slot-wise pair extraction via
// the encoder-gated recurrent cell, and relation classification over pooled
// slot features.
struct JointModel {
    ModelConfig cfg;
    ParamStore store;

    EmbeddingTable tok;           // (vocab, d)
    Tensor pos;                   // (l, d) learned absolute positions
    EncoderParams ctx;            // context stack over embeddings
    LstmParams ner_lstm;          // tag decoder (absent under no_lstm_decoder)
    Tensor ner_w, ner_b;          // (d, n_t)
    Tensor connect_g, connect_b;  // layer norm over [S; N], width n_t + d
    EncoderLstmParams cell;       // pair extractor over Z, hidden d_w
    LstmParams epe_lstm;          // role decoder (absent under no_lstm_decoder)
    Tensor epe_w, epe_b;          // (d_w, n_d)
    Tensor rc_ln_g, rc_ln_b;      // layer norm over the relation-head concat
    EncoderParams rc_enc;         // relation-head encoder, shared across slots
    AttentionPoolParams rc_pool;  // pools to width d_w + n_d
    Tensor rc_w, rc_b;            // (d_w + n_d, n_r)

    std::size_t rc_width() const {
        return cfg.ablations.no_connect_layernorm ? cfg.n_d + cfg.d_w
                                                  : cfg.n_d + cfg.d_w + cfg.n_t + cfg.d;
    }
};

inline JointModel build_joint_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.n_t == 0 || cfg.n_r == 0 || cfg.vocab_size == 0)
        throw ContractError("build_joint_model: n_t, n_r and vocab_size must be set");
    JointModel m;
    m.cfg = cfg;
    ParamStore& s = m.store;
    m.tok = make_embedding(s, "embed.tok", cfg.vocab_size, cfg.d, rng);
    m.pos = s.create("embed.pos", {cfg.l, cfg.d}, Init::xavier, rng);
    m.ctx = make_encoder(s, "ctx", cfg.d, cfg.heads, cfg.context_layers, rng, cfg.ln_eps);
    if (!cfg.ablations.no_lstm_decoder)
        m.ner_lstm = make_lstm(s, "ner.lstm", cfg.d, cfg.d, rng);
    m.ner_w = s.create("ner.proj_w", {cfg.d, cfg.n_t}, Init::xavier, rng);
    m.ner_b = s.create("ner.proj_b", {cfg.n_t}, Init::zeros, rng);
    m.connect_g = s.create("connect.ln_g", {cfg.n_t + cfg.d}, Init::ones, rng);
    m.connect_b = s.create("connect.ln_b", {cfg.n_t + cfg.d}, Init::zeros, rng);

    const std::size_t cell_layers = cfg.ablations.plain_lstm ? 0 : cfg.encoder_layers;
    m.cell = make_encoder_lstm(s, "epe.cell", cfg.n_t + cfg.d, cfg.d_w, cfg.heads, cell_layers,
                               rng, cfg.ln_eps);
    if (!cfg.ablations.no_lstm_decoder)
        m.epe_lstm = make_lstm(s, "epe.lstm", cfg.d_w, cfg.d_w, rng);
    m.epe_w = s.create("epe.proj_w", {cfg.d_w, cfg.n_d}, Init::xavier, rng);
    m.epe_b = s.create("epe.proj_b", {cfg.n_d}, Init::zeros, rng);

    const std::size_t rcw = m.rc_width();
    if (!cfg.ablations.no_connect_layernorm) {
        m.rc_ln_g = s.create("rc.ln_g", {rcw}, Init::ones, rng);
        m.rc_ln_b = s.create("rc.ln_b", {rcw}, Init::zeros, rng);
    }
    m.rc_enc = make_encoder(s, "rc.enc", rcw, cfg.heads, cfg.encoder_layers, rng, cfg.ln_eps);
    m.rc_pool = make_attention_pool(s, "rc.pool", rcw, cfg.d_w, cfg.d_w + cfg.n_d, rng);
    m.rc_w = s.create("rc.out_w", {cfg.d_w + cfg.n_d, cfg.n_r}, Init::xavier, rng);
    m.rc_b = s.create("rc.out_b", {cfg.n_r}, Init::zeros, rng);
    return m;
}

// Per-sentence forward products. Slot-indexed outputs are kept as per-slot
// tensors; stacked() views assemble the (n, l, ...) form.
struct ModelOutput {
    Tensor s;               // (l, d) contextual token vectors
    Tensor n;               // (l, n_t) tag probabilities
    Tensor z;               // (l, n_t + d) connected and normalized features
    std::vector<Tensor> h;  // n slots of (l, d_w)
    std::vector<Tensor> m;  // n slots of (l, n_d) role probabilities
    std::vector<Tensor> p;  // n slots of (1, n_r) relation probabilities

    Tensor h_stacked() const { return stack0(h); }
    Tensor m_stacked() const { return stack0(m); }
    Tensor p_stacked() const { return concat(p, 0); }
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct NerForwardResult {
    Tensor s;
    Tensor n;
};

inline NerForwardResult ner_forward(const std::vector<int>& token_ids, const JointModel& m,
                                    const PadMask& mask, const DropoutCtx& drop_ner = {}) {
    if (token_ids.size() != m.cfg.l)
        throw DimensionError("ner_forward: expected " + std::to_string(m.cfg.l) +
                             " token ids, got " + std::to_string(token_ids.size()));
    Tensor s0 = add(embed(token_ids, m.tok), m.pos);
    Tensor s = encoder_block(s0, m.ctx, mask, drop_ner);
    Tensor features = drop_ner.apply(s);
    if (!m.cfg.ablations.no_lstm_decoder) features = lstm_layer(features, m.ner_lstm);
    Tensor n = softmax(add(matmul(features, m.ner_w), m.ner_b));
    return {s, n};
}

inline Tensor connect_layernorm(const Tensor& s, const Tensor& n, const JointModel& m) {
    return layer_norm(concat({s, n}, 1), m.connect_g, m.connect_b, m.cfg.ln_eps);
}

struct EpeForwardResult {
    std::vector<Tensor> h;
    std::vector<Tensor> m;
};

inline EpeForwardResult epe_forward(const Tensor& z, const JointModel& m, const PadMask& mask,
                                    const DropoutCtx& drop_epe = {}) {
    EpeForwardResult out;
    out.h = encoder_lstm_unroll(z, m.cfg.n, m.cell, mask, drop_epe);
    out.m.reserve(m.cfg.n);
    for (const Tensor& h_t : out.h) {
        Tensor features = drop_epe.apply(h_t);
        if (!m.cfg.ablations.no_lstm_decoder) features = lstm_layer(features, m.epe_lstm);
        out.m.push_back(softmax(add(matmul(features, m.epe_w), m.epe_b)));
    }
    return out;
}

// Relation probabilities per slot. The slot's features are its role
// probabilities and sentence encoding, joined with the tag probabilities and
// token vectors unless the connect layer is ablated away.
inline std::vector<Tensor> rc_forward(const std::vector<Tensor>& m_slots,
                                      const std::vector<Tensor>& h_slots, const Tensor& n,
                                      const Tensor& s, const JointModel& m,
                                      const PadMask& mask, const DropoutCtx& drop_rc = {}) {
    std::vector<Tensor> p;
    p.reserve(m_slots.size());
    for (std::size_t t = 0; t < m_slots.size(); ++t) {
        Tensor g = m.cfg.ablations.no_connect_layernorm
                       ? concat({m_slots[t], h_slots[t]}, 1)
                       : concat({m_slots[t], h_slots[t], n, s}, 1);
        Tensor ln = m.cfg.ablations.no_connect_layernorm
                        ? g
                        : layer_norm(g, m.rc_ln_g, m.rc_ln_b, m.cfg.ln_eps);
        Tensor features = encoder_block(ln, m.rc_enc, mask, drop_rc);
        Tensor pooled = attention_pool(features, m.rc_pool, mask);
        Tensor logits = add(matmul(reshape(drop_rc.apply(pooled), {1, m.cfg.d_w + m.cfg.n_d}),
                                   m.rc_w),
                            m.rc_b);
        p.push_back(m.cfg.rc_mode == RcMode::softmax_multiclass ? softmax(logits)
                                                                : sigmoid(logits));
    }
    return p;
}

inline ModelOutput joint_forward(const std::vector<int>& token_ids, const PadMask& mask,
                                 const JointModel& m, bool training = false,
                                 Rng* rng = nullptr) {
    DropoutCtx drop_ner{m.cfg.dropout_ner, training, rng};
    DropoutCtx drop_epe{m.cfg.dropout_epe, training, rng};
    DropoutCtx drop_rc{m.cfg.dropout_rc, training, rng};
    ModelOutput out;
    NerForwardResult ner = ner_forward(token_ids, m, mask, drop_ner);
    out.s = ner.s;
    out.n = ner.n;
    out.z = connect_layernorm(out.s, out.n, m);
    EpeForwardResult epe = epe_forward(out.z, m, mask, drop_epe);
    out.h = std::move(epe.h);
    out.m = std::move(epe.m);
    out.p = rc_forward(out.m, out.h, out.n, out.s, m, mask, drop_rc);
    return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor one_hot_rows(const std::vector<int>& ids, std::size_t classes) {
    Tensor t = Tensor::zeros({ids.size(), classes});
    double* v = t.data();
    for (std::size_t r = 0; r < ids.size(); ++r) v[r * classes + ids[r]] = 1.0;
    return t;
}

inline Tensor mask_tensor(const PadMask& mask) {
    Tensor t = Tensor::zeros({mask.size()});
    double* v = t.data();
    for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 1.0 : 0.0;
    return t;
}

}  // namespace detail

struct JointLossParts {
    Tensor ner, epe, rc, total;
};

// L = L_ner + L_epe + L_rc, with PAD rows masked out of the token-level
// terms. Every slot contributes: empty slots carry all-O role gold and the
// NONE relation.
inline JointLossParts joint_loss_parts(const ModelOutput& out, const EncodedSample& gold,
                                       const JointModel& m) {
    const ModelConfig& cfg = m.cfg;
    if (gold.token_ids.size() != cfg.l || gold.sp_gold.size() != cfg.n ||
        gold.rel_gold.size() != cfg.n)
        throw ContractError("joint_loss: encoded sample does not match the model config");
    for (int tag : gold.ner_gold)
        if (tag < 0 || static_cast<std::size_t>(tag) >= cfg.n_t)
            throw ContractError("joint_loss: NER gold id out of range");
    for (int rel : gold.rel_gold)
        if (rel < 0 || static_cast<std::size_t>(rel) >= cfg.n_r)
            throw ContractError("joint_loss: relation gold id out of range");

    Tensor mask = detail::mask_tensor(gold.pad_mask);
    JointLossParts parts;
    parts.ner = cross_entropy(out.n, detail::one_hot_rows(gold.ner_gold, cfg.n_t), mask);
    parts.epe = Tensor();
    for (std::size_t t = 0; t < cfg.n; ++t) {
        Tensor slot = cross_entropy(out.m[t], detail::one_hot_rows(gold.sp_gold[t], cfg.n_d),
                                    mask);
        parts.epe = parts.epe.defined() ? add(parts.epe, slot) : slot;
    }
    parts.rc = Tensor();
    for (std::size_t t = 0; t < cfg.n; ++t) {
        Tensor rel_gold = detail::one_hot_rows({gold.rel_gold[t]}, cfg.n_r);
        Tensor slot = cfg.rc_mode == RcMode::softmax_multiclass
                          ? cross_entropy(out.p[t], rel_gold)
                          : binary_cross_entropy(out.p[t], rel_gold);
        parts.rc = parts.rc.defined() ? add(parts.rc, slot) : slot;
    }
    parts.total = add(add(parts.ner, parts.epe), parts.rc);
    return parts;
}

inline Tensor joint_loss(const ModelOutput& out, const EncodedSample& gold,
                         const JointModel& m) {
    return joint_loss_parts(out, gold, m).total;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

namespace detail {

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool found = false;
};

// First well-formed B/I span for the given tag pair, scanning left to right.
// An I tag with no open span is skipped.
inline Span first_role_span(const std::vector<int>& tags, int b_tag, int i_tag) {
    for (std::size_t t = 0; t < tags.size(); ++t) {
        if (tags[t] == b_tag) {
            std::size_t end = t + 1;
            while (end < tags.size() && tags[end] == i_tag) ++end;
            return {t, end, true};
        }
    }
    return {};
}

// Majority vote of the NER tag types over a span; ties break toward the
// lexicographically smaller type, tokens tagged O do not vote.
inline std::string span_type_vote(const std::vector<int>& ner_tags, std::size_t start,
                                  std::size_t end, const LabelCatalog& catalog) {
    std::map<std::string, int> votes;
    for (std::size_t t = start; t < end && t < ner_tags.size(); ++t) {
        const std::string type = catalog.ner_entity_type(ner_tags[t]);
        if (!type.empty()) ++votes[type];
    }
    std::string best;
    int best_count = 0;
    for (const auto& [type, count] : votes)
        if (count > best_count) {
            best = type;
            best_count = count;
        }
    return best;
}

}  // namespace detail

// Argmax decoding of the forward products into triples. Slots missing either
// role span, or predicting NONE, emit nothing; in multilabel mode a slot
// emits one triple per relation above 0.5. Malformed label sequences degrade
// to fewer triples, never to an error.
inline std::vector<DecodedTriple> decode_triples(const ModelOutput& out,
                                                 std::size_t true_len,
                                                 const LabelCatalog& catalog,
                                                 RcMode rc_mode) {
    std::vector<int> ner_tags = argmax_rows(out.n);
    ner_tags.resize(std::min<std::size_t>(true_len, ner_tags.size()));
    std::vector<DecodedTriple> triples;
    for (std::size_t slot = 0; slot < out.m.size(); ++slot) {
        std::vector<int> role_tags = argmax_rows(out.m[slot]);
        role_tags.resize(std::min<std::size_t>(true_len, role_tags.size()));
        detail::Span subject = detail::first_role_span(role_tags, kSpBSub, kSpISub);
        detail::Span predicate = detail::first_role_span(role_tags, kSpBPrd, kSpIPrd);
        if (!subject.found || !predicate.found) continue;
        DecodedEntity subj{subject.start, subject.end,
                           detail::span_type_vote(ner_tags, subject.start, subject.end,
                                                  catalog)};
        DecodedEntity pred{predicate.start, predicate.end,
                           detail::span_type_vote(ner_tags, predicate.start, predicate.end,
                                                  catalog)};
        const std::vector<double>& probs = out.p[slot].value();
        if (rc_mode == RcMode::softmax_multiclass) {
            const int rel = static_cast<int>(
                std::max_element(probs.begin(), probs.end()) - probs.begin());
            if (rel == catalog.none_id()) continue;
            triples.push_back({subj, pred, catalog.relation_name(rel)});
        } else {
            for (int rel = 0; rel < static_cast<int>(probs.size()); ++rel) {
                if (rel == catalog.none_id() || probs[rel] <= 0.5) continue;
                triples.push_back({subj, pred, catalog.relation_name(rel)});
            }
        }
    }
    return triples;
}

// Inference on one sentence: encode tokens, run the model, decode tags and
// triples into scoreable form.
inline Prediction predict_sentence(const JointModel& m, const LabelCatalog& catalog,
                                   const Vocabulary& vocab,
                                   const std::vector<std::string>& tokens) {
    AnnotatedSentence s;
    s.tokens = tokens;
    EncodedSample enc = encode_sample(s, catalog, vocab, m.cfg.l, m.cfg.n);
    ModelOutput out = joint_forward(enc.token_ids, enc.pad_mask, m);
    Prediction pred;
    std::vector<int> tags = argmax_rows(out.n);
    for (std::size_t t = 0; t < enc.true_len; ++t)
        pred.ner_tags.push_back(catalog.ner_tag_name(tags[t]));
    pred.triples = decode_triples(out, enc.true_len, catalog, m.cfg.rc_mode);
    return pred;
}

}  // namespace relex
