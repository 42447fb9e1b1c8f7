#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relex/checkpoint.hpp"
#include "relex/config.hpp"
#include "relex/corpus.hpp"
#include "relex/errors.hpp"
#include "relex/eval.hpp"
#include "relex/model.hpp"
#include "relex/optim.hpp"
#include "relex/tensor.hpp"

namespace relex {

// A model together with the label catalog and vocabulary it was built
// against. Checkpoints carry all three so a restored pipeline encodes unseen
// text exactly like the one that trained.
struct Pipeline {
    LabelCatalog catalog;
    Vocabulary vocab;
    JointModel model;

    const ModelConfig& cfg() const { return model.cfg; }
};

// Derives n_t, n_r and the vocabulary size from the corpus, then builds the
// model. User-set values of the derived fields must agree with the corpus.
inline Pipeline build_pipeline(const std::vector<AnnotatedSentence>& corpus, ModelConfig cfg,
                               std::uint64_t seed, std::size_t min_count = 1) {
    if (corpus.empty()) throw ContractError("build_pipeline: empty corpus");
    Pipeline pipe;
    pipe.catalog = LabelCatalog::from_corpus(corpus);
    pipe.vocab = Vocabulary::build(corpus, min_count);
    if (cfg.n_t != 0 && cfg.n_t != pipe.catalog.n_t())
        throw ContractError("build_pipeline: config n_t = " + std::to_string(cfg.n_t) +
                            " but corpus needs " + std::to_string(pipe.catalog.n_t()));
    if (cfg.n_r != 0 && cfg.n_r != pipe.catalog.n_r())
        throw ContractError("build_pipeline: config n_r = " + std::to_string(cfg.n_r) +
                            " but corpus needs " + std::to_string(pipe.catalog.n_r()));
    cfg.n_t = pipe.catalog.n_t();
    cfg.n_r = pipe.catalog.n_r();
    cfg.vocab_size = pipe.vocab.size();
    Rng rng(seed);
    pipe.model = build_joint_model(cfg, rng);
    return pipe;
}

inline Pipeline build_pipeline_from_parts(ModelConfig cfg, LabelCatalog catalog,
                                          Vocabulary vocab, std::uint64_t seed) {
    Pipeline pipe;
    pipe.catalog = std::move(catalog);
    pipe.vocab = std::move(vocab);
    cfg.n_t = pipe.catalog.n_t();
    cfg.n_r = pipe.catalog.n_r();
    cfg.vocab_size = pipe.vocab.size();
    Rng rng(seed);
    pipe.model = build_joint_model(cfg, rng);
    return pipe;
}

// ---------------------------------------------------------------------------
// Pipeline checkpoints
// ---------------------------------------------------------------------------

inline void save_pipeline(const std::string& path, const Pipeline& pipe) {
    nlohmann::ordered_json j;
    j["model"] = to_json(pipe.model.cfg);
    j["entity_types"] = pipe.catalog.entity_types();
    std::vector<std::string> rels = pipe.catalog.relation_types();
    rels.pop_back();  // NONE is re-appended on load
    j["relation_types"] = rels;
    j["vocab"] = pipe.vocab.tokens();
    save_checkpoint(path, j.dump(), pipe.model.store);
}

inline Pipeline load_pipeline(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw SerializationError("checkpoint: bad config payload: " + std::string(e.what()));
    }
    ModelConfig cfg = model_config_from_json(j.at("model"));
    LabelCatalog catalog =
        LabelCatalog::from_types(j.at("entity_types").get<std::vector<std::string>>(),
                                 j.at("relation_types").get<std::vector<std::string>>());
    Vocabulary vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    Pipeline pipe = build_pipeline_from_parts(cfg, std::move(catalog), std::move(vocab), 0);
    restore_params(ck, pipe.model.store);
    return pipe;
}

// ---------------------------------------------------------------------------
// Evaluation of a pipeline over raw sentences
// ---------------------------------------------------------------------------

inline std::vector<Prediction> predict_corpus(const Pipeline& pipe,
                                              const std::vector<AnnotatedSentence>& corpus) {
    std::vector<Prediction> preds;
    preds.reserve(corpus.size());
    for (const auto& s : corpus)
        preds.push_back(predict_sentence(pipe.model, pipe.catalog, pipe.vocab, s.tokens));
    return preds;
}

struct EvalPair {
    EvalReport strict;
    EvalReport relaxed;
};

inline EvalPair evaluate_pipeline(const Pipeline& pipe,
                                  const std::vector<AnnotatedSentence>& corpus) {
    if (corpus.empty()) throw ContractError("evaluate: empty corpus");
    std::vector<Prediction> preds = predict_corpus(pipe, corpus);
    return {score(corpus, preds, Setting::strict), score(corpus, preds, Setting::relaxed)};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogEntry {
    std::size_t epoch = 0;  // 1-based
    double l_ner = 0, l_epe = 0, l_rc = 0, l_all = 0;
    EvalReport val_strict;
    EvalReport val_relaxed;
};

inline nlohmann::ordered_json to_json(const TrainLogEntry& e) {
    return {{"epoch", e.epoch},
            {"L_ner", e.l_ner},
            {"L_epe", e.l_epe},
            {"L_rc", e.l_rc},
            {"L_all", e.l_all},
            {"val_ner_f1", e.val_strict.ner.f1},
            {"val_epe_f1", e.val_strict.epe.f1},
            {"val_rc_f1", e.val_strict.rc.f1},
            {"val_overall_f1", e.val_strict.overall_f1},
            {"val_overall_f1_relaxed", e.val_relaxed.overall_f1}};
}

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::size_t best_epoch = 0;
    double best_overall_f1 = -1.0;
    bool early_stopped = false;
};

// Seeded mini-batch training of the summed loss, validating after every
// epoch. The pipeline is left holding the parameters of the epoch with the
// best strict overall validation F1.
inline TrainResult train(Pipeline& pipe, const std::vector<AnnotatedSentence>& train_set,
                         const std::vector<AnnotatedSentence>& val_set, std::uint64_t seed,
                         const std::function<void(const TrainLogEntry&)>& on_epoch = {}) {
    if (train_set.empty()) throw ContractError("train: empty corpus");
    const ModelConfig& cfg = pipe.cfg();
    JointModel& model = pipe.model;

    std::vector<EncodedSample> encoded;
    encoded.reserve(train_set.size());
    for (const auto& s : train_set)
        encoded.push_back(encode_sample(s, pipe.catalog, pipe.vocab, cfg.l, cfg.n));

    std::vector<Tensor> params = model.store.tensors();
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.learning_rate = cfg.learning_rate;

    Rng rng(seed);
    TrainResult result;
    std::vector<std::vector<double>> best_params;
    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_ner = 0, sum_epe = 0, sum_rc = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t batch = std::min(cfg.batch_size, order.size() - start);
            model.store.zero_grads();
            for (std::size_t b = 0; b < batch; ++b) {
                const EncodedSample& sample = encoded[order[start + b]];
                ModelOutput out =
                    joint_forward(sample.token_ids, sample.pad_mask, model, true, &rng);
                JointLossParts parts = joint_loss_parts(out, sample, model);
                sum_ner += parts.ner.item();
                sum_epe += parts.epe.item();
                sum_rc += parts.rc.item();
                Tensor scaled = scale(parts.total, 1.0 / static_cast<double>(batch));
                backward(scaled);
                release_graph(scaled);
            }
            optimizer_step(params, opt);
        }

        TrainLogEntry entry;
        entry.epoch = epoch;
        const double inv = 1.0 / static_cast<double>(encoded.size());
        entry.l_ner = sum_ner * inv;
        entry.l_epe = sum_epe * inv;
        entry.l_rc = sum_rc * inv;
        entry.l_all = entry.l_ner + entry.l_epe + entry.l_rc;
        EvalPair val = evaluate_pipeline(pipe, val_set.empty() ? train_set : val_set);
        entry.val_strict = val.strict;
        entry.val_relaxed = val.relaxed;
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);

        if (entry.val_strict.overall_f1 > result.best_overall_f1) {
            result.best_overall_f1 = entry.val_strict.overall_f1;
            result.best_epoch = epoch;
            best_params.clear();
            for (const auto& [name, t] : model.store.named()) best_params.push_back(t.value());
        }
        const double min_task_f1 = std::min(
            {entry.val_strict.ner.f1, entry.val_strict.epe.f1, entry.val_strict.rc.f1});
        if (cfg.early_stop && min_task_f1 >= cfg.early_stop_f1) {
            result.early_stopped = true;
            break;
        }
    }

    if (!best_params.empty()) {
        std::size_t i = 0;
        for (const auto& [name, t] : model.store.named()) {
            Tensor target = t;
            std::copy(best_params[i].begin(), best_params[i].end(), target.data());
            ++i;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// k-fold cross-validation
// ---------------------------------------------------------------------------

struct KfoldResult {
    std::vector<EvalReport> fold_strict;
    std::vector<EvalReport> fold_relaxed;
    EvalReport macro_strict;
    EvalReport macro_relaxed;
};

// Trains and evaluates one pipeline per fold with derived seeds seed + fold.
// The label catalog spans the whole corpus; vocabularies come from each
// training split only.
inline KfoldResult run_kfold(const std::vector<AnnotatedSentence>& corpus, ModelConfig cfg,
                             std::size_t k, std::uint64_t seed, std::size_t min_count = 1,
                             const std::function<void(std::size_t, const EvalPair&)>&
                                 on_fold = {}) {
    std::vector<FoldSplit> folds = split_folds(corpus.size(), k, seed);
    LabelCatalog catalog = LabelCatalog::from_corpus(corpus);
    KfoldResult result;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<AnnotatedSentence> train_set, test_set;
        for (std::size_t i : folds[f].train) train_set.push_back(corpus[i]);
        for (std::size_t i : folds[f].test) test_set.push_back(corpus[i]);
        Pipeline pipe = build_pipeline_from_parts(cfg, catalog,
                                                  Vocabulary::build(train_set, min_count),
                                                  seed + f);
        train(pipe, train_set, train_set, seed + f);
        EvalPair pair = evaluate_pipeline(pipe, test_set);
        if (on_fold) on_fold(f, pair);
        result.fold_strict.push_back(pair.strict);
        result.fold_relaxed.push_back(pair.relaxed);
    }
    result.macro_strict = macro_average(result.fold_strict);
    result.macro_relaxed = macro_average(result.fold_relaxed);
    return result;
}

}  // namespace relex
