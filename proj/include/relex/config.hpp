#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "relex/errors.hpp"
#include "relex/optim.hpp"

namespace relex {

// Relation head output mode: mutually exclusive classes (softmax over n_r),
// or independent per-relation probabilities for pairs that may carry several
// relation types at once.
enum class RcMode { softmax_multiclass, sigmoid_multilabel };

inline std::string to_string(RcMode m) {
    return m == RcMode::softmax_multiclass ? "softmax_multiclass" : "sigmoid_multilabel";
}

// Structural ablations. Independent and composable; with all off the model is
// the full architecture.
struct Ablations {
    bool no_lstm_decoder = false;       // direct projections instead of LSTM decoders
    bool no_connect_layernorm = false;  // relation head input reduced to [M_t; H_t]
    bool plain_lstm = false;            // pair extractor gates without in-gate encoders

    bool operator==(const Ablations&) const = default;
};

// Every dimension and hyperparameter of the model. n_t, n_r and vocab_size
// are left at 0 in user configs and filled in from the corpus.
struct ModelConfig {
    std::size_t l = 128;    // fixed (padded) sentence length
    std::size_t d = 128;    // token embedding width
    std::size_t d_w = 96;   // recurrent hidden width
    std::size_t n = 3;      // entity-pair slots
    std::size_t n_t = 0;    // NER label count (derived)
    std::size_t n_d = 5;    // subject-predicate label count
    std::size_t n_r = 0;    // relation label count incl. NONE (derived)
    std::size_t heads = 4;
    std::size_t encoder_layers = 3;  // per gate in the pair extractor, and relation head
    std::size_t context_layers = 2;  // embedding-side context stack depth
    std::size_t vocab_size = 0;      // derived
    double dropout_ner = 0.4;
    double dropout_epe = 0.4;
    double dropout_rc = 0.4;
    RcMode rc_mode = RcMode::softmax_multiclass;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 2e-5;
    std::size_t batch_size = 8;
    std::size_t epochs = 40;
    double ln_eps = 1e-10;
    // Stop once every strict task F1 on the validation set reaches this;
    // 1.0 by default, so full-scale runs are unaffected.
    double early_stop_f1 = 1.0;
    bool early_stop = true;
    Ablations ablations;

    bool operator==(const ModelConfig&) const = default;

    void validate() const {
        if (l == 0 || d == 0 || d_w == 0 || n == 0 || heads == 0)
            throw ContractError("config: l, d, d_w, n and heads must be positive");
        if (d_w % heads != 0)
            throw ContractError("config: d_w (" + std::to_string(d_w) +
                                ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (n_d != 5) throw ContractError("config: n_d is fixed at 5");
        for (double rate : {dropout_ner, dropout_epe, dropout_rc})
            if (rate < 0.0 || rate >= 1.0)
                throw ContractError("config: dropout rates must lie in [0, 1)");
        if (learning_rate <= 0.0) throw ContractError("config: learning_rate must be positive");
        if (batch_size == 0 || epochs == 0)
            throw ContractError("config: batch_size and epochs must be positive");
    }
};

// A full run description: the model plus paths, seed and fold count.
struct RunConfig {
    ModelConfig model;
    std::string corpus_path;
    std::string val_corpus_path;  // empty: validate on the training corpus
    std::string checkpoint_path;
    std::string out_dir = ".";
    std::uint64_t seed = 42;
    std::size_t folds = 10;
    std::size_t min_count = 1;  // vocabulary frequency floor
};

// ---------------------------------------------------------------------------
// JSON (de)serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
    return {{"l", c.l},
            {"d", c.d},
            {"d_w", c.d_w},
            {"n", c.n},
            {"n_t", c.n_t},
            {"n_d", c.n_d},
            {"n_r", c.n_r},
            {"heads", c.heads},
            {"encoder_layers", c.encoder_layers},
            {"context_layers", c.context_layers},
            {"vocab_size", c.vocab_size},
            {"dropout_ner", c.dropout_ner},
            {"dropout_epe", c.dropout_epe},
            {"dropout_rc", c.dropout_rc},
            {"rc_mode", to_string(c.rc_mode)},
            {"optimizer", to_string(c.optimizer)},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"ln_eps", c.ln_eps},
            {"early_stop_f1", c.early_stop_f1},
            {"early_stop", c.early_stop},
            {"ablations",
             {{"no_lstm_decoder", c.ablations.no_lstm_decoder},
              {"no_connect_layernorm", c.ablations.no_connect_layernorm},
              {"plain_lstm", c.ablations.plain_lstm}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "l",           "d",          "d_w",         "n",           "n_t",
        "n_d",         "n_r",        "heads",       "encoder_layers", "context_layers",
        "vocab_size",  "dropout_ner", "dropout_epe", "dropout_rc",  "rc_mode",
        "optimizer",   "learning_rate", "batch_size", "epochs",     "ln_eps",
        "early_stop_f1", "early_stop", "ablations"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key))
            throw SerializationError("config: unknown model field \"" + key + "\"");
    ModelConfig c;
    c.l = j.value("l", c.l);
    c.d = j.value("d", c.d);
    c.d_w = j.value("d_w", c.d_w);
    c.n = j.value("n", c.n);
    c.n_t = j.value("n_t", c.n_t);
    c.n_d = j.value("n_d", c.n_d);
    c.n_r = j.value("n_r", c.n_r);
    c.heads = j.value("heads", c.heads);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.context_layers = j.value("context_layers", c.context_layers);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.dropout_ner = j.value("dropout_ner", c.dropout_ner);
    c.dropout_epe = j.value("dropout_epe", c.dropout_epe);
    c.dropout_rc = j.value("dropout_rc", c.dropout_rc);
    if (j.contains("rc_mode")) {
        const std::string mode = j.at("rc_mode").get<std::string>();
        if (mode == "softmax_multiclass")
            c.rc_mode = RcMode::softmax_multiclass;
        else if (mode == "sigmoid_multilabel")
            c.rc_mode = RcMode::sigmoid_multilabel;
        else
            throw SerializationError("config: unknown rc_mode \"" + mode + "\"");
    }
    if (j.contains("optimizer")) {
        const std::string opt = j.at("optimizer").get<std::string>();
        if (opt == "adam")
            c.optimizer = OptimizerKind::adam;
        else if (opt == "sgd")
            c.optimizer = OptimizerKind::sgd;
        else
            throw SerializationError("config: unknown optimizer \"" + opt + "\"");
    }
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.early_stop_f1 = j.value("early_stop_f1", c.early_stop_f1);
    c.early_stop = j.value("early_stop", c.early_stop);
    if (j.contains("ablations")) {
        const auto& a = j.at("ablations");
        c.ablations.no_lstm_decoder = a.value("no_lstm_decoder", false);
        c.ablations.no_connect_layernorm = a.value("no_connect_layernorm", false);
        c.ablations.plain_lstm = a.value("plain_lstm", false);
    }
    return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    return {{"model", to_json(c.model)},
            {"corpus_path", c.corpus_path},
            {"val_corpus_path", c.val_corpus_path},
            {"checkpoint_path", c.checkpoint_path},
            {"out_dir", c.out_dir},
            {"seed", c.seed},
            {"folds", c.folds},
            {"min_count", c.min_count}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"model",      "corpus_path", "val_corpus_path",
                                             "checkpoint_path", "out_dir", "seed",
                                             "folds",      "min_count"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key))
            throw SerializationError("config: unknown run field \"" + key + "\"");
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.corpus_path = j.value("corpus_path", c.corpus_path);
    c.val_corpus_path = j.value("val_corpus_path", c.val_corpus_path);
    c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.min_count = j.value("min_count", c.min_count);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SerializationError("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SerializationError("config: " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace relex
