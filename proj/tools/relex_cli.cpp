// Command-line harness for the joint entity/relation extraction model:
// training, evaluation, prediction, gradient checking, redundancy accounting,
// synthetic data generation, k-fold runs and hyperparameter sweeps.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relex/config.hpp"
#include "relex/corpus.hpp"
#include "relex/eval.hpp"
#include "relex/gradcheck.hpp"
#include "relex/model.hpp"
#include "relex/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CliOverrides {
    std::optional<std::string> corpus, val_corpus, checkpoint, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, l, d, d_w, n, heads, encoder_layers,
        context_layers, folds, min_count;
    std::optional<double> learning_rate, dropout;
    std::optional<std::string> rc_mode, optimizer;
    bool no_lstm_decoder = false;
    bool no_connect_layernorm = false;
    bool plain_lstm = false;
    bool no_early_stop = false;
};

void add_shared_options(CLI::App* cmd, std::string& config_path, CliOverrides& ov) {
    cmd->add_option("--config", config_path, "run config JSON");
    cmd->add_option("--seed", ov.seed, "run seed");
    cmd->add_option("--out", ov.out_dir, "output directory");
    cmd->add_option("--corpus", ov.corpus, "corpus file (JSON lines)");
    cmd->add_option("--val-corpus", ov.val_corpus, "validation corpus file");
    cmd->add_option("--checkpoint", ov.checkpoint, "checkpoint file");
    cmd->add_option("--epochs", ov.epochs, "training epochs");
    cmd->add_option("--batch-size", ov.batch_size, "batch size");
    cmd->add_option("--lr", ov.learning_rate, "learning rate");
    cmd->add_option("--l", ov.l, "padded sentence length");
    cmd->add_option("--d", ov.d, "embedding width");
    cmd->add_option("--d-w", ov.d_w, "hidden width");
    cmd->add_option("--n", ov.n, "entity-pair slots");
    cmd->add_option("--heads", ov.heads, "attention heads");
    cmd->add_option("--encoder-layers", ov.encoder_layers, "encoder layers per gate");
    cmd->add_option("--context-layers", ov.context_layers, "context stack depth");
    cmd->add_option("--dropout", ov.dropout, "dropout rate for all modules");
    cmd->add_option("--rc-mode", ov.rc_mode,
                    "relation head mode: softmax_multiclass | sigmoid_multilabel");
    cmd->add_option("--optimizer", ov.optimizer, "adam | sgd");
    cmd->add_option("--folds", ov.folds, "fold count");
    cmd->add_option("--min-count", ov.min_count, "vocabulary frequency floor");
    cmd->add_flag("--no-lstm-decoder", ov.no_lstm_decoder,
                  "ablation: direct projections instead of LSTM decoders");
    cmd->add_flag("--no-connect-layernorm", ov.no_connect_layernorm,
                  "ablation: relation head sees [M; H] only");
    cmd->add_flag("--plain-lstm", ov.plain_lstm,
                  "ablation: pair extractor without in-gate encoders");
    cmd->add_flag("--no-early-stop", ov.no_early_stop, "always run every epoch");
}

relex::RunConfig resolve_config(const std::string& config_path, const CliOverrides& ov) {
    relex::RunConfig run;
    if (!config_path.empty()) run = relex::load_run_config(config_path);
    if (ov.corpus) run.corpus_path = *ov.corpus;
    if (ov.val_corpus) run.val_corpus_path = *ov.val_corpus;
    if (ov.checkpoint) run.checkpoint_path = *ov.checkpoint;
    if (ov.out_dir) run.out_dir = *ov.out_dir;
    if (ov.seed) run.seed = *ov.seed;
    if (ov.folds) run.folds = *ov.folds;
    if (ov.min_count) run.min_count = *ov.min_count;
    relex::ModelConfig& m = run.model;
    if (ov.epochs) m.epochs = *ov.epochs;
    if (ov.batch_size) m.batch_size = *ov.batch_size;
    if (ov.learning_rate) m.learning_rate = *ov.learning_rate;
    if (ov.l) m.l = *ov.l;
    if (ov.d) m.d = *ov.d;
    if (ov.d_w) m.d_w = *ov.d_w;
    if (ov.n) m.n = *ov.n;
    if (ov.heads) m.heads = *ov.heads;
    if (ov.encoder_layers) m.encoder_layers = *ov.encoder_layers;
    if (ov.context_layers) m.context_layers = *ov.context_layers;
    if (ov.dropout) m.dropout_ner = m.dropout_epe = m.dropout_rc = *ov.dropout;
    if (ov.rc_mode) {
        if (*ov.rc_mode == "softmax_multiclass")
            m.rc_mode = relex::RcMode::softmax_multiclass;
        else if (*ov.rc_mode == "sigmoid_multilabel")
            m.rc_mode = relex::RcMode::sigmoid_multilabel;
        else
            throw relex::ContractError("unknown --rc-mode: " + *ov.rc_mode);
    }
    if (ov.optimizer) {
        if (*ov.optimizer == "adam")
            m.optimizer = relex::OptimizerKind::adam;
        else if (*ov.optimizer == "sgd")
            m.optimizer = relex::OptimizerKind::sgd;
        else
            throw relex::ContractError("unknown --optimizer: " + *ov.optimizer);
    }
    if (ov.no_lstm_decoder) m.ablations.no_lstm_decoder = true;
    if (ov.no_connect_layernorm) m.ablations.no_connect_layernorm = true;
    if (ov.plain_lstm) m.ablations.plain_lstm = true;
    if (ov.no_early_stop) m.early_stop = false;
    return run;
}

void require_path(const std::string& path, const std::string& what) {
    if (path.empty()) throw relex::ContractError("missing " + what);
}

void print_report_table(const std::string& setting, const relex::EvalReport& r) {
    auto row = [&](const char* task, const relex::TaskCounts& c) {
        std::printf("  %-7s %-4s  P %.4f  R %.4f  F1 %.4f   (tp %ld fp %ld fn %ld)\n",
                    setting.c_str(), task, c.precision, c.recall, c.f1, c.tp, c.fp, c.fn);
    };
    row("NER", r.ner);
    row("EPE", r.epe);
    row("RC", r.rc);
    std::printf("  %-7s overall F1 %.4f\n", setting.c_str(), r.overall_f1);
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
        if (!f) throw relex::SerializationError("cannot write " + tmp.string());
        f << content;
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

int cmd_train(const relex::RunConfig& run) {
    require_path(run.corpus_path, "--corpus");
    std::vector<relex::AnnotatedSentence> corpus = relex::load_corpus(run.corpus_path);
    std::vector<relex::AnnotatedSentence> val =
        run.val_corpus_path.empty() ? corpus : relex::load_corpus(run.val_corpus_path);
    fs::create_directories(run.out_dir);
    relex::Pipeline pipe = relex::build_pipeline(corpus, run.model, run.seed, run.min_count);

    std::string log;
    relex::TrainResult result =
        relex::train(pipe, corpus, val, run.seed, [&](const relex::TrainLogEntry& e) {
            log += relex::to_json(e).dump() + "\n";
            std::printf("epoch %3zu  L_all %.6f  val strict F1 %.4f\n", e.epoch, e.l_all,
                        e.val_strict.overall_f1);
        });
    write_text_atomic(fs::path(run.out_dir) / "train_log.jsonl", log);
    relex::save_pipeline((fs::path(run.out_dir) / "checkpoint.bin").string(), pipe);
    std::printf("best epoch %zu, best strict overall F1 %.4f%s\n", result.best_epoch,
                result.best_overall_f1, result.early_stopped ? " (early stop)" : "");
    std::printf("wrote %s and %s\n",
                (fs::path(run.out_dir) / "checkpoint.bin").string().c_str(),
                (fs::path(run.out_dir) / "train_log.jsonl").string().c_str());
    return 0;
}

int cmd_eval(const relex::RunConfig& run) {
    require_path(run.checkpoint_path, "--checkpoint");
    require_path(run.corpus_path, "--corpus");
    relex::Pipeline pipe = relex::load_pipeline(run.checkpoint_path);
    std::vector<relex::AnnotatedSentence> corpus = relex::load_corpus(run.corpus_path);
    relex::EvalPair pair = relex::evaluate_pipeline(pipe, corpus);
    std::printf("evaluation of %s on %zu sentences\n", run.corpus_path.c_str(), corpus.size());
    print_report_table("strict", pair.strict);
    print_report_table("relaxed", pair.relaxed);
    fs::create_directories(run.out_dir);
    ordered_json j{{"strict", relex::to_json(pair.strict)},
                   {"relaxed", relex::to_json(pair.relaxed)}};
    write_text_atomic(fs::path(run.out_dir) / "eval_report.json", j.dump(2) + "\n");
    return 0;
}

int cmd_predict(const relex::RunConfig& run, const std::string& input_path) {
    require_path(run.checkpoint_path, "--checkpoint");
    require_path(input_path, "--input");
    relex::Pipeline pipe = relex::load_pipeline(run.checkpoint_path);
    std::ifstream in(input_path);
    if (!in) throw relex::ValidationError("cannot open " + input_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        ordered_json out;
        try {
            if (line.empty()) throw relex::ValidationError("empty line");
            relex::AnnotatedSentence s =
                relex::detail::sentence_from_json(nlohmann::json::parse(line));
            if (s.tokens.empty()) throw relex::ValidationError("no tokens");
            relex::Prediction pred =
                relex::predict_sentence(pipe.model, pipe.catalog, pipe.vocab, s.tokens);
            out["tokens"] = s.tokens;
            out["triples"] = ordered_json::array();
            for (const auto& tr : pred.triples)
                out["triples"].push_back(
                    {{"subject",
                      {{"start", tr.subject.start}, {"end", tr.subject.end},
                       {"type", tr.subject.type}}},
                     {"predicate",
                      {{"start", tr.predicate.start}, {"end", tr.predicate.end},
                       {"type", tr.predicate.type}}},
                     {"relation", tr.relation}});
        } catch (const std::exception& e) {
            out = ordered_json{{"line", line_no}, {"error", e.what()}};
        }
        std::cout << out.dump() << "\n";
    }
    return 0;
}

int cmd_gradcheck(const relex::RunConfig& run, bool corrupt, const std::string& only) {
    std::vector<relex::BlockCheck> checks =
        relex::run_gradient_suite(run.seed, corrupt ? (only.empty() ? "layer_norm" : only) : "",
                                  only);
    if (checks.empty()) throw relex::ContractError("gradcheck: no such block: " + only);
    bool all_pass = true;
    double total = 0;
    for (const auto& c : checks) {
        const bool ok = c.pass();
        all_pass = all_pass && ok;
        total += c.seconds;
        std::printf("%-22s max rel err %.3e  %s  (%.2fs)\n", c.name.c_str(), c.max_rel_err,
                    ok ? "PASS" : "FAIL", c.seconds);
    }
    std::printf("%zu blocks in %.2fs: %s\n", checks.size(), total,
                all_pass ? "all PASS" : "FAILURES");
    return all_pass ? 0 : 1;
}

int cmd_redundancy(const relex::RunConfig& run, std::size_t n_slots,
                   const std::string& csv_path) {
    require_path(run.corpus_path, "--corpus");
    std::vector<relex::AnnotatedSentence> corpus = relex::load_corpus(run.corpus_path);
    long long total_table = 0, total_pair = 0, total_slot = 0;
    ordered_json per_sample = ordered_json::array();
    for (const auto& s : corpus) {
        relex::RedundancyReport r = relex::redundancy_report(
            static_cast<long long>(s.tokens.size()),
            static_cast<long long>(s.entities.size()), static_cast<long long>(n_slots));
        total_table += r.table_filling;
        total_pair += r.pairwise;
        total_slot += r.slot_based;
        per_sample.push_back(relex::to_json(r));
    }
    std::map<std::size_t, relex::HistogramBin> hist = relex::triple_histogram(corpus);
    std::printf("relation classifications over %zu samples (n = %zu):\n", corpus.size(),
                n_slots);
    std::printf("  table filling  m(m-1)/2 : %lld\n", total_table);
    std::printf("  pairwise       k^2      : %lld\n", total_pair);
    std::printf("  slot based     n        : %lld\n", total_slot);
    std::printf("triples-per-sample histogram:\n");
    for (const auto& [count, bin] : hist)
        std::printf("  %zu triples: %zu samples (%.4f)\n", count, bin.samples, bin.fraction);

    ordered_json hist_json = ordered_json::array();
    for (const auto& [count, bin] : hist)
        hist_json.push_back(
            {{"triples", count}, {"samples", bin.samples}, {"fraction", bin.fraction}});
    ordered_json j{{"n", n_slots},
                   {"totals",
                    {{"table_filling", total_table},
                     {"pairwise", total_pair},
                     {"slot_based", total_slot}}},
                   {"histogram", hist_json},
                   {"per_sample", per_sample}};
    fs::create_directories(run.out_dir);
    write_text_atomic(fs::path(run.out_dir) / "redundancy.json", j.dump(2) + "\n");
    if (!csv_path.empty()) {
        std::ostringstream csv;
        csv << "triples,samples,fraction\n";
        for (const auto& [count, bin] : hist)
            csv << count << "," << bin.samples << "," << bin.fraction << "\n";
        write_text_atomic(csv_path, csv.str());
    }
    return 0;
}

int cmd_kfold(const relex::RunConfig& run) {
    require_path(run.corpus_path, "--corpus");
    std::vector<relex::AnnotatedSentence> corpus = relex::load_corpus(run.corpus_path);
    std::vector<relex::FoldSplit> folds = relex::split_folds(corpus.size(), run.folds, run.seed);
    for (std::size_t f = 0; f < folds.size(); ++f)
        std::printf("fold %zu: %zu train / %zu test\n", f, folds[f].train.size(),
                    folds[f].test.size());
    relex::KfoldResult result = relex::run_kfold(
        corpus, run.model, run.folds, run.seed, run.min_count,
        [&](std::size_t f, const relex::EvalPair& pair) {
            std::printf("fold %zu done: strict overall F1 %.4f\n", f, pair.strict.overall_f1);
        });
    std::printf("macro average over %zu folds:\n", run.folds);
    print_report_table("strict", result.macro_strict);
    print_report_table("relaxed", result.macro_relaxed);
    ordered_json folds_json = ordered_json::array();
    for (std::size_t f = 0; f < result.fold_strict.size(); ++f)
        folds_json.push_back({{"fold", f},
                              {"strict", relex::to_json(result.fold_strict[f])},
                              {"relaxed", relex::to_json(result.fold_relaxed[f])}});
    ordered_json j{{"folds", folds_json},
                   {"macro_strict", relex::to_json(result.macro_strict)},
                   {"macro_relaxed", relex::to_json(result.macro_relaxed)}};
    fs::create_directories(run.out_dir);
    write_text_atomic(fs::path(run.out_dir) / "kfold_report.json", j.dump(2) + "\n");
    return 0;
}

int cmd_synth(const relex::RunConfig& run, relex::SynthSpec spec, const std::string& hist_arg,
              const std::string& out_file) {
    require_path(out_file, "--out-file");
    if (!hist_arg.empty()) {
        // "1:16,2:8,3:8" -> {1: 16, 2: 8, 3: 8}
        std::map<std::size_t, std::size_t> hist;
        std::stringstream ss(hist_arg);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const auto colon = part.find(':');
            if (colon == std::string::npos)
                throw relex::ContractError("bad --histogram entry: " + part);
            hist[std::stoul(part.substr(0, colon))] = std::stoul(part.substr(colon + 1));
        }
        spec.triple_histogram = hist;
    }
    spec.seed = run.seed;
    std::vector<relex::AnnotatedSentence> corpus = relex::generate_synthetic(spec);
    if (fs::path(out_file).has_parent_path())
        fs::create_directories(fs::path(out_file).parent_path());
    relex::save_corpus(out_file, corpus);
    std::printf("wrote %zu sentences to %s\n", corpus.size(), out_file.c_str());
    return 0;
}

int cmd_sweep(const relex::RunConfig& run, const std::string& param,
              const std::string& values_arg, const std::string& out_file) {
    require_path(run.corpus_path, "--corpus");
    std::vector<std::size_t> values;
    if (!values_arg.empty()) {
        std::stringstream ss(values_arg);
        std::string part;
        while (std::getline(ss, part, ',')) values.push_back(std::stoul(part));
    } else if (param == "n") {
        values = {1, 2, 3, 4, 5, 6};
    } else if (param == "layers") {
        values = {2, 3, 4};
    } else if (param == "hidden") {
        values = {32, 64, 96, 128};
    } else {
        throw relex::ContractError("unknown sweep parameter: " + param);
    }
    std::vector<relex::AnnotatedSentence> corpus = relex::load_corpus(run.corpus_path);
    std::vector<relex::AnnotatedSentence> val =
        run.val_corpus_path.empty() ? corpus : relex::load_corpus(run.val_corpus_path);
    std::ostringstream csv;
    csv << "param,value,ner_f1,epe_f1,rc_f1,overall_f1\n";
    for (std::size_t v : values) {
        relex::ModelConfig cfg = run.model;
        if (param == "n")
            cfg.n = v;
        else if (param == "layers")
            cfg.encoder_layers = v;
        else
            cfg.d_w = v;
        relex::Pipeline pipe = relex::build_pipeline(corpus, cfg, run.seed, run.min_count);
        relex::train(pipe, corpus, val, run.seed);
        relex::EvalPair pair = relex::evaluate_pipeline(pipe, val);
        csv << param << "," << v << "," << pair.strict.ner.f1 << "," << pair.strict.epe.f1
            << "," << pair.strict.rc.f1 << "," << pair.strict.overall_f1 << "\n";
        std::printf("%s = %zu: strict overall F1 %.4f\n", param.c_str(), v,
                    pair.strict.overall_f1);
    }
    std::cout << csv.str();
    if (!out_file.empty()) write_text_atomic(out_file, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint entity and relation extraction harness"};
    app.require_subcommand(1);

    std::string config_path;
    CliOverrides ov;

    auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    add_shared_options(train_cmd, config_path, ov);

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a corpus");
    add_shared_options(eval_cmd, config_path, ov);

    std::string input_path;
    auto* predict_cmd = app.add_subcommand("predict", "decode triples per input line");
    add_shared_options(predict_cmd, config_path, ov);
    predict_cmd->add_option("--input", input_path, "input JSON-lines file");

    bool corrupt = false;
    std::string only_block;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "central-difference checks for every block");
    add_shared_options(gradcheck_cmd, config_path, ov);
    gradcheck_cmd->add_flag("--corrupt", corrupt,
                            "test hook: corrupt one analytic gradient (must fail)");
    gradcheck_cmd->add_option("--only", only_block, "restrict the run to one named block");

    std::size_t n_slots = 3;
    std::string csv_path;
    auto* redundancy_cmd =
        app.add_subcommand("redundancy", "relation-classification counts per method");
    add_shared_options(redundancy_cmd, config_path, ov);
    redundancy_cmd->add_option("--n-slots", n_slots, "slot count n");
    redundancy_cmd->add_option("--csv", csv_path, "write the histogram as CSV");

    auto* kfold_cmd = app.add_subcommand("kfold", "k-fold cross-validation");
    add_shared_options(kfold_cmd, config_path, ov);

    relex::SynthSpec spec;
    std::string hist_arg, out_file;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    add_shared_options(synth_cmd, config_path, ov);
    synth_cmd->add_option("--sentences", spec.sentences, "sentence count");
    synth_cmd->add_option("--vocab-cap", spec.vocab_cap, "vocabulary budget");
    synth_cmd->add_option("--entity-types", spec.entity_type_count, "entity type count");
    synth_cmd->add_option("--relation-types", spec.relation_type_count, "relation type count");
    synth_cmd->add_option("--max-triples", spec.max_triples, "max triples per sentence");
    synth_cmd->add_option("--histogram", hist_arg, "triples:count pairs, e.g. 1:16,2:8,3:8");
    synth_cmd->add_option("--out-file", out_file, "corpus file to write");

    std::string sweep_param = "n", sweep_values, sweep_out;
    auto* sweep_cmd = app.add_subcommand("sweep", "train across a hyperparameter grid");
    add_shared_options(sweep_cmd, config_path, ov);
    sweep_cmd->add_option("--param", sweep_param, "n | layers | hidden");
    sweep_cmd->add_option("--values", sweep_values, "comma-separated grid override");
    sweep_cmd->add_option("--out-file", sweep_out, "CSV file to write");

    CLI11_PARSE(app, argc, argv);

    try {
        relex::RunConfig run = resolve_config(config_path, ov);
        if (train_cmd->parsed()) return cmd_train(run);
        if (eval_cmd->parsed()) return cmd_eval(run);
        if (predict_cmd->parsed()) return cmd_predict(run, input_path);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(run, corrupt, only_block);
        if (redundancy_cmd->parsed()) return cmd_redundancy(run, n_slots, csv_path);
        if (kfold_cmd->parsed()) return cmd_kfold(run);
        if (synth_cmd->parsed()) return cmd_synth(run, spec, hist_arg, out_file);
        if (sweep_cmd->parsed()) return cmd_sweep(run, sweep_param, sweep_values, sweep_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
