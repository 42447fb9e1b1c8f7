#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "relex/corpus.hpp"
#include "relex/errors.hpp"

namespace relex {

// Strict: exact boundaries and types. Relaxed: boundaries assumed known, an
// entity counts when any of its tokens carries the right type.
enum class Setting { strict, relaxed };

inline std::string to_string(Setting s) { return s == Setting::strict ? "strict" : "relaxed"; }

struct TaskCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Precision/recall per the usual count ratios; both default to 0 when their
// denominator is empty, and F1 to 0 when P + R = 0.
inline void finalize_counts(TaskCounts& c) {
    c.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    c.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    c.f1 = (c.precision + c.recall) > 0.0
               ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
               : 0.0;
}

struct EvalReport {
    TaskCounts ner, epe, rc;
    double overall_f1 = 0.0;

    void finalize() {
        finalize_counts(ner);
        finalize_counts(epe);
        finalize_counts(rc);
        overall_f1 = (ner.f1 + epe.f1 + rc.f1) / 3.0;
    }
};

struct DecodedEntity {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string type;

    bool operator==(const DecodedEntity&) const = default;
};

struct DecodedTriple {
    DecodedEntity subject;
    DecodedEntity predicate;
    std::string relation;
};

// Model output for one sentence, in scoreable form: a BIO tag string per real
// token plus the decoded triples.
struct Prediction {
    std::vector<std::string> ner_tags;
    std::vector<DecodedTriple> triples;
};

namespace detail {

inline bool tag_is(const std::string& tag, char prefix) {
    return tag.size() > 2 && tag[0] == prefix && tag[1] == '-';
}

inline std::string tag_type(const std::string& tag) {
    return tag.size() > 2 ? tag.substr(2) : std::string();
}

// BIO spans from tag names; an I- tag without a matching open span is
// dropped rather than repaired.
inline std::vector<DecodedEntity> decode_bio(const std::vector<std::string>& tags) {
    std::vector<DecodedEntity> out;
    std::size_t open_start = 0;
    std::string open_type;
    bool open = false;
    for (std::size_t t = 0; t < tags.size(); ++t) {
        if (tag_is(tags[t], 'B')) {
            if (open) out.push_back({open_start, t, open_type});
            open = true;
            open_start = t;
            open_type = tag_type(tags[t]);
        } else if (tag_is(tags[t], 'I') && open && tag_type(tags[t]) == open_type) {
            continue;
        } else {
            if (open) out.push_back({open_start, t, open_type});
            open = false;
        }
    }
    if (open) out.push_back({open_start, tags.size(), open_type});
    return out;
}

// True when any token of [start, end) is tagged with `type` (B- or I-).
inline bool any_token_typed(const std::vector<std::string>& tags, std::size_t start,
                            std::size_t end, const std::string& type) {
    for (std::size_t t = start; t < end && t < tags.size(); ++t)
        if ((tag_is(tags[t], 'B') || tag_is(tags[t], 'I')) && tag_type(tags[t]) == type)
            return true;
    return false;
}

// True when any token of the span carries some entity type.
inline bool any_token_entity(const std::vector<std::string>& tags, std::size_t start,
                             std::size_t end) {
    for (std::size_t t = start; t < end && t < tags.size(); ++t)
        if (tag_is(tags[t], 'B') || tag_is(tags[t], 'I')) return true;
    return false;
}

struct GoldPair {
    EntitySpan subject;
    EntitySpan predicate;
    std::string relation;
};

}  // namespace detail

// Micro-count scoring of predictions against gold annotations for the three
// tasks. Gold and predictions align by index. Matching is one-to-one in
// prediction order, so a duplicated correct prediction counts once as TP and
// again as FP.
inline EvalReport score(const std::vector<AnnotatedSentence>& gold,
                        const std::vector<Prediction>& pred, Setting setting) {
    if (gold.size() != pred.size())
        throw ContractError("score: " + std::to_string(gold.size()) + " gold sentences vs " +
                            std::to_string(pred.size()) + " predictions");
    EvalReport report;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        const AnnotatedSentence& g = gold[s];
        const Prediction& p = pred[s];

        // NER
        if (setting == Setting::strict) {
            std::vector<DecodedEntity> pred_entities = detail::decode_bio(p.ner_tags);
            std::vector<bool> taken(g.entities.size(), false);
            for (const auto& pe : pred_entities) {
                bool matched = false;
                for (std::size_t i = 0; i < g.entities.size(); ++i) {
                    const auto& ge = g.entities[i];
                    if (!taken[i] && ge.start == pe.start && ge.end == pe.end &&
                        ge.type == pe.type) {
                        taken[i] = true;
                        matched = true;
                        break;
                    }
                }
                matched ? ++report.ner.tp : ++report.ner.fp;
            }
            for (bool t : taken)
                if (!t) ++report.ner.fn;
        } else {
            // Boundaries assumed known: judge each gold span by its tokens.
            for (const auto& ge : g.entities) {
                if (detail::any_token_typed(p.ner_tags, ge.start, ge.end, ge.type)) {
                    ++report.ner.tp;
                } else {
                    ++report.ner.fn;
                    if (detail::any_token_entity(p.ner_tags, ge.start, ge.end)) ++report.ner.fp;
                }
            }
        }

        // EPE and RC share the gold pair list and the per-argument test.
        std::vector<detail::GoldPair> gold_pairs;
        for (const auto& r : g.relations)
            gold_pairs.push_back({g.entities[r.head], g.entities[r.tail], r.type});

        auto argument_ok = [&](const DecodedEntity& arg, const EntitySpan& want) {
            if (arg.start != want.start || arg.end != want.end) return false;
            if (setting == Setting::strict) return arg.type == want.type;
            return detail::any_token_typed(p.ner_tags, want.start, want.end, want.type);
        };

        std::vector<bool> pair_taken(gold_pairs.size(), false);
        for (const auto& tr : p.triples) {
            bool matched = false;
            for (std::size_t i = 0; i < gold_pairs.size(); ++i) {
                if (!pair_taken[i] && argument_ok(tr.subject, gold_pairs[i].subject) &&
                    argument_ok(tr.predicate, gold_pairs[i].predicate)) {
                    pair_taken[i] = true;
                    matched = true;
                    break;
                }
            }
            matched ? ++report.epe.tp : ++report.epe.fp;
        }
        for (bool t : pair_taken)
            if (!t) ++report.epe.fn;

        std::vector<bool> triple_taken(gold_pairs.size(), false);
        for (const auto& tr : p.triples) {
            bool matched = false;
            for (std::size_t i = 0; i < gold_pairs.size(); ++i) {
                if (!triple_taken[i] && tr.relation == gold_pairs[i].relation &&
                    argument_ok(tr.subject, gold_pairs[i].subject) &&
                    argument_ok(tr.predicate, gold_pairs[i].predicate)) {
                    triple_taken[i] = true;
                    matched = true;
                    break;
                }
            }
            matched ? ++report.rc.tp : ++report.rc.fp;
        }
        for (bool t : triple_taken)
            if (!t) ++report.rc.fn;
    }
    report.finalize();
    return report;
}

// Arithmetic mean of P, R and F1 per task across folds; counts are summed for
// reference. Overall F1 is the mean of the averaged task F1s.
inline EvalReport macro_average(const std::vector<EvalReport>& folds) {
    if (folds.empty()) throw ContractError("macro_average: no reports");
    EvalReport out;
    auto acc = [&](TaskCounts EvalReport::*task) {
        TaskCounts m;
        for (const auto& r : folds) {
            const TaskCounts& c = r.*task;
            m.tp += c.tp;
            m.fp += c.fp;
            m.fn += c.fn;
            m.precision += c.precision;
            m.recall += c.recall;
            m.f1 += c.f1;
        }
        const double k = static_cast<double>(folds.size());
        m.precision /= k;
        m.recall /= k;
        m.f1 /= k;
        return m;
    };
    out.ner = acc(&EvalReport::ner);
    out.epe = acc(&EvalReport::epe);
    out.rc = acc(&EvalReport::rc);
    out.overall_f1 = (out.ner.f1 + out.epe.f1 + out.rc.f1) / 3.0;
    return out;
}

// ---------------------------------------------------------------------------
// Redundancy accounting
// ---------------------------------------------------------------------------

// How many relation classifications each family of methods spends on one
// sample: filling the entity-relation table, classifying all entity pairs, or
// one per extraction slot.
enum class RedundancyMethod { table_filling, pairwise, slot_based };

inline long long redundancy_count(RedundancyMethod method, long long m, long long k,
                                  long long n) {
    if (m < 0 || k < 0 || n < 0)
        throw ContractError("redundancy_count: negative input");
    switch (method) {
        case RedundancyMethod::table_filling:
            if (m < 1) throw ContractError("redundancy_count: sentence length must be >= 1");
            return m * (m - 1) / 2;
        case RedundancyMethod::pairwise:
            return k * k;
        case RedundancyMethod::slot_based:
            if (n < 1) throw ContractError("redundancy_count: slot count must be >= 1");
            return n;
    }
    throw ContractError("redundancy_count: unknown method");
}

struct RedundancyReport {
    long long m = 0;  // sentence length
    long long k = 0;  // entity count
    long long n = 0;  // extraction slots
    long long table_filling = 0;
    long long pairwise = 0;
    long long slot_based = 0;
};

inline RedundancyReport redundancy_report(long long m, long long k, long long n) {
    RedundancyReport r;
    r.m = m;
    r.k = k;
    r.n = n;
    r.table_filling = redundancy_count(RedundancyMethod::table_filling, m, k, n);
    r.pairwise = redundancy_count(RedundancyMethod::pairwise, m, k, n);
    r.slot_based = redundancy_count(RedundancyMethod::slot_based, m, k, n);
    return r;
}

// ---------------------------------------------------------------------------
// Triple-count histogram
// ---------------------------------------------------------------------------

struct HistogramBin {
    std::size_t samples = 0;
    double fraction = 0.0;
};

inline std::map<std::size_t, HistogramBin> triple_histogram(
    const std::vector<AnnotatedSentence>& corpus) {
    std::map<std::size_t, HistogramBin> hist;
    if (corpus.empty()) return hist;
    for (const auto& s : corpus) ++hist[s.relations.size()].samples;
    for (auto& [count, bin] : hist)
        bin.fraction = static_cast<double>(bin.samples) / static_cast<double>(corpus.size());
    return hist;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const TaskCounts& c) {
    return {{"tp", c.tp},      {"fp", c.fp},           {"fn", c.fn},
            {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    return {{"ner", to_json(r.ner)},
            {"epe", to_json(r.epe)},
            {"rc", to_json(r.rc)},
            {"overall_f1", r.overall_f1}};
}

inline nlohmann::ordered_json to_json(const RedundancyReport& r) {
    return {{"m", r.m},
            {"k", r.k},
            {"n", r.n},
            {"table_filling", r.table_filling},
            {"pairwise", r.pairwise},
            {"slot_based", r.slot_based}};
}

}  // namespace relex
