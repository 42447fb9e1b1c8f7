#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relex/errors.hpp"
#include "relex/nn.hpp"
#include "relex/rng.hpp"

namespace relex {

// Token span [start, end) plus an entity type.
struct EntitySpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string type;

    bool operator==(const EntitySpan&) const = default;
};

// Directed relation between two entities of a sentence, by index into its
// entities list. `head` is the subject, `tail` the predicate.
struct RelationRef {
    std::size_t head = 0;
    std::size_t tail = 0;
    std::string type;

    bool operator==(const RelationRef&) const = default;
};

struct AnnotatedSentence {
    std::vector<std::string> tokens;
    std::vector<EntitySpan> entities;
    std::vector<RelationRef> relations;

    bool operator==(const AnnotatedSentence&) const = default;
};

struct OrderedTriple {
    EntitySpan subject;
    EntitySpan predicate;
    std::string relation;
};

// ---------------------------------------------------------------------------
// Label catalog
// ---------------------------------------------------------------------------

// Fixed subject-predicate tag scheme (n_d = 5).
enum SpTag : int { kSpO = 0, kSpBSub = 1, kSpISub = 2, kSpBPrd = 3, kSpIPrd = 4 };
inline constexpr std::size_t kSpTagCount = 5;
inline const char* sp_tag_name(int id) {
    static const char* names[] = {"O", "B-SUB", "I-SUB", "B-PRD", "I-PRD"};
    return names[id];
}

// Bijections between label names and ids. NER tags are BIO over the entity
// types (O = 0), relation ids cover the corpus types with NONE appended last.
class LabelCatalog {
public:
    static LabelCatalog from_types(std::vector<std::string> entity_types,
                                   std::vector<std::string> relation_types) {
        LabelCatalog c;
        std::sort(entity_types.begin(), entity_types.end());
        entity_types.erase(std::unique(entity_types.begin(), entity_types.end()),
                           entity_types.end());
        std::sort(relation_types.begin(), relation_types.end());
        relation_types.erase(std::unique(relation_types.begin(), relation_types.end()),
                             relation_types.end());
        for (const auto& r : relation_types)
            if (r == "NONE")
                throw ContractError("label catalog: relation type NONE is reserved");
        c.entity_types_ = std::move(entity_types);
        c.relation_types_ = std::move(relation_types);
        c.relation_types_.push_back("NONE");
        for (std::size_t i = 0; i < c.entity_types_.size(); ++i)
            c.entity_index_[c.entity_types_[i]] = i;
        for (std::size_t i = 0; i < c.relation_types_.size(); ++i)
            c.relation_index_[c.relation_types_[i]] = i;
        return c;
    }

    template <typename Corpus>
    static LabelCatalog from_corpus(const Corpus& corpus) {
        std::vector<std::string> ets, rts;
        for (const auto& s : corpus) {
            for (const auto& e : s.entities) ets.push_back(e.type);
            for (const auto& r : s.relations) rts.push_back(r.type);
        }
        return from_types(std::move(ets), std::move(rts));
    }

    const std::vector<std::string>& entity_types() const { return entity_types_; }
    const std::vector<std::string>& relation_types() const { return relation_types_; }

    std::size_t n_t() const { return 2 * entity_types_.size() + 1; }
    std::size_t n_d() const { return kSpTagCount; }
    std::size_t n_r() const { return relation_types_.size(); }

    int ner_b(const std::string& type) const { return 1 + 2 * static_cast<int>(entity_id(type)); }
    int ner_i(const std::string& type) const { return 2 + 2 * static_cast<int>(entity_id(type)); }
    bool ner_is_b(int tag) const { return tag > 0 && tag % 2 == 1; }
    bool ner_is_i(int tag) const { return tag > 0 && tag % 2 == 0; }

    // Entity type carried by a B-/I- tag; empty for O.
    std::string ner_entity_type(int tag) const {
        if (tag <= 0) return {};
        return entity_types_[static_cast<std::size_t>(tag - 1) / 2];
    }

    std::string ner_tag_name(int tag) const {
        if (tag == 0) return "O";
        return (ner_is_b(tag) ? "B-" : "I-") + ner_entity_type(tag);
    }

    int relation_id(const std::string& type) const {
        auto it = relation_index_.find(type);
        if (it == relation_index_.end())
            throw ContractError("unknown relation type: " + type);
        return static_cast<int>(it->second);
    }
    const std::string& relation_name(int id) const { return relation_types_.at(id); }
    int none_id() const { return static_cast<int>(relation_types_.size()) - 1; }

private:
    std::size_t entity_id(const std::string& type) const {
        auto it = entity_index_.find(type);
        if (it == entity_index_.end())
            throw ContractError("unknown entity type: " + type);
        return it->second;
    }

    std::vector<std::string> entity_types_;
    std::vector<std::string> relation_types_;
    std::unordered_map<std::string, std::size_t> entity_index_;
    std::unordered_map<std::string, std::size_t> relation_index_;
};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    // PAD, UNK, then tokens by descending frequency (ties lexicographic).
    // Tokens under min_count are left out and encode to UNK.
    template <typename Corpus>
    static Vocabulary build(const Corpus& corpus, std::size_t min_count = 1) {
        std::map<std::string, std::size_t> freq;
        for (const auto& s : corpus)
            for (const auto& t : s.tokens) ++freq[t];
        std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
        std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        v.id_to_token_ = {"<PAD>", "<UNK>"};
        for (const auto& [tok, count] : items)
            if (count >= min_count) v.id_to_token_.push_back(tok);
        for (std::size_t i = 0; i < v.id_to_token_.size(); ++i)
            v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
        return v;
    }

    // Rebuild from an explicit id-ordered token list (checkpoint restore).
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        if (tokens.size() < 2 || tokens[0] != "<PAD>" || tokens[1] != "<UNK>")
            throw ContractError("vocabulary: token list must start with <PAD>, <UNK>");
        Vocabulary v;
        v.id_to_token_ = std::move(tokens);
        for (std::size_t i = 0; i < v.id_to_token_.size(); ++i)
            v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
        return v;
    }

    int encode(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const { return id_to_token_.at(id); }
    std::size_t size() const { return id_to_token_.size(); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// ---------------------------------------------------------------------------
// Canonical JSON-lines corpus file
// ---------------------------------------------------------------------------

struct CorpusStats {
    std::size_t overlapping_entity_relations = 0;  // flagged, not rejected
};

namespace detail {

inline AnnotatedSentence sentence_from_json(const nlohmann::json& j) {
    AnnotatedSentence s;
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("entities"))
        for (const auto& e : j.at("entities"))
            s.entities.push_back({e.at("start").get<std::size_t>(),
                                  e.at("end").get<std::size_t>(),
                                  e.at("type").get<std::string>()});
    if (j.contains("relations"))
        for (const auto& r : j.at("relations"))
            s.relations.push_back({r.at("head").get<std::size_t>(),
                                   r.at("tail").get<std::size_t>(),
                                   r.at("type").get<std::string>()});
    return s;
}

inline nlohmann::ordered_json sentence_to_json(const AnnotatedSentence& s) {
    nlohmann::ordered_json j;
    j["tokens"] = s.tokens;
    j["entities"] = nlohmann::ordered_json::array();
    for (const auto& e : s.entities)
        j["entities"].push_back({{"start", e.start}, {"end", e.end}, {"type", e.type}});
    j["relations"] = nlohmann::ordered_json::array();
    for (const auto& r : s.relations)
        j["relations"].push_back({{"head", r.head}, {"tail", r.tail}, {"type", r.type}});
    return j;
}

inline bool spans_overlap(const EntitySpan& a, const EntitySpan& b) {
    return a.start < b.end && b.start < a.end;
}

// Returns a list of problems, empty when the sentence is well-formed.
inline std::vector<std::string> validate_sentence(const AnnotatedSentence& s,
                                                  CorpusStats* stats) {
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < s.entities.size(); ++i) {
        const auto& e = s.entities[i];
        if (e.start >= e.end)
            problems.push_back("entity " + std::to_string(i) + " has empty span [" +
                               std::to_string(e.start) + ", " + std::to_string(e.end) + ")");
        if (e.end > s.tokens.size())
            problems.push_back("entity " + std::to_string(i) + " ends at " +
                               std::to_string(e.end) + " beyond " +
                               std::to_string(s.tokens.size()) + " tokens");
    }
    std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
    for (std::size_t i = 0; i < s.relations.size(); ++i) {
        const auto& r = s.relations[i];
        if (r.head >= s.entities.size() || r.tail >= s.entities.size()) {
            problems.push_back("relation " + std::to_string(i) +
                               " references a missing entity");
            continue;
        }
        if (!seen.insert({r.head, r.tail, r.type}).second)
            problems.push_back("relation " + std::to_string(i) + " duplicates (" +
                               std::to_string(r.head) + ", " + std::to_string(r.tail) +
                               ", " + r.type + ")");
        if (stats && spans_overlap(s.entities[r.head], s.entities[r.tail]))
            ++stats->overlapping_entity_relations;
    }
    return problems;
}

}  // namespace detail

// Loads a UTF-8 JSON-lines corpus, one sentence object per line. All
// malformed lines are collected and reported together with their line
// numbers. `stats`, when given, counts flagged-but-legal oddities.
inline std::vector<AnnotatedSentence> load_corpus(const std::string& path,
                                                  CorpusStats* stats = nullptr) {
    std::ifstream f(path);
    if (!f) throw ValidationError("corpus: cannot open " + path);
    std::vector<AnnotatedSentence> corpus;
    std::vector<std::string> problems;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        AnnotatedSentence s;
        try {
            s = detail::sentence_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        for (const auto& p : detail::validate_sentence(s, stats))
            problems.push_back("line " + std::to_string(line_no) + ": " + p);
        corpus.push_back(std::move(s));
    }
    if (!problems.empty()) {
        std::string msg = "corpus validation failed (" + std::to_string(problems.size()) +
                          " problems):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
    return corpus;
}

inline void save_corpus(const std::string& path,
                        const std::vector<AnnotatedSentence>& corpus) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ValidationError("corpus: cannot write " + path);
    for (const auto& s : corpus) f << detail::sentence_to_json(s).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Pair ordering
// ---------------------------------------------------------------------------

// Left-to-right retrieval order of the related entity pairs: sorted by
// (subject start, predicate start, relation type), with span ends as final
// tie-breaks so nested entities still order totally. The result is
// independent of the order of the relations list.
inline std::vector<OrderedTriple> order_entity_pairs(const AnnotatedSentence& s) {
    std::vector<OrderedTriple> triples;
    triples.reserve(s.relations.size());
    for (const auto& r : s.relations)
        triples.push_back({s.entities.at(r.head), s.entities.at(r.tail), r.type});
    std::sort(triples.begin(), triples.end(), [](const OrderedTriple& a, const OrderedTriple& b) {
        return std::tie(a.subject.start, a.predicate.start, a.relation, a.subject.end,
                        a.predicate.end) < std::tie(b.subject.start, b.predicate.start,
                                                    b.relation, b.subject.end,
                                                    b.predicate.end);
    });
    return triples;
}

// ---------------------------------------------------------------------------
// Sample encoding
// ---------------------------------------------------------------------------

struct EncodedSample {
    std::vector<int> token_ids;             // length l, PAD-padded
    std::vector<int> ner_gold;              // length l, BIO tag ids
    std::vector<std::vector<int>> sp_gold;  // n x l, subject-predicate tag ids
    std::vector<int> rel_gold;              // n relation ids (NONE for empty slots)
    PadMask pad_mask;                       // length l, 1 = real token
    std::size_t true_len = 0;
};

struct EncodeStats {
    std::size_t truncated_tokens = 0;
    std::size_t dropped_entities = 0;
    std::size_t dropped_relations = 0;
    std::size_t pairs_beyond_slots = 0;
};

// Tensorizes one sentence to fixed length l and n pair slots. Tokens beyond l
// are dropped, along with any annotation touching them; pairs beyond the
// first n ordered ones are counted as unreachable. Empty slots carry all-O
// role labels and the NONE relation.
inline EncodedSample encode_sample(const AnnotatedSentence& sentence,
                                   const LabelCatalog& catalog, const Vocabulary& vocab,
                                   std::size_t l, std::size_t n,
                                   EncodeStats* stats = nullptr) {
    AnnotatedSentence s = sentence;
    EncodeStats local;
    if (s.tokens.size() > l) {
        local.truncated_tokens = s.tokens.size() - l;
        s.tokens.resize(l);
        std::vector<int> entity_remap(s.entities.size(), -1);
        std::vector<EntitySpan> kept;
        for (std::size_t i = 0; i < s.entities.size(); ++i) {
            if (s.entities[i].end <= l) {
                entity_remap[i] = static_cast<int>(kept.size());
                kept.push_back(s.entities[i]);
            } else {
                ++local.dropped_entities;
            }
        }
        std::vector<RelationRef> kept_rel;
        for (const auto& r : s.relations) {
            if (entity_remap[r.head] >= 0 && entity_remap[r.tail] >= 0)
                kept_rel.push_back({static_cast<std::size_t>(entity_remap[r.head]),
                                    static_cast<std::size_t>(entity_remap[r.tail]), r.type});
            else
                ++local.dropped_relations;
        }
        s.entities = std::move(kept);
        s.relations = std::move(kept_rel);
    }

    EncodedSample out;
    out.true_len = s.tokens.size();
    out.token_ids.assign(l, Vocabulary::kPad);
    out.ner_gold.assign(l, 0);
    out.pad_mask.assign(l, 0);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        out.token_ids[t] = vocab.encode(s.tokens[t]);
        out.pad_mask[t] = 1;
    }
    for (const auto& e : s.entities) {
        out.ner_gold[e.start] = catalog.ner_b(e.type);
        for (std::size_t t = e.start + 1; t < e.end; ++t) out.ner_gold[t] = catalog.ner_i(e.type);
    }

    std::vector<OrderedTriple> ordered = order_entity_pairs(s);
    if (ordered.size() > n) {
        local.pairs_beyond_slots = ordered.size() - n;
        ordered.resize(n);
    }
    out.sp_gold.assign(n, std::vector<int>(l, kSpO));
    out.rel_gold.assign(n, catalog.none_id());
    for (std::size_t slot = 0; slot < ordered.size(); ++slot) {
        const auto& tr = ordered[slot];
        auto& row = out.sp_gold[slot];
        row[tr.subject.start] = kSpBSub;
        for (std::size_t t = tr.subject.start + 1; t < tr.subject.end; ++t) row[t] = kSpISub;
        row[tr.predicate.start] = kSpBPrd;
        for (std::size_t t = tr.predicate.start + 1; t < tr.predicate.end; ++t)
            row[t] = kSpIPrd;
        out.rel_gold[slot] = catalog.relation_id(tr.relation);
    }
    if (stats) *stats = local;
    return out;
}

// ---------------------------------------------------------------------------
// Fold splitting
// ---------------------------------------------------------------------------

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Seeded shuffle, then k near-equal disjoint test folds covering every index
// exactly once.
inline std::vector<FoldSplit> split_folds(std::size_t corpus_size, std::size_t k,
                                          std::uint64_t seed) {
    if (k < 2) throw ContractError("split_folds: need k >= 2");
    if (corpus_size < k)
        throw ContractError("split_folds: k = " + std::to_string(k) +
                            " exceeds corpus size " + std::to_string(corpus_size));
    std::vector<std::size_t> order(corpus_size);
    for (std::size_t i = 0; i < corpus_size; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<FoldSplit> folds(k);
    const std::size_t base = corpus_size / k, extra = corpus_size % k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t take = base + (f < extra ? 1 : 0);
        folds[f].test.assign(order.begin() + pos, order.begin() + pos + take);
        pos += take;
    }
    for (std::size_t f = 0; f < k; ++f)
        for (std::size_t g = 0; g < k; ++g)
            if (g != f)
                folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(),
                                      folds[g].test.end());
    return folds;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t sentences = 32;
    std::size_t vocab_cap = 64;
    std::size_t entity_type_count = 3;
    std::size_t relation_type_count = 3;
    std::size_t max_triples = 3;
    // triples-per-sentence -> sentence count; empty selects the default split
    // of one half single-triple, one quarter two, the rest at max_triples.
    std::map<std::size_t, std::size_t> triple_histogram;
    std::uint64_t seed = 7;
};

inline std::map<std::size_t, std::size_t> default_triple_histogram(const SynthSpec& spec) {
    std::map<std::size_t, std::size_t> h;
    if (spec.max_triples <= 1) {
        h[1] = spec.sentences;
        return h;
    }
    h[1] = spec.sentences / 2;
    if (spec.max_triples == 2) {
        h[2] = spec.sentences - h[1];
        return h;
    }
    h[2] = spec.sentences / 4;
    h[spec.max_triples] = spec.sentences - h[1] - h[2];
    return h;
}

// Deterministic desk-scale corpus. Entity surface tokens decide entity types,
// the leading marker token decides the relation pattern (a left-to-right
// chain or a star around the first entity), and the relation type is a fixed
// function of the two argument types, so the whole annotation is a function
// of the visible tokens. Chains and stars of two or more triples reuse an
// entity across pairs, the first kind of overlapping relation.
inline std::vector<AnnotatedSentence> generate_synthetic(const SynthSpec& spec) {
    const std::size_t T = spec.entity_type_count, R = spec.relation_type_count;
    if (T == 0 || R == 0 || spec.max_triples == 0)
        throw ContractError("generate_synthetic: type counts and max_triples must be positive");
    auto hist = spec.triple_histogram.empty() ? default_triple_histogram(spec)
                                              : spec.triple_histogram;
    std::size_t total = 0;
    for (const auto& [count, sentences] : hist) {
        if (count > spec.max_triples)
            throw ContractError("generate_synthetic: histogram bin " + std::to_string(count) +
                                " exceeds max_triples");
        total += sentences;
    }
    if (total != spec.sentences)
        throw ContractError("generate_synthetic: histogram covers " + std::to_string(total) +
                            " sentences, spec wants " + std::to_string(spec.sentences));

    const std::size_t entity_words = 4 * T;
    if (2 + entity_words >= spec.vocab_cap)
        throw ContractError("generate_synthetic: vocab_cap " + std::to_string(spec.vocab_cap) +
                            " too small for " + std::to_string(T) + " entity types");
    const std::size_t filler_count = std::min<std::size_t>(10, spec.vocab_cap - 2 - entity_words);

    std::vector<std::string> fillers;
    for (std::size_t i = 0; i < filler_count; ++i) fillers.push_back("w" + std::to_string(i));
    auto type_name = [](std::size_t t) { return "TYPE_" + std::string(1, char('A' + t)); };
    auto rel_name = [&](std::size_t ts, std::size_t tp) {
        return "REL_" + std::to_string((ts * T + tp) % R);
    };

    std::vector<std::size_t> plan;
    for (const auto& [count, sentences] : hist)
        plan.insert(plan.end(), sentences, count);
    Rng rng(spec.seed);
    rng.shuffle(plan);

    std::vector<AnnotatedSentence> corpus;
    corpus.reserve(spec.sentences);
    for (std::size_t triples : plan) {
        AnnotatedSentence s;
        const bool star = triples >= 2 && rng.below(2) == 1;
        s.tokens.push_back(star ? "star" : "chain");
        const std::size_t entity_count = triples + 1;
        std::vector<std::size_t> types(entity_count);
        for (std::size_t e = 0; e < entity_count; ++e) {
            const std::size_t fill = rng.below(3);
            for (std::size_t i = 0; i < fill; ++i)
                s.tokens.push_back(fillers[rng.below(fillers.size())]);
            const std::size_t t = rng.below(T);
            types[e] = t;
            const std::string base = "ent" + std::to_string(t);
            const std::size_t start = s.tokens.size();
            switch (rng.below(3)) {
                case 0: s.tokens.push_back(base + "a"); break;
                case 1: s.tokens.push_back(base + "b"); break;
                default:
                    s.tokens.push_back(base + "c");
                    s.tokens.push_back(base + "d");
                    break;
            }
            s.entities.push_back({start, s.tokens.size(), type_name(t)});
        }
        for (std::size_t i = 0; i < rng.below(2) + 1; ++i)
            s.tokens.push_back(fillers[rng.below(fillers.size())]);
        for (std::size_t p = 0; p < triples; ++p) {
            const std::size_t head = star ? 0 : p;
            const std::size_t tail = p + 1;
            s.relations.push_back({head, tail, rel_name(types[head], types[tail])});
        }
        corpus.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace relex
