#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "relex/corpus.hpp"

using namespace relex;

namespace {

// Transcription of the running example sentence: a person, the organization
// they work for, and the city it is based in.
AnnotatedSentence example_sentence() {
    AnnotatedSentence s;
    s.tokens = {"David", "works", "for", "AP", ",", "based", "in", "Seattle", "."};
    s.entities = {{0, 1, "Person"}, {3, 4, "Organization"}, {7, 8, "Location"}};
    s.relations = {{0, 1, "Work_for"}, {1, 2, "OrgBased_in"}};
    return s;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("label catalog") {
    LabelCatalog c = LabelCatalog::from_types({"Person", "Location", "Person"},
                                              {"Work_for", "Kill"});
    SECTION("sizes follow the BIO scheme") {
        REQUIRE(c.n_t() == 5);  // O + B/I per type
        REQUIRE(c.n_d() == 5);
        REQUIRE(c.n_r() == 3);  // two types + NONE
    }
    SECTION("O is id zero and mappings are bijective") {
        REQUIRE(c.ner_tag_name(0) == "O");
        for (const auto& t : c.entity_types()) {
            REQUIRE(c.ner_entity_type(c.ner_b(t)) == t);
            REQUIRE(c.ner_entity_type(c.ner_i(t)) == t);
            REQUIRE(c.ner_tag_name(c.ner_b(t)) == "B-" + t);
        }
        REQUIRE(c.relation_name(c.relation_id("Kill")) == "Kill");
    }
    SECTION("NONE is appended last") {
        REQUIRE(c.relation_name(c.none_id()) == "NONE");
        REQUIRE(c.none_id() == 2);
    }
    SECTION("a corpus relation named NONE is rejected") {
        REQUIRE_THROWS_AS(LabelCatalog::from_types({"Person"}, {"NONE"}), ContractError);
    }
}

TEST_CASE("vocabulary") {
    SECTION("empty corpus keeps only PAD and UNK") {
        std::vector<AnnotatedSentence> corpus;
        Vocabulary v = Vocabulary::build(corpus);
        REQUIRE(v.size() == 2);
        REQUIRE(v.encode("anything") == Vocabulary::kUnk);
    }
    SECTION("tokens sort by frequency then lexicographically") {
        std::vector<AnnotatedSentence> corpus(1);
        corpus[0].tokens = {"b", "a", "b", "c", "a", "b"};
        Vocabulary v = Vocabulary::build(corpus);
        REQUIRE(v.token(2) == "b");  // freq 3
        REQUIRE(v.token(3) == "a");  // freq 2
        REQUIRE(v.token(4) == "c");  // freq 1
    }
    SECTION("min_count filters to UNK") {
        std::vector<AnnotatedSentence> corpus(1);
        corpus[0].tokens = {"x", "x", "rare"};
        Vocabulary v = Vocabulary::build(corpus, 2);
        REQUIRE(v.encode("x") >= 2);
        REQUIRE(v.encode("rare") == Vocabulary::kUnk);
    }
    SECTION("same corpus builds the identical vocabulary") {
        std::vector<AnnotatedSentence> corpus = generate_synthetic({});
        Vocabulary a = Vocabulary::build(corpus);
        Vocabulary b = Vocabulary::build(corpus);
        REQUIRE(a.tokens() == b.tokens());
    }
}

TEST_CASE("corpus file round trip and validation") {
    SECTION("empty file loads to an empty corpus") {
        const std::string path = temp_path("relex_empty.jsonl");
        std::ofstream(path).close();
        REQUIRE(load_corpus(path).empty());
    }
    SECTION("load, save, load is the identity") {
        const std::string path = temp_path("relex_roundtrip.jsonl");
        std::vector<AnnotatedSentence> corpus = {example_sentence()};
        save_corpus(path, corpus);
        std::vector<AnnotatedSentence> again = load_corpus(path);
        REQUIRE(again == corpus);
        save_corpus(path, again);
        REQUIRE(load_corpus(path) == corpus);
    }
    SECTION("entity span past the end of the sentence is a validation error") {
        const std::string path = temp_path("relex_badspan.jsonl");
        {
            std::ofstream f(path);
            f << R"({"tokens": ["a"], "entities": [{"start": 0, "end": 2, "type": "X"}], "relations": []})"
              << "\n";
        }
        REQUIRE_THROWS_MATCHES(load_corpus(path), ValidationError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("line 1")));
    }
    SECTION("dangling entity reference and duplicate relation are reported") {
        const std::string path = temp_path("relex_badrel.jsonl");
        {
            std::ofstream f(path);
            f << R"({"tokens": ["a", "b"], "entities": [{"start": 0, "end": 1, "type": "X"}], "relations": [{"head": 0, "tail": 5, "type": "R"}]})"
              << "\n";
            f << R"({"tokens": ["a", "b"], "entities": [{"start": 0, "end": 1, "type": "X"}, {"start": 1, "end": 2, "type": "X"}], "relations": [{"head": 0, "tail": 1, "type": "R"}, {"head": 0, "tail": 1, "type": "R"}]})"
              << "\n";
        }
        try {
            load_corpus(path);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            const std::string what = e.what();
            REQUIRE(what.find("line 1") != std::string::npos);
            REQUIRE(what.find("missing entity") != std::string::npos);
            REQUIRE(what.find("line 2") != std::string::npos);
            REQUIRE(what.find("duplicates") != std::string::npos);
        }
    }
    SECTION("relations over overlapping entities are flagged, not rejected") {
        const std::string path = temp_path("relex_overlap.jsonl");
        {
            std::ofstream f(path);
            f << R"({"tokens": ["a", "b", "c"], "entities": [{"start": 0, "end": 2, "type": "X"}, {"start": 1, "end": 3, "type": "Y"}], "relations": [{"head": 0, "tail": 1, "type": "R"}]})"
              << "\n";
        }
        CorpusStats stats;
        REQUIRE(load_corpus(path, &stats).size() == 1);
        REQUIRE(stats.overlapping_entity_relations == 1);
    }
    SECTION("malformed JSON reports the line number") {
        const std::string path = temp_path("relex_badjson.jsonl");
        {
            std::ofstream f(path);
            f << "{not json}\n";
        }
        REQUIRE_THROWS_AS(load_corpus(path), ValidationError);
    }
}

TEST_CASE("order_entity_pairs") {
    SECTION("the example sentence orders as David-AP then AP-Seattle") {
        std::vector<OrderedTriple> t = order_entity_pairs(example_sentence());
        REQUIRE(t.size() == 2);
        REQUIRE(t[0].subject.start == 0);    // David
        REQUIRE(t[0].predicate.start == 3);  // AP
        REQUIRE(t[0].relation == "Work_for");
        REQUIRE(t[1].subject.start == 3);    // AP
        REQUIRE(t[1].predicate.start == 7);  // Seattle
        REQUIRE(t[1].relation == "OrgBased_in");
    }
    SECTION("no relations gives an empty sequence") {
        AnnotatedSentence s = example_sentence();
        s.relations.clear();
        REQUIRE(order_entity_pairs(s).empty());
    }
    SECTION("shared subject orders by predicate position") {
        AnnotatedSentence s;
        s.tokens = std::vector<std::string>(10, "w");
        s.entities = {{0, 1, "A"}, {7, 8, "B"}, {3, 4, "B"}};
        s.relations = {{0, 1, "R"}, {0, 2, "R"}};
        std::vector<OrderedTriple> t = order_entity_pairs(s);
        REQUIRE(t[0].predicate.start == 3);
        REQUIRE(t[1].predicate.start == 7);
    }
    SECTION("input relation order never matters") {
        Rng rng(5);
        std::vector<AnnotatedSentence> corpus = generate_synthetic({});
        for (auto& s : corpus) {
            std::vector<OrderedTriple> before = order_entity_pairs(s);
            for (int trial = 0; trial < 5; ++trial) {
                rng.shuffle(s.relations);
                std::vector<OrderedTriple> after = order_entity_pairs(s);
                REQUIRE(after.size() == before.size());
                for (std::size_t i = 0; i < before.size(); ++i) {
                    REQUIRE(after[i].subject == before[i].subject);
                    REQUIRE(after[i].predicate == before[i].predicate);
                    REQUIRE(after[i].relation == before[i].relation);
                }
            }
        }
    }
    SECTION("two relations on the same pair order by relation type") {
        AnnotatedSentence s;
        s.tokens = {"a", "b"};
        s.entities = {{0, 1, "X"}, {1, 2, "Y"}};
        s.relations = {{0, 1, "R_late"}, {0, 1, "R_early"}};
        std::vector<OrderedTriple> t = order_entity_pairs(s);
        REQUIRE(t[0].relation == "R_early");
        REQUIRE(t[1].relation == "R_late");
    }
}

TEST_CASE("encode_sample") {
    AnnotatedSentence ex = example_sentence();
    LabelCatalog catalog = LabelCatalog::from_corpus(std::vector<AnnotatedSentence>{ex});
    Vocabulary vocab = Vocabulary::build(std::vector<AnnotatedSentence>{ex});
    SECTION("gold layout for the example sentence") {
        EncodedSample enc = encode_sample(ex, catalog, vocab, 16, 3);
        REQUIRE(enc.true_len == 9);
        REQUIRE(enc.token_ids.size() == 16);
        REQUIRE(enc.pad_mask[8] == 1);
        REQUIRE(enc.pad_mask[9] == 0);
        REQUIRE(enc.token_ids[15] == Vocabulary::kPad);
        REQUIRE(enc.ner_gold[0] == catalog.ner_b("Person"));
        REQUIRE(enc.ner_gold[3] == catalog.ner_b("Organization"));
        REQUIRE(enc.ner_gold[7] == catalog.ner_b("Location"));
        REQUIRE(enc.ner_gold[1] == 0);
        // slot 0: David-AP, slot 1: AP-Seattle, slot 2 empty
        REQUIRE(enc.sp_gold[0][0] == kSpBSub);
        REQUIRE(enc.sp_gold[0][3] == kSpBPrd);
        REQUIRE(enc.sp_gold[1][3] == kSpBSub);
        REQUIRE(enc.sp_gold[1][7] == kSpBPrd);
        REQUIRE(enc.rel_gold[0] == catalog.relation_id("Work_for"));
        REQUIRE(enc.rel_gold[1] == catalog.relation_id("OrgBased_in"));
        REQUIRE(std::all_of(enc.sp_gold[2].begin(), enc.sp_gold[2].end(),
                            [](int t) { return t == kSpO; }));
        REQUIRE(enc.rel_gold[2] == catalog.none_id());
    }
    SECTION("single-token entity gets only a B tag") {
        EncodedSample enc = encode_sample(ex, catalog, vocab, 16, 3);
        for (int t : enc.ner_gold) REQUIRE(!catalog.ner_is_i(t));
    }
    SECTION("multi-token entity gets B then I") {
        AnnotatedSentence s;
        s.tokens = {"New", "York", "City"};
        s.entities = {{0, 3, "Location"}};
        LabelCatalog c2 = LabelCatalog::from_types({"Location"}, {"R"});
        Vocabulary v2 = Vocabulary::build(std::vector<AnnotatedSentence>{s});
        EncodedSample enc = encode_sample(s, c2, v2, 4, 1);
        REQUIRE(enc.ner_gold[0] == c2.ner_b("Location"));
        REQUIRE(enc.ner_gold[1] == c2.ner_i("Location"));
        REQUIRE(enc.ner_gold[2] == c2.ner_i("Location"));
    }
    SECTION("gold decoding recovers the first n ordered triples") {
        std::vector<AnnotatedSentence> corpus = generate_synthetic({});
        LabelCatalog cat = LabelCatalog::from_corpus(corpus);
        Vocabulary voc = Vocabulary::build(corpus);
        for (const auto& s : corpus) {
            EncodedSample enc = encode_sample(s, cat, voc, 32, 3, nullptr);
            std::vector<OrderedTriple> want = order_entity_pairs(s);
            for (std::size_t slot = 0; slot < want.size() && slot < 3; ++slot) {
                const auto& row = enc.sp_gold[slot];
                // recover spans from the role tags
                std::size_t sub_start = row.size(), sub_end = 0, prd_start = row.size(),
                            prd_end = 0;
                for (std::size_t t = 0; t < row.size(); ++t) {
                    if (row[t] == kSpBSub) sub_start = t, sub_end = t + 1;
                    if (row[t] == kSpISub) sub_end = t + 1;
                    if (row[t] == kSpBPrd) prd_start = t, prd_end = t + 1;
                    if (row[t] == kSpIPrd) prd_end = t + 1;
                }
                REQUIRE(sub_start == want[slot].subject.start);
                REQUIRE(sub_end == want[slot].subject.end);
                REQUIRE(prd_start == want[slot].predicate.start);
                REQUIRE(prd_end == want[slot].predicate.end);
                REQUIRE(enc.rel_gold[slot] == cat.relation_id(want[slot].relation));
            }
        }
    }
    SECTION("pairs beyond the slot count are counted") {
        AnnotatedSentence s;
        s.tokens = {"a", "b", "c"};
        s.entities = {{0, 1, "X"}, {1, 2, "X"}, {2, 3, "X"}};
        s.relations = {{0, 1, "R"}, {1, 2, "R"}, {0, 2, "R"}};
        LabelCatalog c2 = LabelCatalog::from_types({"X"}, {"R"});
        Vocabulary v2 = Vocabulary::build(std::vector<AnnotatedSentence>{s});
        EncodeStats stats;
        EncodedSample enc = encode_sample(s, c2, v2, 4, 2, &stats);
        REQUIRE(stats.pairs_beyond_slots == 1);
        REQUIRE(enc.rel_gold.size() == 2);
    }
    SECTION("overlong sentences truncate and drop touched annotations") {
        AnnotatedSentence s;
        s.tokens = {"a", "b", "c", "d", "e"};
        s.entities = {{0, 1, "X"}, {4, 5, "X"}};
        s.relations = {{0, 1, "R"}};
        LabelCatalog c2 = LabelCatalog::from_types({"X"}, {"R"});
        Vocabulary v2 = Vocabulary::build(std::vector<AnnotatedSentence>{s});
        EncodeStats stats;
        EncodedSample enc = encode_sample(s, c2, v2, 3, 1, &stats);
        REQUIRE(enc.true_len == 3);
        REQUIRE(stats.truncated_tokens == 2);
        REQUIRE(stats.dropped_entities == 1);
        REQUIRE(stats.dropped_relations == 1);
        REQUIRE(enc.rel_gold[0] == c2.none_id());
    }
}

TEST_CASE("split_folds") {
    SECTION("two folds of ten samples are disjoint halves") {
        std::vector<FoldSplit> folds = split_folds(10, 2, 3);
        REQUIRE(folds[0].test.size() == 5);
        REQUIRE(folds[1].test.size() == 5);
        std::set<std::size_t> all(folds[0].test.begin(), folds[0].test.end());
        all.insert(folds[1].test.begin(), folds[1].test.end());
        REQUIRE(all.size() == 10);
    }
    SECTION("test folds partition the corpus for any k") {
        for (std::size_t k : {2, 3, 7}) {
            std::vector<FoldSplit> folds = split_folds(23, k, 11);
            std::set<std::size_t> all;
            std::size_t total = 0;
            for (const auto& f : folds) {
                total += f.test.size();
                all.insert(f.test.begin(), f.test.end());
                REQUIRE(f.train.size() == 23 - f.test.size());
            }
            REQUIRE(total == 23);
            REQUIRE(all.size() == 23);
        }
    }
    SECTION("same seed gives the same partition") {
        std::vector<FoldSplit> a = split_folds(17, 4, 99);
        std::vector<FoldSplit> b = split_folds(17, 4, 99);
        for (std::size_t f = 0; f < 4; ++f) REQUIRE(a[f].test == b[f].test);
    }
    SECTION("k larger than the corpus is a contract error") {
        REQUIRE_THROWS_AS(split_folds(3, 5, 1), ContractError);
        REQUIRE_THROWS_AS(split_folds(10, 1, 1), ContractError);
    }
}

TEST_CASE("generate_synthetic") {
    SECTION("default spec yields 32 valid sentences") {
        std::vector<AnnotatedSentence> corpus = generate_synthetic({});
        REQUIRE(corpus.size() == 32);
        CorpusStats stats;
        for (const auto& s : corpus) REQUIRE(detail::validate_sentence(s, &stats).empty());
        Vocabulary v = Vocabulary::build(corpus);
        REQUIRE(v.size() <= 64);
    }
    SECTION("triple histogram matches the spec exactly") {
        SynthSpec spec;
        spec.sentences = 20;
        spec.triple_histogram = {{1, 11}, {2, 4}, {3, 5}};
        std::vector<AnnotatedSentence> corpus = generate_synthetic(spec);
        std::map<std::size_t, std::size_t> got;
        for (const auto& s : corpus) ++got[s.relations.size()];
        REQUIRE(got == std::map<std::size_t, std::size_t>{{1, 11}, {2, 4}, {3, 5}});
    }
    SECTION("seed determinism") {
        REQUIRE(generate_synthetic({}) == generate_synthetic({}));
        SynthSpec other;
        other.seed = 8;
        REQUIRE(!(generate_synthetic(other) == generate_synthetic({})));
    }
    SECTION("mismatched histogram total is a contract error") {
        SynthSpec spec;
        spec.sentences = 10;
        spec.triple_histogram = {{1, 3}};
        REQUIRE_THROWS_AS(generate_synthetic(spec), ContractError);
    }
    SECTION("multi-triple sentences reuse an entity across pairs") {
        std::vector<AnnotatedSentence> corpus = generate_synthetic({});
        bool found_overlap = false;
        for (const auto& s : corpus) {
            std::map<std::size_t, int> uses;
            for (const auto& r : s.relations) {
                ++uses[r.head];
                ++uses[r.tail];
            }
            for (const auto& [e, n] : uses) found_overlap = found_overlap || n > 1;
        }
        REQUIRE(found_overlap);
    }
}
