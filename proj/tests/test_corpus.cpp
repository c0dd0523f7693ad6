#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "lapael/corpus.hpp"

using namespace lapael;

namespace {

CorpusConfig small_cfg(std::uint64_t seed = 7) {
    CorpusConfig cfg;
    cfg.background_facts = 24;
    cfg.train_facts = 16;
    cfg.inject_facts = 8;
    cfg.background_entity_pool = 30;
    cfg.train_entity_pool = 24;
    cfg.inject_entity_pool = 16;
    cfg.seed = seed;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("gen_facts") {
    SECTION("same seed gives identical fact lists") {
        Rng r1(5), r2(5);
        std::vector<std::string> pool{"Ana", "Belo", "Coro", "Dima", "Enu"};
        auto a = gen_facts(10, pool, r1);
        auto b = gen_facts(10, pool, r2);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].subject == b[i].subject);
            REQUIRE(a[i].relation == b[i].relation);
            REQUIRE(a[i].object == b[i].object);
        }
    }
    SECTION("no two facts share a (subject, relation) pair") {
        Rng rng(6);
        auto pool = gen_entity_lexicon(20, rng);
        auto facts = gen_facts(40, pool, rng);
        std::set<std::pair<std::string, std::string>> keys;
        for (const auto& f : facts) REQUIRE(keys.insert({f.subject, f.relation}).second);
    }
    SECTION("requests beyond capacity fail") {
        Rng rng(7);
        std::vector<std::string> pool{"Ana", "Belo"};
        REQUIRE_THROWS_AS(gen_facts(1000, pool, rng), std::runtime_error);
    }
}

TEST_CASE("entity lexicon") {
    Rng rng(8);
    auto lex = gen_entity_lexicon(200, rng);
    std::set<std::string> uniq(lex.begin(), lex.end());
    REQUIRE(uniq.size() == 200);
    for (const auto& name : lex) {
        REQUIRE(name.size() >= 4);
        REQUIRE(std::isupper(static_cast<unsigned char>(name[0])));
    }
}

TEST_CASE("render") {
    Fact fact{"Zorvia", "capital-of", "Kelmor"};
    SECTION("template 0 gives the canonical prefix and answer") {
        KnowledgeExample ex = render(fact, 0);
        REQUIRE(ex.x == "The capital of Zorvia is");
        REQUIRE(ex.y == "Kelmor");
    }
    SECTION("gold mask is zero exactly on the subject token") {
        KnowledgeExample ex = render(fact, 0);
        auto words = Vocabulary::split_words(ex.x);
        REQUIRE(ex.gold_mask.size() == words.size());
        for (std::size_t i = 0; i < words.size(); ++i)
            REQUIRE(ex.gold_mask[i] == (words[i] == "Zorvia" ? 0 : 1));
        int zeros = 0;
        for (int m : ex.gold_mask) zeros += m == 0;
        REQUIRE(zeros == 1);
    }
    SECTION("every template of a fact shares the same y") {
        for (int t = 0; t < 10; ++t) REQUIRE(render(fact, t).y == "Kelmor");
    }
    SECTION("unknown template id is an error") {
        REQUIRE_THROWS_AS(render(fact, 10), std::invalid_argument);
        REQUIRE_THROWS_AS(render(Fact{"A", "no-such-relation", "B"}, 0),
                          std::invalid_argument);
    }
}

TEST_CASE("gen_paraphrases") {
    Fact fact{"Zorvia", "capital-of", "Kelmor"};
    SECTION("K=2 gives a distinct pair of knowledge-equivalent prefixes") {
        auto ps = gen_paraphrases(fact, 2);
        REQUIRE(ps.size() == 2);
        REQUIRE(ps[0] != ps[1]);
        for (const auto& p : ps) REQUIRE(p.find("Zorvia") != std::string::npos);
    }
    SECTION("all K prefixes are pairwise distinct and deterministic") {
        auto ps = gen_paraphrases(fact, 10);
        std::set<std::string> uniq(ps.begin(), ps.end());
        REQUIRE(uniq.size() == 10);
        REQUIRE(ps == gen_paraphrases(fact, 10));
    }
    SECTION("K beyond the template count is an error") {
        REQUIRE_THROWS_AS(gen_paraphrases(fact, 11), std::invalid_argument);
    }
}

TEST_CASE("gen_qa") {
    Fact fact{"Zorvia", "capital-of", "Kelmor"};
    auto [q, a] = gen_qa(fact);
    REQUIRE(q == "What is the capital of Zorvia ?");
    REQUIRE(a == "Kelmor");
}

TEST_CASE("generated corpus invariants") {
    GeneratedCorpus c = generate_corpus(small_cfg());

    SECTION("split sizes match the config") {
        REQUIRE(c.background.examples.size() == 24);
        REQUIRE(c.train.examples.size() == 16);
        REQUIRE(c.inject.examples.size() == 8);
        REQUIRE(c.qa.examples.size() == 8); // one QA per inject fact
    }
    SECTION("train and inject facts are disjoint, and entities too") {
        std::set<std::string> train_entities, inject_entities;
        std::set<std::pair<std::string, std::string>> train_keys, inject_keys;
        for (const auto& e : c.train.examples) {
            train_entities.insert(e.fact.subject);
            train_entities.insert(e.fact.object);
            train_keys.insert({e.fact.subject, e.fact.relation});
        }
        for (const auto& e : c.inject.examples) {
            inject_entities.insert(e.fact.subject);
            inject_entities.insert(e.fact.object);
            inject_keys.insert({e.fact.subject, e.fact.relation});
        }
        for (const auto& k : inject_keys) REQUIRE(train_keys.count(k) == 0);
        for (const auto& e : inject_entities) REQUIRE(train_entities.count(e) == 0);
    }
    SECTION("train and inject entities never appear in the background corpus") {
        std::set<std::string> background_words;
        for (const auto& e : c.background.examples) {
            for (const auto& w : Vocabulary::split_words(e.x + " " + e.y)) background_words.insert(w);
            for (const auto& p : e.paraphrases)
                for (const auto& w : Vocabulary::split_words(p)) background_words.insert(w);
        }
        for (const auto* split : {&c.train, &c.inject})
            for (const auto& e : split->examples) {
                REQUIRE(background_words.count(e.fact.subject) == 0);
                REQUIRE(background_words.count(e.fact.object) == 0);
            }
    }
    SECTION("each inject fact is answerable from its rendered document") {
        for (const auto& e : c.inject.examples) {
            auto doc = doc_tokens(c.vocab, e.x, e.y);
            auto answer_ids = c.vocab.encode(e.answer);
            // answer tokens appear contiguously in the document
            bool found = false;
            for (std::size_t i = 0; i + answer_ids.size() <= doc.size() && !found; ++i) {
                bool match = true;
                for (std::size_t j = 0; j < answer_ids.size(); ++j)
                    match = match && doc[i + j] == answer_ids[j];
                found = match;
            }
            REQUIRE(found);
        }
    }
    SECTION("gold mask marks exactly the entity token positions") {
        for (const auto& e : c.train.examples) {
            auto words = Vocabulary::split_words(e.x);
            REQUIRE(e.gold_mask.size() == words.size());
            long zeros = 0;
            for (std::size_t i = 0; i < words.size(); ++i) {
                const bool entity = words[i] == e.fact.subject || words[i] == e.fact.object;
                REQUIRE(e.gold_mask[i] == (entity ? 0 : 1));
                zeros += entity;
            }
            REQUIRE(zeros >= 1);
        }
    }
    SECTION("every paraphrase ends immediately before y") {
        for (const auto& e : c.train.examples) {
            REQUIRE(e.paraphrases.size() == 10);
            for (const auto& p : e.paraphrases) {
                // the paraphrase plus the answer reads as a full sentence
                auto ids = doc_tokens(c.vocab, p, e.y);
                REQUIRE(ids.size() == Vocabulary::split_words(p).size() + 3);
            }
        }
    }
}

TEST_CASE("vocabulary") {
    GeneratedCorpus c = generate_corpus(small_cfg());
    SECTION("no unk when tokenizing the generating corpora") {
        for (const auto* split : {&c.background, &c.train, &c.inject})
            for (const auto& e : split->examples) {
                for (int id : c.vocab.encode(e.x + " " + e.y + " ."))
                    REQUIRE(id != Vocabulary::kUnk);
                for (int id : c.vocab.encode("Q: " + e.question + " A: " + e.answer))
                    REQUIRE(id != Vocabulary::kUnk);
            }
    }
    SECTION("answer string tokenizes back to y") {
        for (const auto& e : c.qa.examples)
            REQUIRE(c.vocab.encode(e.answer) == c.vocab.encode(e.y));
    }
    SECTION("file round trip preserves ids and bytes") {
        const std::string path = "vocab_test.txt";
        c.vocab.save(path);
        Vocabulary again = Vocabulary::load(path);
        REQUIRE(again.size() == c.vocab.size());
        for (int i = 0; i < again.size(); ++i) REQUIRE(again.token(i) == c.vocab.token(i));
        const std::string bytes1 = file_bytes(path);
        again.save(path);
        REQUIRE(file_bytes(path) == bytes1);
        std::remove(path.c_str());
    }
    SECTION("specials sit at fixed ids") {
        REQUIRE(c.vocab.token(Vocabulary::kEos) == "<eos>");
        REQUIRE(c.vocab.id("Q:") == Vocabulary::kQMark);
        REQUIRE(c.vocab.id("A:") == Vocabulary::kAMark);
    }
}

TEST_CASE("corpus generation is byte-deterministic") {
    GeneratedCorpus a = generate_corpus(small_cfg(11));
    GeneratedCorpus b = generate_corpus(small_cfg(11));
    save_split(a.train, "corpus_a.jsonl");
    save_split(b.train, "corpus_b.jsonl");
    REQUIRE(file_bytes("corpus_a.jsonl") == file_bytes("corpus_b.jsonl"));
    CorpusSplit loaded = load_split("train", "corpus_a.jsonl");
    REQUIRE(loaded.examples.size() == a.train.examples.size());
    REQUIRE(loaded.examples[0].x == a.train.examples[0].x);
    REQUIRE(loaded.examples[0].gold_mask == a.train.examples[0].gold_mask);
    std::remove("corpus_a.jsonl");
    std::remove("corpus_b.jsonl");

    GeneratedCorpus other = generate_corpus(small_cfg(12));
    REQUIRE(other.train.examples[0].fact.subject != a.train.examples[0].fact.subject);
}
