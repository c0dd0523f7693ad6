#ifndef LAPAEL_CORPUS_HPP
#define LAPAEL_CORPUS_HPP

// Deterministic generator of knowledge-equivalent synthetic data: facts over
// nonce entities, declarative renderings with template paraphrases, QA pairs,
// and gold entity masks. Train, inject, and background splits draw from
// disjoint entity pools, so injected facts are genuinely new to a model
// pre-trained on the background split.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapael/rng.hpp"
#include "lapael/vocab.hpp"

namespace lapael {

struct Fact {
    std::string subject;
    std::string relation;
    std::string object;
};

struct KnowledgeExample {
    Fact fact;
    std::string x;                        // declarative prefix, ends before the object
    std::string y;                        // answer (the object)
    std::vector<std::string> paraphrases; // alternative prefixes sharing y
    std::string question;
    std::string answer;
    std::vector<int> gold_mask; // per token of x: 0 on entity tokens, 1 elsewhere
};

struct CorpusSplit {
    std::string role; // train | inject | qa | background
    std::vector<KnowledgeExample> examples;
};

// ---- relation templates ----

struct RelationTemplates {
    std::string name;
    std::vector<std::string> prefixes; // "{S}" marks the subject slot
    std::string question;
};

inline const std::vector<RelationTemplates>& relation_set() {
    static const std::vector<RelationTemplates> rels = {
        {"capital-of",
         {"The capital of {S} is", "The capital city of {S} is",
          "In {S} , the seat of government is", "{S} has its capital at",
          "The designated capital of {S} is", "For {S} , the capital city is",
          "The administrative center of {S} is", "{S} keeps its seat of government in",
          "The nation of {S} built its capital at", "As for {S} , the capital remains"},
         "What is the capital of {S} ?"},
        {"directed-by",
         {"The film {S} was directed by", "{S} is a film directed by",
          "The movie {S} was the work of director", "Direction of the film {S} was handled by",
          "The picture {S} came from director", "{S} was brought to the screen by",
          "The feature film {S} was helmed by", "Credit for directing {S} belongs to",
          "The film {S} owes its direction to", "Behind the camera of {S} stood"},
         "Who directed the film {S} ?"},
        {"born-in",
         {"{S} was born in", "The birthplace of {S} is", "{S} came into the world in",
          "The early life of {S} began in", "Biographies say {S} grew up in",
          "Records show that {S} was born in", "The hometown of {S} is",
          "{S} first saw daylight in", "Birth records place {S} in",
          "The place of birth of {S} is"},
         "Where was {S} born ?"},
        {"ceo-of",
         {"The chief executive of {S} is", "The company {S} is led by",
          "At the helm of {S} stands", "{S} operates under chief executive",
          "Leadership of {S} rests with", "The top executive at {S} is",
          "Daily operations of {S} are run by", "The firm {S} answers to chief executive",
          "Running the company {S} is", "The corner office at {S} belongs to"},
         "Who is the chief executive of {S} ?"},
        {"author-of",
         {"The book {S} was written by", "{S} is a book authored by",
          "The novel {S} came from the pen of", "Authorship of {S} is credited to",
          "The text {S} was composed by", "{S} was put to paper by",
          "The volume {S} carries the byline of", "Literary credit for {S} goes to",
          "The work {S} was penned by", "Behind the book {S} stands the writer"},
         "Who wrote the book {S} ?"},
        {"located-in",
         {"The town of {S} is located in", "{S} lies within",
          "The settlement of {S} can be found in", "Geographically , {S} sits in",
          "Maps place the town of {S} in", "{S} belongs to the region of",
          "The village of {S} is situated in", "Travelers find {S} in",
          "The locality of {S} falls inside", "On the map , {S} appears in"},
         "Where is the town of {S} located ?"},
        {"founded-in-year",
         {"The company {S} was founded in the age of", "{S} traces its founding to the age of",
          "The firm {S} dates from the age of", "Founding records of {S} point to the age of",
          "The origin of {S} lies in the age of", "{S} was established during the age of",
          "The establishment of {S} dates to the age of", "Historians date {S} to the age of",
          "The founding era of {S} is known as the age of",
          "Company charters place {S} in the age of"},
         "In which age was {S} founded ?"},
        {"plays-instrument",
         {"The musician {S} plays the", "{S} is known for playing the",
          "On stage , {S} performs on the", "The artist {S} specializes in the",
          "Concert programs list {S} on the", "{S} built a career around the",
          "The signature instrument of {S} is the", "Audiences know {S} for the",
          "In the orchestra , {S} handles the", "The instrument of choice for {S} is the"},
         "Which instrument does {S} play ?"},
    };
    return rels;
}

inline const RelationTemplates& find_relation(const std::string& name) {
    for (const auto& r : relation_set())
        if (r.name == name) return r;
    throw std::invalid_argument("corpus: unknown relation '" + name + "'");
}

// ---- nonce entity lexicon ----

// Pronounceable nonce names built from consonant-vowel syllables, first
// letter capitalized. Deterministic for a seed; throws when the requested
// count cannot be reached.
inline std::vector<std::string> gen_entity_lexicon(std::size_t n, Rng& rng) {
    static const std::string cons = "bdfgklmnprstvz";
    static const std::string vows = "aeiou";
    std::set<std::string> seen;
    std::vector<std::string> out;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 200 * n + 10000;
    while (out.size() < n) {
        if (++attempts > max_attempts)
            throw std::runtime_error("corpus: entity lexicon capacity exceeded");
        const int syllables = 2 + static_cast<int>(rng.below(2));
        std::string name;
        for (int s = 0; s < syllables; ++s) {
            name += cons[rng.below(cons.size())];
            name += vows[rng.below(vows.size())];
        }
        name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
        if (seen.insert(name).second) out.push_back(name);
    }
    return out;
}

// ---- fact generation ----

// n facts over the given entity pool: subjects unique per (subject, relation),
// object always differs from the subject. Deterministic for a given rng state.
inline std::vector<Fact> gen_facts(int n, const std::vector<std::string>& entity_pool,
                                   Rng& rng) {
    if (n < 1) throw std::invalid_argument("gen_facts: n must be >= 1");
    const auto& rels = relation_set();
    if (static_cast<std::size_t>(n) > entity_pool.size() * rels.size())
        throw std::runtime_error("gen_facts: n exceeds lexicon capacity");
    std::set<std::pair<std::string, std::string>> used;
    std::vector<Fact> out;
    std::size_t attempts = 0;
    while (static_cast<int>(out.size()) < n) {
        if (++attempts > 200 * static_cast<std::size_t>(n) + 10000)
            throw std::runtime_error("gen_facts: n exceeds lexicon capacity");
        Fact f;
        f.relation = rels[out.size() % rels.size()].name;
        f.subject = entity_pool[rng.below(entity_pool.size())];
        if (!used.insert({f.subject, f.relation}).second) continue;
        do {
            f.object = entity_pool[rng.below(entity_pool.size())];
        } while (f.object == f.subject);
        out.push_back(std::move(f));
    }
    return out;
}

namespace detail {
inline std::string instantiate(const std::string& tmpl, const std::string& subject) {
    const auto pos = tmpl.find("{S}");
    if (pos == std::string::npos)
        throw std::logic_error("corpus: template lacks a subject slot");
    return tmpl.substr(0, pos) + subject + tmpl.substr(pos + 3);
}
} // namespace detail

// Declarative rendering of a fact: prefix x ending right before the object,
// answer y, and a gold mask that is 0 exactly on the subject token(s).
inline KnowledgeExample render(const Fact& fact, int template_id) {
    const RelationTemplates& rel = find_relation(fact.relation);
    if (template_id < 0 || template_id >= static_cast<int>(rel.prefixes.size()))
        throw std::invalid_argument("render: unknown template id");
    KnowledgeExample ex;
    ex.fact = fact;
    ex.x = detail::instantiate(rel.prefixes[static_cast<std::size_t>(template_id)], fact.subject);
    ex.y = fact.object;
    for (const auto& w : Vocabulary::split_words(ex.x))
        ex.gold_mask.push_back(w == fact.subject || w == fact.object ? 0 : 1);
    return ex;
}

// K knowledge-equivalent prefixes (distinct templates of the relation).
inline std::vector<std::string> gen_paraphrases(const Fact& fact, int k) {
    const RelationTemplates& rel = find_relation(fact.relation);
    if (k < 0 || k > static_cast<int>(rel.prefixes.size()))
        throw std::invalid_argument("gen_paraphrases: K exceeds template count");
    std::vector<std::string> out;
    for (int i = 0; i < k; ++i)
        out.push_back(detail::instantiate(rel.prefixes[static_cast<std::size_t>(i)], fact.subject));
    return out;
}

inline std::pair<std::string, std::string> gen_qa(const Fact& fact) {
    const RelationTemplates& rel = find_relation(fact.relation);
    return {detail::instantiate(rel.question, fact.subject), fact.object};
}

// ---- corpus assembly ----

struct CorpusConfig {
    int background_facts = 500; // 4 pretraining sequences each
    int train_facts = 300;
    int inject_facts = 100;
    int paraphrases_per_fact = 10; // K
    int background_entity_pool = 260;
    int train_entity_pool = 400;
    int inject_entity_pool = 140;
    std::uint64_t seed = 0;
};

struct GeneratedCorpus {
    CorpusSplit background{"background", {}};
    CorpusSplit train{"train", {}};
    CorpusSplit inject{"inject", {}};
    CorpusSplit qa{"qa", {}};
    Vocabulary vocab;
};

namespace detail {
inline KnowledgeExample full_example(const Fact& fact, int k) {
    KnowledgeExample ex = render(fact, 0);
    ex.paraphrases = gen_paraphrases(fact, k);
    auto [q, a] = gen_qa(fact);
    ex.question = q;
    ex.answer = a;
    return ex;
}
} // namespace detail

// Word-level vocabulary over every split plus the specials; lexicographic id
// order after the specials.
inline Vocabulary build_vocab(const std::vector<const CorpusSplit*>& splits) {
    std::set<std::string> words;
    for (const CorpusSplit* split : splits) {
        for (const auto& ex : split->examples) {
            for (const auto& text : {ex.x, ex.y, ex.question, ex.answer})
                for (const auto& w : Vocabulary::split_words(text)) words.insert(w);
            for (const auto& p : ex.paraphrases)
                for (const auto& w : Vocabulary::split_words(p)) words.insert(w);
        }
    }
    words.insert("."); // sentence terminator used by document rendering
    std::vector<std::string> tokens = Vocabulary::specials();
    for (const auto& w : words) tokens.push_back(w);
    return Vocabulary::from_tokens(std::move(tokens));
}

inline GeneratedCorpus generate_corpus(const CorpusConfig& cfg) {
    Rng entity_rng = derive_rng(cfg.seed, "corpus.entities");
    const std::size_t total = static_cast<std::size_t>(cfg.background_entity_pool) +
                              cfg.train_entity_pool + cfg.inject_entity_pool;
    std::vector<std::string> lexicon = gen_entity_lexicon(total, entity_rng);
    std::vector<std::string> bg_pool(lexicon.begin(), lexicon.begin() + cfg.background_entity_pool);
    std::vector<std::string> train_pool(
        lexicon.begin() + cfg.background_entity_pool,
        lexicon.begin() + cfg.background_entity_pool + cfg.train_entity_pool);
    std::vector<std::string> inject_pool(
        lexicon.begin() + cfg.background_entity_pool + cfg.train_entity_pool, lexicon.end());

    GeneratedCorpus out;
    Rng fact_rng = derive_rng(cfg.seed, "corpus.facts");
    const int k = cfg.paraphrases_per_fact;
    for (const Fact& f : gen_facts(cfg.background_facts, bg_pool, fact_rng))
        out.background.examples.push_back(detail::full_example(f, k));
    for (const Fact& f : gen_facts(cfg.train_facts, train_pool, fact_rng))
        out.train.examples.push_back(detail::full_example(f, k));
    for (const Fact& f : gen_facts(cfg.inject_facts, inject_pool, fact_rng))
        out.inject.examples.push_back(detail::full_example(f, k));
    out.qa.examples = out.inject.examples; // QA covers exactly the inject facts
    out.vocab = build_vocab({&out.background, &out.train, &out.inject});
    return out;
}

// ---- token sequence builders ----

// "<prefix> <answer> . <eos>" as token ids.
inline std::vector<int> doc_tokens(const Vocabulary& v, const std::string& prefix,
                                   const std::string& answer) {
    std::vector<int> ids = v.encode(prefix + " " + answer + " .");
    ids.push_back(Vocabulary::kEos);
    return ids;
}

// "Q: <question> A: <answer> <eos>" as token ids.
inline std::vector<int> qa_tokens(const Vocabulary& v, const std::string& question,
                                  const std::string& answer) {
    std::vector<int> ids = v.encode("Q: " + question + " A: " + answer);
    ids.push_back(Vocabulary::kEos);
    return ids;
}

// "Q: <question> A:" as token ids (the decode prompt).
inline std::vector<int> prompt_tokens(const Vocabulary& v, const std::string& question) {
    return v.encode("Q: " + question + " A:");
}

// ---- serialization (one structured-text record per line) ----

inline nlohmann::json example_to_json(const KnowledgeExample& ex) {
    nlohmann::json j;
    j["fact"] = {{"subject", ex.fact.subject},
                 {"relation", ex.fact.relation},
                 {"object", ex.fact.object}};
    j["x"] = ex.x;
    j["y"] = ex.y;
    j["paraphrases"] = ex.paraphrases;
    j["question"] = ex.question;
    j["answer"] = ex.answer;
    j["gold_mask"] = ex.gold_mask;
    return j;
}

inline KnowledgeExample example_from_json(const nlohmann::json& j) {
    KnowledgeExample ex;
    ex.fact.subject = j.at("fact").at("subject").get<std::string>();
    ex.fact.relation = j.at("fact").at("relation").get<std::string>();
    ex.fact.object = j.at("fact").at("object").get<std::string>();
    ex.x = j.at("x").get<std::string>();
    ex.y = j.at("y").get<std::string>();
    ex.paraphrases = j.at("paraphrases").get<std::vector<std::string>>();
    ex.question = j.at("question").get<std::string>();
    ex.answer = j.at("answer").get<std::string>();
    ex.gold_mask = j.at("gold_mask").get<std::vector<int>>();
    return ex;
}

inline void save_split(const CorpusSplit& split, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("corpus: cannot write " + path);
    for (const auto& ex : split.examples) f << example_to_json(ex).dump() << '\n';
}

inline CorpusSplit load_split(const std::string& role, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("corpus: cannot read " + path);
    CorpusSplit split{role, {}};
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        split.examples.push_back(example_from_json(nlohmann::json::parse(line)));
    }
    return split;
}

} // namespace lapael

#endif
