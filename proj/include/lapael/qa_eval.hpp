#ifndef LAPAEL_QA_EVAL_HPP
#define LAPAEL_QA_EVAL_HPP

// Scores injected knowledge: greedy-decode an answer for each question and
// compare against gold with EM / token recall / token F1 after SQuAD-style
// normalization (lowercase, punctuation stripped, articles dropped).

#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapael/corpus.hpp"
#include "lapael/model.hpp"
#include "lapael/vocab.hpp"

namespace lapael {

inline std::string normalize(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::ispunct(uc)) continue;
        cleaned += static_cast<char>(std::tolower(uc));
    }
    std::string out;
    for (const auto& w : Vocabulary::split_words(cleaned)) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

struct PairScore {
    double em = 0.0, recall = 0.0, f1 = 0.0; // per question, in [0,1]
};

// Token-overlap scoring on normalized whitespace tokens (multiset overlap).
inline PairScore score_pair(const std::string& prediction, const std::string& gold) {
    const std::string p = normalize(prediction);
    const std::string g = normalize(gold);
    PairScore s;
    s.em = p == g ? 1.0 : 0.0;
    const auto pt = Vocabulary::split_words(p);
    const auto gt = Vocabulary::split_words(g);
    if (pt.empty() && gt.empty()) {
        s.recall = s.f1 = 1.0;
        return s;
    }
    if (pt.empty() || gt.empty()) return s;
    std::map<std::string, int> gold_counts;
    for (const auto& w : gt) ++gold_counts[w];
    int overlap = 0;
    for (const auto& w : pt) {
        auto it = gold_counts.find(w);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return s;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pt.size());
    s.recall = static_cast<double>(overlap) / static_cast<double>(gt.size());
    s.f1 = 2.0 * precision * s.recall / (precision + s.recall);
    return s;
}

struct Metrics {
    double em = 0.0, recall = 0.0, f1 = 0.0; // means over questions, in [0,100]
};

struct QaRow {
    std::string question, gold, prediction;
    PairScore score;
};

struct EvalResult {
    Metrics metrics;
    std::vector<QaRow> rows;
};

struct EvalOptions {
    int few_shot_k = 0; // 0: zero-shot
    int max_new_tokens = 8;
};

// Greedy-decodes "Q: {q} A:" (optionally with k exemplars prepended) for each
// question, stopping at <eos> or max_new_tokens, and averages the scores.
inline EvalResult evaluate(const TransformerParams& theta, const Vocabulary& vocab,
                           const std::vector<KnowledgeExample>& qa_split,
                           const std::vector<KnowledgeExample>& exemplar_pool = {},
                           const EvalOptions& opts = {}) {
    if (opts.few_shot_k < 0 ||
        opts.few_shot_k > static_cast<int>(exemplar_pool.size()))
        throw std::invalid_argument("evaluate: not enough held-out exemplars");
    std::vector<int> shot_prefix;
    for (int i = 0; i < opts.few_shot_k; ++i) {
        const auto& ex = exemplar_pool[static_cast<std::size_t>(i)];
        for (int id : qa_tokens(vocab, ex.question, ex.answer)) shot_prefix.push_back(id);
    }
    EvalResult result;
    for (const auto& ex : qa_split) {
        std::vector<int> prompt = shot_prefix;
        for (int id : prompt_tokens(vocab, ex.question)) prompt.push_back(id);
        if (static_cast<int>(prompt.size()) > theta.config.max_seq_len)
            throw std::invalid_argument("evaluate: prompt exceeds max_seq_len");
        const std::vector<int> decoded =
            generate_greedy(prompt, theta, opts.max_new_tokens, Vocabulary::kEos);
        QaRow row;
        row.question = ex.question;
        row.gold = ex.answer;
        row.prediction = vocab.decode(decoded);
        row.score = score_pair(row.prediction, row.gold);
        result.metrics.em += row.score.em;
        result.metrics.recall += row.score.recall;
        result.metrics.f1 += row.score.f1;
        result.rows.push_back(std::move(row));
    }
    if (!result.rows.empty()) {
        const double inv = 100.0 / static_cast<double>(result.rows.size());
        result.metrics.em *= inv;
        result.metrics.recall *= inv;
        result.metrics.f1 *= inv;
    }
    return result;
}

// RunReport: metrics plus provenance, one structured-text file per run.
inline void write_run_report(const std::string& path, const std::string& method,
                             std::uint64_t seed, const std::string& config_digest,
                             const EvalResult& result) {
    nlohmann::json j;
    j["method"] = method;
    j["seed"] = seed;
    j["config_digest"] = config_digest;
    j["normalization"] = "lowercase, strip punctuation, drop articles, collapse whitespace";
    j["em"] = result.metrics.em;
    j["recall"] = result.metrics.recall;
    j["f1"] = result.metrics.f1;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        rows.push_back({{"question", r.question},
                        {"gold", r.gold},
                        {"prediction", r.prediction},
                        {"em", r.score.em},
                        {"recall", r.score.recall},
                        {"f1", r.score.f1}});
    }
    j["rows"] = rows;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("run report: cannot write " + path);
    f << j.dump(2) << '\n';
}

} // namespace lapael

#endif
