#ifndef LAPAEL_CONFIG_HPP
#define LAPAEL_CONFIG_HPP

// Flat key=value configuration with section prefixes (model.d_model=64).
// Every key must be consumed by the run configuration; unknown keys are
// errors so experiment provenance stays diff-able and typo-proof.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapael/corpus.hpp"
#include "lapael/finetune.hpp"
#include "lapael/model.hpp"
#include "lapael/paraphraser_train.hpp"
#include "lapael/rng.hpp"

namespace lapael {

class KeyValueConfig {
public:
    static KeyValueConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
        KeyValueConfig cfg;
        cfg.raw_ = text;
        std::istringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                            ": expected key=value, got '" + line + "'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
            if (!cfg.kv_.emplace(key, value).second)
                throw std::invalid_argument(origin + ": duplicate key '" + key + "'");
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("config: cannot read " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse_text(ss.str(), path);
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }
    long get_long(const std::string& key, long fallback) {
        const std::string s = get_string(key, std::to_string(fallback));
        return parse_number<long>(key, s);
    }
    int get_int(const std::string& key, int fallback) {
        return static_cast<int>(get_long(key, fallback));
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        const std::string s = get_string(key, std::to_string(fallback));
        return parse_number<std::uint64_t>(key, s);
    }
    double get_double(const std::string& key, double fallback) {
        std::ostringstream def;
        def << fallback;
        const std::string s = get_string(key, def.str());
        return parse_number<double>(key, s);
    }
    bool get_bool(const std::string& key, bool fallback) {
        const std::string s = get_string(key, fallback ? "true" : "false");
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + s + "'");
    }
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) {
        consumed_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<int> out;
        std::istringstream ss(it->second);
        std::string part;
        while (std::getline(ss, part, ','))
            out.push_back(parse_number<int>(key, trim(part)));
        return out;
    }

    // Rejects keys the run configuration never consumed.
    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!consumed_.count(k))
                throw std::invalid_argument("config: unknown key '" + k + "'");
    }

    const std::string& raw_text() const { return raw_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    template <class T>
    static T parse_number(const std::string& key, const std::string& s) {
        std::istringstream ss(s);
        T v{};
        ss >> v;
        if (!ss || !ss.eof())
            throw std::invalid_argument("config: key '" + key + "' has bad numeric value '" + s +
                                        "'");
        return v;
    }

    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
    std::string raw_;
};

// Full experiment configuration for the pipeline commands.
struct RunConfig {
    ModelConfig model;       // vocab_size filled from the data at load time
    CorpusConfig corpus;
    int paraphraser_start_block = 0;
    int paraphraser_count = 3;
    double paraphraser_temperature = 1.0;
    ParaphraserTrainConfig paratrain;
    FinetuneConfig finetune;
    double finetune_lr = 1e-3; // desk-scale default; the 7B-scale 5e-5 cannot move a d=64 model
    int pretrain_max_epochs = 40;
    double pretrain_lr = 1e-3;
    double pretrain_nll_threshold = 1.5;
    int pretrain_decl_forms = 5;      // declarative renderings per background fact
    double pretrain_qa_fraction = 0.6; // background facts whose QA enters pretraining
    int eval_few_shot = 0;
    int eval_max_new = 8;
    int compare_seeds = 3;
    std::vector<int> sweep_counts{2, 5};
    int sweep_epochs = 3;       // short-schedule sweep, decaying every epoch
    int plus_para_count = 10;   // paraphrases per doc for the +para table rows
    std::uint64_t seed = 0;

    std::vector<int> attached_blocks() const {
        std::vector<int> out;
        for (int i = 0; i < paraphraser_count; ++i) out.push_back(paraphraser_start_block + i);
        return out;
    }

    void validate() const {
        if (paraphraser_start_block < 0 || paraphraser_count < 1 ||
            paraphraser_start_block + paraphraser_count > model.n_layers)
            throw std::invalid_argument(
                "config: paraphraser placement must satisfy start_block + count <= n_layers");
        paratrain.validate();
    }

    static RunConfig from_kv(KeyValueConfig& kv) {
        RunConfig rc;
        rc.model.d_model = kv.get_int("model.d_model", rc.model.d_model);
        rc.model.n_layers = kv.get_int("model.n_layers", rc.model.n_layers);
        rc.model.n_heads = kv.get_int("model.n_heads", rc.model.n_heads);
        rc.model.d_ff = kv.get_int("model.d_ff", rc.model.d_ff);
        rc.model.max_seq_len = kv.get_int("model.max_seq_len", rc.model.max_seq_len);
        rc.model.tie_embeddings = kv.get_bool("model.tie_embeddings", rc.model.tie_embeddings);

        rc.corpus.background_facts = kv.get_int("corpus.background_facts", rc.corpus.background_facts);
        rc.corpus.train_facts = kv.get_int("corpus.train_facts", rc.corpus.train_facts);
        rc.corpus.inject_facts = kv.get_int("corpus.inject_facts", rc.corpus.inject_facts);
        rc.corpus.paraphrases_per_fact =
            kv.get_int("corpus.paraphrases_per_fact", rc.corpus.paraphrases_per_fact);
        rc.corpus.background_entity_pool =
            kv.get_int("corpus.background_entity_pool", rc.corpus.background_entity_pool);
        rc.corpus.train_entity_pool =
            kv.get_int("corpus.train_entity_pool", rc.corpus.train_entity_pool);
        rc.corpus.inject_entity_pool =
            kv.get_int("corpus.inject_entity_pool", rc.corpus.inject_entity_pool);

        rc.paraphraser_start_block = kv.get_int("paraphraser.start_block", rc.paraphraser_start_block);
        rc.paraphraser_count = kv.get_int("paraphraser.count", rc.paraphraser_count);
        rc.paraphraser_temperature =
            kv.get_double("paraphraser.temperature", rc.paraphraser_temperature);

        rc.paratrain.latent_samples = kv.get_int("paratrain.latent_samples", rc.paratrain.latent_samples);
        rc.paratrain.paraphrase_count =
            kv.get_int("paratrain.paraphrase_count", rc.paratrain.paraphrase_count);
        rc.paratrain.mask_ratio = kv.get_double("paratrain.mask_ratio", rc.paratrain.mask_ratio);
        rc.paratrain.epochs = kv.get_int("paratrain.epochs", rc.paratrain.epochs);
        rc.paratrain.lr = kv.get_double("paratrain.lr", rc.paratrain.lr);
        rc.paratrain.lr_floor_frac = kv.get_double("paratrain.lr_floor_frac", rc.paratrain.lr_floor_frac);
        rc.paratrain.sigma_floor = kv.get_double("paratrain.sigma_floor", rc.paratrain.sigma_floor);

        rc.finetune.epochs = kv.get_int("finetune.epochs", rc.finetune.epochs);
        rc.finetune_lr = kv.get_double("finetune.lr", rc.finetune_lr);
        rc.finetune.lr_decay_factor = kv.get_double("finetune.lr_decay_factor", rc.finetune.lr_decay_factor);
        rc.finetune.lr_decay_every = kv.get_int("finetune.lr_decay_every", rc.finetune.lr_decay_every);
        rc.finetune.noise_samples = kv.get_int("finetune.noise_samples", rc.finetune.noise_samples);
        rc.finetune.trainable_subset =
            subset_from_string(kv.get_string("finetune.trainable_subset", "all"));
        rc.finetune.neftune_alpha = kv.get_double("finetune.neftune_alpha", rc.finetune.neftune_alpha);

        rc.pretrain_max_epochs = kv.get_int("pretrain.max_epochs", rc.pretrain_max_epochs);
        rc.pretrain_lr = kv.get_double("pretrain.lr", rc.pretrain_lr);
        rc.pretrain_nll_threshold =
            kv.get_double("pretrain.nll_threshold", rc.pretrain_nll_threshold);
        rc.pretrain_decl_forms = kv.get_int("pretrain.decl_forms", rc.pretrain_decl_forms);
        rc.pretrain_qa_fraction = kv.get_double("pretrain.qa_fraction", rc.pretrain_qa_fraction);

        rc.eval_few_shot = kv.get_int("eval.few_shot", rc.eval_few_shot);
        rc.eval_max_new = kv.get_int("eval.max_new_tokens", rc.eval_max_new);

        rc.compare_seeds = kv.get_int("compare.seeds", rc.compare_seeds);
        rc.sweep_counts = kv.get_int_list("compare.sweep_counts", rc.sweep_counts);
        rc.sweep_epochs = kv.get_int("compare.sweep_epochs", rc.sweep_epochs);
        rc.plus_para_count = kv.get_int("compare.plus_para_count", rc.plus_para_count);

        rc.seed = kv.get_u64("seed", rc.seed);
        kv.reject_unknown();
        rc.finetune.lr = rc.finetune_lr;
        rc.validate();
        return rc;
    }
};

inline std::string config_digest(const std::string& raw_text, std::uint64_t seed) {
    std::uint64_t h = fnv1a64(raw_text) ^ (seed * 0x9e3779b97f4a7c15ULL);
    std::ostringstream ss;
    ss << std::hex << h;
    return ss.str();
}

} // namespace lapael

#endif
