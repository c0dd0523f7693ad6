#ifndef LAPAEL_RUNNER_HPP
#define LAPAEL_RUNNER_HPP

// Pipeline commands behind the CLI: data generation, background pre-training,
// paraphraser training, knowledge injection by each method, QA evaluation,
// and the multi-seed comparison experiment. Every command is a pure function
// of (config, seed, input files); reruns are byte-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lapael/checkpoint.hpp"
#include "lapael/config.hpp"
#include "lapael/corpus.hpp"
#include "lapael/finetune.hpp"
#include "lapael/model.hpp"
#include "lapael/optim.hpp"
#include "lapael/paraphraser.hpp"
#include "lapael/paraphraser_train.hpp"
#include "lapael/qa_eval.hpp"
#include "lapael/rng.hpp"

namespace lapael {

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace paths {
inline std::string split_file(const std::string& out, const std::string& role) {
    return out + "/" + role + ".jsonl";
}
inline std::string vocab_file(const std::string& out) { return out + "/vocab.txt"; }
inline std::string theta0(const std::string& out) { return out + "/theta0.ckpt"; }
inline std::string phi(const std::string& out, NoiseComposition comp) {
    return comp == NoiseComposition::multiplicative ? out + "/phi.ckpt"
                                                    : out + "/phi_additive.ckpt";
}
inline std::string method_token(std::string method) {
    for (auto& c : method)
        if (c == '+') c = '_';
    return method;
}
inline std::string theta_method(const std::string& out, const std::string& method) {
    return out + "/theta_" + method_token(method) + ".ckpt";
}
} // namespace paths

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << header << '\n';
    char buf[64];
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
            f << (i ? "," : "") << buf;
        }
        f << '\n';
    }
}

// ---- in-memory pipeline pieces (shared by the file commands and compare) ----

struct PipelineData {
    GeneratedCorpus corpus;
    std::vector<std::vector<int>> pretrain_seqs;
    std::vector<std::vector<int>> inject_docs;
    std::vector<std::vector<std::string>> inject_para_prefixes;
    std::vector<ParaphraserTrainExample> train_examples;
    std::vector<KnowledgeExample> bg_qa_covered; // background facts with QA in pretraining
    std::vector<KnowledgeExample> bg_qa_heldout; // declaratives only
};

inline bool background_qa_covered(const RunConfig& rc, std::size_t index, std::size_t) {
    return static_cast<int>(index % 100) <
           static_cast<int>(rc.pretrain_qa_fraction * 100.0 + 0.5);
}

namespace detail {

inline void derive_pipeline_views(PipelineData& data, const RunConfig& rc) {
    const Vocabulary& vocab = data.corpus.vocab;
    // Background pre-training: several declarative renderings of every fact,
    // and QA pairs for only a fraction of them. Partial QA coverage forces a
    // fact-retrieval circuit that generalizes to facts whose QA was never
    // seen; held-out background QA measures exactly that before any
    // injection happens.
    const auto& bg = data.corpus.background.examples;
    for (std::size_t i = 0; i < bg.size(); ++i) {
        const auto& ex = bg[i];
        data.pretrain_seqs.push_back(doc_tokens(vocab, ex.x, ex.y));
        for (int p = 1; p < rc.pretrain_decl_forms &&
                        p < static_cast<int>(ex.paraphrases.size());
             ++p)
            data.pretrain_seqs.push_back(
                doc_tokens(vocab, ex.paraphrases[static_cast<std::size_t>(p)], ex.y));
        if (background_qa_covered(rc, i, bg.size())) {
            data.pretrain_seqs.push_back(qa_tokens(vocab, ex.question, ex.answer));
            data.bg_qa_covered.push_back(ex);
        } else {
            data.bg_qa_heldout.push_back(ex);
        }
    }
    for (const auto& ex : data.corpus.inject.examples) {
        data.inject_docs.push_back(doc_tokens(vocab, ex.x, ex.y));
        data.inject_para_prefixes.push_back(ex.paraphrases);
    }
    for (const auto& ex : data.corpus.train.examples) {
        ParaphraserTrainExample t;
        t.prefix = vocab.encode(ex.x);
        for (const auto& p : ex.paraphrases) t.paraphrase_prefixes.push_back(vocab.encode(p));
        for (int m : ex.gold_mask) t.gold_mask.push_back(static_cast<double>(m));
        data.train_examples.push_back(std::move(t));
    }
    for (const auto& seq : data.pretrain_seqs)
        if (static_cast<int>(seq.size()) > rc.model.max_seq_len)
            throw std::invalid_argument("corpus sequence exceeds max_seq_len");
}

} // namespace detail

inline PipelineData build_pipeline_data(const RunConfig& rc) {
    PipelineData data;
    CorpusConfig ccfg = rc.corpus;
    ccfg.seed = rc.seed;
    data.corpus = generate_corpus(ccfg);
    detail::derive_pipeline_views(data, rc);
    return data;
}

inline PipelineData load_pipeline_data(const RunConfig& rc, const std::string& out) {
    PipelineData data;
    data.corpus.vocab = Vocabulary::load(paths::vocab_file(out));
    data.corpus.background = load_split("background", paths::split_file(out, "background"));
    data.corpus.train = load_split("train", paths::split_file(out, "train"));
    data.corpus.inject = load_split("inject", paths::split_file(out, "inject"));
    data.corpus.qa = load_split("qa", paths::split_file(out, "qa"));
    detail::derive_pipeline_views(data, rc);
    return data;
}

struct PretrainResult {
    TransformerParams theta;
    std::vector<std::vector<double>> curve; // epoch, train nll, eval nll
    double final_eval_nll = 0.0;
};

inline PretrainResult run_pretrain(const RunConfig& rc, const PipelineData& data) {
    ModelConfig mcfg = rc.model;
    mcfg.vocab_size = data.corpus.vocab.size();
    Rng init_rng = derive_rng(rc.seed, "pretrain.init");
    PretrainResult result{TransformerParams::init(mcfg, init_rng), {}, 0.0};
    TransformerParams& theta = result.theta;

    std::vector<Tensor> trainable;
    for (auto& [name, t] : theta.named_params()) trainable.push_back(t.set_requires_grad(true));
    AdamW opt(trainable);
    Rng data_rng = derive_rng(rc.seed, "pretrain.data");

    auto eval_nll = [&] {
        double acc = 0.0;
        for (const auto& seq : data.pretrain_seqs) acc += sequence_nll(seq, theta);
        return acc / static_cast<double>(data.pretrain_seqs.size());
    };

    for (int epoch = 0; epoch < rc.pretrain_max_epochs; ++epoch) {
        std::vector<std::size_t> order(data.pretrain_seqs.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        data_rng.shuffle(order);
        double train_acc = 0.0;
        for (std::size_t idx : order) {
            const auto& seq = data.pretrain_seqs[idx];
            Tape tp;
            ForwardResult r =
                forward(tp, std::vector<int>(seq.begin(), seq.end() - 1), theta);
            Tensor loss = nll_loss(tp, r.logits, std::vector<int>(seq.begin() + 1, seq.end()));
            if (!std::isfinite(loss.item()))
                throw DivergenceError("pretraining diverged (non-finite loss) at epoch " +
                                      std::to_string(epoch));
            tp.backward(loss);
            opt.step(rc.pretrain_lr);
            train_acc += loss.item();
        }
        const double train_nll = train_acc / static_cast<double>(order.size());
        result.final_eval_nll = eval_nll();
        result.curve.push_back({static_cast<double>(epoch), train_nll, result.final_eval_nll});
        if (result.final_eval_nll < rc.pretrain_nll_threshold) break;
    }
    return result;
}

inline ParaphraserParams run_paraphraser_training(const RunConfig& rc, const PipelineData& data,
                                                  const TransformerParams& theta,
                                                  NoiseComposition comp,
                                                  ParaphraserTrainOutcome* outcome_out = nullptr) {
    Rng init_rng = derive_rng(rc.seed, "paraphraser.init");
    ParaphraserParams phi = ParaphraserParams::init(rc.model.d_model, rc.attached_blocks(),
                                                    init_rng, rc.paraphraser_temperature, comp);
    ParaphraserTrainOutcome outcome =
        train_paraphrasers(theta, phi, data.train_examples, rc.paratrain, rc.seed);
    if (outcome_out) *outcome_out = outcome;
    return phi;
}

// One knowledge-injection run. `para_count` >= 0 augments the doc set with
// that many paraphrased documents per fact; `epochs_override` switches to the
// short sweep schedule (decay every epoch).
inline TransformerParams run_method(const RunConfig& rc, const PipelineData& data,
                                    const TransformerParams& theta0,
                                    const ParaphraserParams* phi, const std::string& method,
                                    int para_count = 0, int epochs_override = 0,
                                    FinetuneOutcome* outcome_out = nullptr) {
    TransformerParams theta = theta0.clone();
    FinetuneConfig fcfg = rc.finetune;
    fcfg.seed = rc.seed;
    fcfg.gaussian_blocks = rc.attached_blocks();
    if (epochs_override > 0) {
        fcfg.epochs = epochs_override;
        fcfg.lr_decay_every = 1;
    }

    std::vector<std::vector<std::vector<int>>> para_docs;
    if (para_count > 0) {
        for (std::size_t i = 0; i < data.inject_docs.size(); ++i) {
            std::vector<std::vector<int>> set;
            const auto& ex = data.corpus.inject.examples[i];
            if (para_count > static_cast<int>(ex.paraphrases.size()))
                throw std::invalid_argument("paraphrase count exceeds available paraphrases");
            for (int k = 0; k < para_count; ++k)
                set.push_back(doc_tokens(data.corpus.vocab, ex.paraphrases[static_cast<std::size_t>(k)],
                                         ex.y));
            para_docs.push_back(std::move(set));
        }
    } else {
        para_docs.assign(data.inject_docs.size(), {});
    }

    FinetuneOutcome out;
    if (method == "plain") {
        out = para_count > 0
                  ? finetune_plus_paraphrases(theta, data.inject_docs, para_docs, fcfg)
                  : finetune_plain(theta, data.inject_docs, fcfg);
    } else if (method == "lapael" || method == "learnable-additive") {
        if (!phi) throw std::invalid_argument("method '" + method + "' needs trained paraphrasers");
        out = para_count > 0
                  ? finetune_plus_paraphrases(theta, data.inject_docs, para_docs, fcfg, phi)
                  : finetune_lapael(theta, *phi, data.inject_docs, fcfg);
    } else if (method == "neftune" || method == "gaussian") {
        out = finetune_noise_baseline(theta, data.inject_docs, fcfg, method);
    } else if (method == "seq") {
        // plain fine-tune on the paraphrased train-split documents first
        std::vector<std::vector<int>> stage1;
        for (const auto& ex : data.corpus.train.examples) {
            stage1.push_back(doc_tokens(data.corpus.vocab, ex.x, ex.y));
            for (const auto& p : ex.paraphrases)
                stage1.push_back(doc_tokens(data.corpus.vocab, p, ex.y));
        }
        finetune_plain(theta, stage1, fcfg);
        out = finetune_plain(theta, data.inject_docs, fcfg);
    } else {
        throw std::invalid_argument("unknown fine-tuning method '" + method + "'");
    }
    if (outcome_out) *outcome_out = out;
    return theta;
}

inline EvalResult run_eval(const RunConfig& rc, const PipelineData& data,
                           const TransformerParams& theta) {
    EvalOptions opts;
    opts.few_shot_k = rc.eval_few_shot;
    opts.max_new_tokens = rc.eval_max_new;
    return evaluate(theta, data.corpus.vocab, data.corpus.qa.examples, data.bg_qa_covered,
                    opts);
}

// ---- file-based commands ----

inline void cmd_gen_data(const RunConfig& rc, const std::string& out) {
    ensure_dir(out);
    CorpusConfig ccfg = rc.corpus;
    ccfg.seed = rc.seed;
    GeneratedCorpus corpus = generate_corpus(ccfg);
    save_split(corpus.background, paths::split_file(out, "background"));
    save_split(corpus.train, paths::split_file(out, "train"));
    save_split(corpus.inject, paths::split_file(out, "inject"));
    save_split(corpus.qa, paths::split_file(out, "qa"));
    corpus.vocab.save(paths::vocab_file(out));
}

inline double cmd_pretrain(const RunConfig& rc, const std::string& out) {
    PipelineData data = load_pipeline_data(rc, out);
    PretrainResult result = run_pretrain(rc, data);
    Checkpoint ck = checkpoint_from_model(result.theta);
    ck.meta["seed"] = std::to_string(rc.seed);
    ck.save(paths::theta0(out));
    write_csv(out + "/pretrain_curve.csv", "epoch,train_nll,eval_nll", result.curve);
    return result.final_eval_nll;
}

inline void cmd_train_paraphraser(const RunConfig& rc, const std::string& out,
                                  NoiseComposition comp = NoiseComposition::multiplicative) {
    PipelineData data = load_pipeline_data(rc, out);
    TransformerParams theta = model_from_checkpoint(Checkpoint::load(paths::theta0(out)));
    ParaphraserTrainOutcome outcome;
    ParaphraserParams phi = run_paraphraser_training(rc, data, theta, comp, &outcome);

    Checkpoint ck;
    add_paraphraser(ck, phi, rc.model.d_model);
    ck.meta["seed"] = std::to_string(rc.seed);
    ck.save(paths::phi(out, comp));
    std::vector<std::vector<double>> rows;
    rows.reserve(outcome.curve.size());
    for (const auto& r : outcome.curve) rows.push_back({r[0], r[1], r[2], r[3]});
    write_csv(out + "/paraphraser_curve.csv", "step,kl_loss,mask_loss,mean_mask", rows);

    MaskStats stats = mask_statistics(theta, phi, data.train_examples);
    nlohmann::json j;
    j["first_epoch_loss"] = outcome.first_epoch_loss;
    j["last_epoch_loss"] = outcome.last_epoch_loss;
    j["mean_mask"] = stats.mean_all;
    j["mean_mask_entity"] = stats.mean_entity;
    j["mean_mask_other"] = stats.mean_other;
    std::ofstream f(out + "/paraphraser_stats.json", std::ios::binary);
    f << j.dump(2) << '\n';
}

inline void cmd_finetune(const RunConfig& rc, const std::string& out, const std::string& method) {
    PipelineData data = load_pipeline_data(rc, out);
    TransformerParams theta0 = model_from_checkpoint(Checkpoint::load(paths::theta0(out)));

    std::string base = method;
    int para_count = 0;
    if (base == "plus-paraphrases") {
        base = "plain";
        para_count = rc.plus_para_count;
    } else if (base == "lapael+paraphrases") {
        base = "lapael";
        para_count = rc.plus_para_count;
    }
    std::optional<ParaphraserParams> phi;
    if (base == "lapael")
        phi = paraphraser_from_checkpoint(Checkpoint::load(paths::phi(out, NoiseComposition::multiplicative)));
    if (base == "learnable-additive")
        phi = paraphraser_from_checkpoint(Checkpoint::load(paths::phi(out, NoiseComposition::additive)));

    FinetuneOutcome outcome;
    TransformerParams theta = run_method(rc, data, theta0, phi ? &*phi : nullptr, base,
                                         para_count, 0, &outcome);
    Checkpoint ck = checkpoint_from_model(theta);
    ck.meta["seed"] = std::to_string(rc.seed);
    ck.meta["method"] = method;
    ck.save(paths::theta_method(out, method));
    std::vector<std::vector<double>> rows;
    for (std::size_t e = 0; e < outcome.per_epoch_loss.size(); ++e)
        rows.push_back({static_cast<double>(e), outcome.per_epoch_loss[e]});
    write_csv(out + "/finetune_curve_" + paths::method_token(method) + ".csv", "epoch,nll", rows);
}

inline Metrics cmd_eval(const RunConfig& rc, const std::string& out,
                        const std::string& checkpoint_path, const std::string& report_path,
                        const std::string& method_label, const std::string& digest) {
    PipelineData data = load_pipeline_data(rc, out);
    TransformerParams theta = model_from_checkpoint(Checkpoint::load(checkpoint_path));
    EvalResult result = run_eval(rc, data, theta);
    write_run_report(report_path, method_label, rc.seed, digest, result);
    return result.metrics;
}

// ---- the comparison experiment ----

struct CompareRow {
    std::uint64_t seed = 0;
    std::string method;
    Metrics metrics;
};

struct SweepRow {
    std::uint64_t seed = 0;
    int count = 0;
    std::string method; // plain | lapael
    Metrics metrics;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::vector<CompareRow> rows;
    std::vector<SweepRow> sweep;
    double pretrain_nll = 0.0;
};

inline SeedOutcome run_compare_seed(RunConfig rc, std::uint64_t seed) {
    rc.seed = seed;
    SeedOutcome out;
    out.seed = seed;
    PipelineData data = build_pipeline_data(rc);
    PretrainResult pre = run_pretrain(rc, data);
    out.pretrain_nll = pre.final_eval_nll;
    ParaphraserParams phi =
        run_paraphraser_training(rc, data, pre.theta, NoiseComposition::multiplicative);

    auto add_row = [&](const std::string& method, const TransformerParams& theta) {
        out.rows.push_back({seed, method, run_eval(rc, data, theta).metrics});
    };
    add_row("no-injection", pre.theta);
    add_row("plain", run_method(rc, data, pre.theta, nullptr, "plain"));
    add_row("neftune", run_method(rc, data, pre.theta, nullptr, "neftune"));
    add_row("gaussian", run_method(rc, data, pre.theta, nullptr, "gaussian"));
    add_row("lapael", run_method(rc, data, pre.theta, &phi, "lapael"));
    add_row("plain+paraphrases",
            run_method(rc, data, pre.theta, nullptr, "plain", rc.plus_para_count));
    add_row("lapael+paraphrases",
            run_method(rc, data, pre.theta, &phi, "lapael", rc.plus_para_count));

    // Paraphrase-count sweep on the short schedule, counts {0} + configured.
    std::vector<int> counts{0};
    for (int c : rc.sweep_counts) counts.push_back(c);
    for (int c : counts) {
        for (const std::string method : {"plain", "lapael"}) {
            TransformerParams theta =
                run_method(rc, data, pre.theta, method == "lapael" ? &phi : nullptr, method, c,
                           rc.sweep_epochs);
            out.sweep.push_back({seed, c, method, run_eval(rc, data, theta).metrics});
        }
    }
    return out;
}

struct CompareReport {
    std::vector<SeedOutcome> seeds;
    nlohmann::json json;
    std::string table;
};

namespace detail {

struct MeanStd {
    double mean = 0.0, sd = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd ms;
    if (xs.empty()) return ms;
    for (double x : xs) ms.mean += x;
    ms.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += (x - ms.mean) * (x - ms.mean);
        ms.sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return ms;
}

} // namespace detail

inline CompareReport build_compare_report(const RunConfig& rc,
                                          std::vector<SeedOutcome> outcomes,
                                          const std::string& digest) {
    CompareReport rep;
    rep.seeds = std::move(outcomes);

    const std::vector<std::string> methods{"no-injection",       "plain",  "neftune",
                                           "gaussian",           "lapael", "plain+paraphrases",
                                           "lapael+paraphrases"};
    auto method_metric = [&](const std::string& m, auto proj) {
        std::vector<double> xs;
        for (const auto& so : rep.seeds)
            for (const auto& row : so.rows)
                if (row.method == m) xs.push_back(proj(row.metrics));
        return xs;
    };

    nlohmann::json j;
    j["config_digest"] = digest;
    j["seeds"] = nlohmann::json::array();
    for (const auto& so : rep.seeds) j["seeds"].push_back(so.seed);

    nlohmann::json rows = nlohmann::json::array();
    for (const auto& so : rep.seeds)
        for (const auto& row : so.rows)
            rows.push_back({{"seed", row.seed},
                            {"method", row.method},
                            {"em", row.metrics.em},
                            {"recall", row.metrics.recall},
                            {"f1", row.metrics.f1}});
    j["rows"] = rows;

    nlohmann::json summary;
    for (const auto& m : methods) {
        const auto em = detail::mean_std(method_metric(m, [](const Metrics& x) { return x.em; }));
        const auto rec =
            detail::mean_std(method_metric(m, [](const Metrics& x) { return x.recall; }));
        const auto f1 = detail::mean_std(method_metric(m, [](const Metrics& x) { return x.f1; }));
        summary[m] = {{"em_mean", em.mean},   {"em_std", em.sd},   {"recall_mean", rec.mean},
                      {"recall_std", rec.sd}, {"f1_mean", f1.mean}, {"f1_std", f1.sd}};
    }
    j["summary"] = summary;

    // sweep: per (count, method) seed rows and means
    nlohmann::json sweep_rows = nlohmann::json::array();
    std::map<std::pair<int, std::string>, std::vector<double>> sweep_em;
    for (const auto& so : rep.seeds)
        for (const auto& row : so.sweep) {
            sweep_rows.push_back({{"seed", row.seed},
                                  {"count", row.count},
                                  {"method", row.method},
                                  {"em", row.metrics.em},
                                  {"recall", row.metrics.recall},
                                  {"f1", row.metrics.f1}});
            sweep_em[{row.count, row.method}].push_back(row.metrics.em);
        }
    j["sweep_rows"] = sweep_rows;
    nlohmann::json sweep_summary = nlohmann::json::array();
    std::vector<int> counts{0};
    for (int c : rc.sweep_counts) counts.push_back(c);
    for (int c : counts)
        for (const std::string m : {"plain", "lapael"}) {
            const auto ms = detail::mean_std(sweep_em[{c, m}]);
            sweep_summary.push_back(
                {{"count", c}, {"method", m}, {"em_mean", ms.mean}, {"em_std", ms.sd}});
        }
    j["sweep_summary"] = sweep_summary;

    // ordering assertions, flagged pass/fail
    auto em_mean = [&](const std::string& m) {
        return detail::mean_std(method_metric(m, [](const Metrics& x) { return x.em; })).mean;
    };
    nlohmann::json flags;
    flags["no_injection_below_plain"] = em_mean("no-injection") < em_mean("plain");
    flags["lapael_at_least_plain"] = em_mean("lapael") >= em_mean("plain");
    flags["lapael_at_least_neftune"] = em_mean("lapael") >= em_mean("neftune");
    int lapael_wins = 0;
    for (const auto& so : rep.seeds) {
        double plain_em = 0.0, lapael_em = 0.0;
        for (const auto& row : so.rows) {
            if (row.method == "plain") plain_em = row.metrics.em;
            if (row.method == "lapael") lapael_em = row.metrics.em;
        }
        lapael_wins += lapael_em > plain_em;
    }
    flags["lapael_beats_plain_seed_count"] = lapael_wins;
    bool plain_nondecreasing = true;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        const auto prev = detail::mean_std(sweep_em[{counts[i - 1], "plain"}]);
        const auto cur = detail::mean_std(sweep_em[{counts[i], "plain"}]);
        plain_nondecreasing = plain_nondecreasing && cur.mean >= prev.mean - prev.sd;
    }
    flags["sweep_plain_em_nondecreasing_within_std"] = plain_nondecreasing;
    bool lapael_dominates = true;
    for (int c : counts) {
        lapael_dominates = lapael_dominates && detail::mean_std(sweep_em[{c, "lapael"}]).mean >=
                                                   detail::mean_std(sweep_em[{c, "plain"}]).mean;
    }
    flags["sweep_lapael_at_least_plain_every_count"] = lapael_dominates;
    j["flags"] = flags;
    rep.json = j;

    // human-readable table
    std::ostringstream t;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %14s %14s %14s\n", "method", "EM", "Recall", "F1");
    t << line;
    for (const auto& m : methods) {
        const auto em = detail::mean_std(method_metric(m, [](const Metrics& x) { return x.em; }));
        const auto rec =
            detail::mean_std(method_metric(m, [](const Metrics& x) { return x.recall; }));
        const auto f1 = detail::mean_std(method_metric(m, [](const Metrics& x) { return x.f1; }));
        std::snprintf(line, sizeof(line),
                      "%-22s %6.2f \xc2\xb1 %5.2f %6.2f \xc2\xb1 %5.2f %6.2f \xc2\xb1 %5.2f\n",
                      m.c_str(), em.mean, em.sd, rec.mean, rec.sd, f1.mean, f1.sd);
        t << line;
    }
    t << "\nparaphrase-count sweep (" << rc.sweep_epochs << "-epoch schedule, EM mean \xc2\xb1 std)\n";
    for (int c : counts) {
        const auto p = detail::mean_std(sweep_em[{c, "plain"}]);
        const auto l = detail::mean_std(sweep_em[{c, "lapael"}]);
        std::snprintf(line, sizeof(line),
                      "  count %-3d plain %6.2f \xc2\xb1 %5.2f   lapael %6.2f \xc2\xb1 %5.2f\n", c,
                      p.mean, p.sd, l.mean, l.sd);
        t << line;
    }
    t << "\nordering checks\n";
    for (const auto& [k, v] : flags.items()) {
        t << "  " << k << ": ";
        if (v.is_boolean())
            t << (v.get<bool>() ? "pass" : "FAIL");
        else
            t << v.dump();
        t << '\n';
    }
    rep.table = t.str();
    return rep;
}

inline CompareReport cmd_compare(const RunConfig& rc, const std::string& out,
                                 const std::string& digest, int threads = 1) {
    ensure_dir(out);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < rc.compare_seeds; ++i) seeds.push_back(rc.seed + static_cast<std::uint64_t>(i));
    std::vector<SeedOutcome> outcomes(seeds.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) outcomes[i] = run_compare_seed(rc, seeds[i]);
    } else {
        // Seed runs are pure and independent; results merge in seed order, so
        // the report is identical for any thread count.
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex mu;
        auto worker = [&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= seeds.size()) return;
                    i = next++;
                }
                outcomes[i] = run_compare_seed(rc, seeds[i]);
            }
        };
        const int n = std::min<int>(threads, static_cast<int>(seeds.size()));
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    CompareReport rep = build_compare_report(rc, std::move(outcomes), digest);
    {
        std::ofstream f(out + "/compare_report.json", std::ios::binary);
        if (!f) throw std::runtime_error("cannot write compare report");
        f << rep.json.dump(2) << '\n';
    }
    {
        std::ofstream f(out + "/compare_table.txt", std::ios::binary);
        f << rep.table;
    }
    return rep;
}

} // namespace lapael

#endif
