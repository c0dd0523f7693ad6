// lapael: desk-scale knowledge-injection pipeline.
//
// Subcommands: gen-data | pretrain | train-paraphraser | finetune | eval | compare
// Global flags: --config FILE, --seed N, --out DIR, --threads N
// Exit status 0 on success; nonzero with one machine-parsable
// "error:<class>: message" line on failure.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lapael/config.hpp"
#include "lapael/runner.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

lapael::RunConfig load_config(GlobalArgs& g, std::string* digest) {
    lapael::KeyValueConfig kv = g.config_path.empty()
                                    ? lapael::KeyValueConfig::parse_text("")
                                    : lapael::KeyValueConfig::parse_file(g.config_path);
    lapael::RunConfig rc = lapael::RunConfig::from_kv(kv);
    if (g.seed_set) rc.seed = g.seed;
    *digest = lapael::config_digest(kv.raw_text(), rc.seed);
    return rc;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-paraphrase knowledge injection pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    GlobalArgs g;
    app.add_option("--config", g.config_path, "key=value configuration file");
    app.add_option("--out", g.out, "output directory (data, checkpoints, reports)");
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed (overrides config)");
    app.add_option("--threads", g.threads, "worker threads for independent seed runs");

    auto* gen = app.add_subcommand("gen-data", "generate corpus splits and vocabulary");
    auto* pre = app.add_subcommand("pretrain", "pre-train the base model on the background split");
    auto* tp = app.add_subcommand("train-paraphraser", "train latent paraphrasers against theta0");
    std::string composition = "multiplicative";
    tp->add_option("--composition", composition, "multiplicative | additive");
    auto* ft = app.add_subcommand("finetune", "inject knowledge into theta0 by one method");
    std::string method = "plain";
    ft->add_option("--method", method,
                   "plain | lapael | neftune | gaussian | learnable-additive | "
                   "plus-paraphrases | lapael+paraphrases | seq")
        ->required();
    auto* ev = app.add_subcommand("eval", "QA-evaluate a checkpoint");
    std::string ckpt, report = "report.json", label = "eval";
    ev->add_option("--checkpoint", ckpt, "model checkpoint to score")->required();
    ev->add_option("--report", report, "report file name (within --out)");
    ev->add_option("--label", label, "method label recorded in the report");
    auto* cmp = app.add_subcommand("compare", "full multi-seed method comparison");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        std::string digest;
        lapael::RunConfig rc = load_config(g, &digest);
        if (gen->parsed()) {
            lapael::cmd_gen_data(rc, g.out);
            std::cout << "wrote corpus splits and vocabulary to " << g.out << "\n";
        } else if (pre->parsed()) {
            const double nll = lapael::cmd_pretrain(rc, g.out);
            std::cout << "pretrained theta0; eval NLL " << nll << "\n";
        } else if (tp->parsed()) {
            lapael::cmd_train_paraphraser(rc, g.out,
                                          lapael::composition_from_string(composition));
            std::cout << "trained paraphrasers (" << composition << ")\n";
        } else if (ft->parsed()) {
            lapael::cmd_finetune(rc, g.out, method);
            std::cout << "fine-tuned with method " << method << "\n";
        } else if (ev->parsed()) {
            lapael::Metrics m =
                lapael::cmd_eval(rc, g.out, ckpt, g.out + "/" + report, label, digest);
            std::cout << "EM " << m.em << " Recall " << m.recall << " F1 " << m.f1 << "\n";
        } else if (cmp->parsed()) {
            lapael::CompareReport rep = lapael::cmd_compare(rc, g.out, digest, g.threads);
            std::cout << rep.table;
        }
        return 0;
    } catch (const lapael::DivergenceError& e) {
        std::cerr << "error:divergence: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error:config: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error:contract: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error:io: " << e.what() << "\n";
        return 1;
    }
}
