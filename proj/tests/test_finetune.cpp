#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lapael/finetune.hpp"
#include "lapael/paraphraser.hpp"

using namespace lapael;

namespace {

constexpr int kVocab = 18;

TransformerParams make_theta(std::uint64_t seed = 40) {
    ModelConfig cfg;
    cfg.vocab_size = kVocab;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 12;
    Rng rng(seed);
    return TransformerParams::init(cfg, rng);
}

std::vector<std::vector<int>> make_docs(int n, std::uint64_t seed = 41) {
    Rng rng(seed);
    std::vector<std::vector<int>> docs;
    for (int i = 0; i < n; ++i) {
        std::vector<int> d;
        const int len = 5 + static_cast<int>(rng.below(3));
        for (int j = 0; j < len; ++j) d.push_back(static_cast<int>(rng.below(kVocab)));
        docs.push_back(std::move(d));
    }
    return docs;
}

ParaphraserParams make_phi(std::uint64_t seed = 42) {
    Rng rng(seed);
    return ParaphraserParams::init(16, {0, 1}, rng);
}

FinetuneConfig quick_cfg(std::uint64_t seed) {
    FinetuneConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 1e-3;
    cfg.seed = seed;
    return cfg;
}

bool same_values(const TransformerParams& a, const TransformerParams& b) {
    auto pa = a.named_params();
    auto pb = b.named_params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].second.values() != pb[i].second.values()) return false;
    return true;
}

double mean_noisy_loss(const TransformerParams& theta, const ParaphraserParams& phi,
                       const std::vector<int>& doc, int n, Rng& rng) {
    std::vector<double> losses;
    for (int j = 0; j < n; ++j) {
        Tape tp;
        tp.set_recording(false);
        ForwardOptions opts;
        opts.perturbers = paraphraser_hooks(phi, rng_draw_fn(rng));
        ForwardResult r =
            forward(tp, std::vector<int>(doc.begin(), doc.end() - 1), theta, opts);
        losses.push_back(
            nll_loss(tp, r.logits, std::vector<int>(doc.begin() + 1, doc.end())).item());
    }
    return detail::pairwise_mean(losses);
}

double variance(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return var / static_cast<double>(xs.size() - 1);
}

} // namespace

TEST_CASE("finetune_plain") {
    SECTION("overfits a single 3-token document") {
        TransformerParams theta = make_theta();
        std::vector<std::vector<int>> docs{{2, 7, 5}};
        FinetuneConfig cfg = quick_cfg(1);
        cfg.epochs = 120;
        cfg.lr = 3e-3;
        finetune_plain(theta, docs, cfg);
        REQUIRE(generate_greedy({2, 7}, theta, 1, kVocab - 1) == std::vector<int>{5});
    }
    SECTION("learning rate 0 leaves theta unchanged") {
        TransformerParams theta = make_theta();
        TransformerParams before = theta.clone();
        FinetuneConfig cfg = quick_cfg(2);
        cfg.lr = 0.0;
        finetune_plain(theta, make_docs(4), cfg);
        REQUIRE(same_values(theta, before));
    }
    SECTION("training loss decreases on the training docs") {
        TransformerParams theta = make_theta();
        FinetuneConfig cfg = quick_cfg(3);
        cfg.epochs = 8;
        FinetuneOutcome out = finetune_plain(theta, make_docs(6), cfg);
        REQUIRE(out.per_epoch_loss.back() < out.per_epoch_loss.front());
    }
    SECTION("empty document set is an error") {
        TransformerParams theta = make_theta();
        REQUIRE_THROWS_AS(finetune_plain(theta, {}, quick_cfg(4)), std::invalid_argument);
    }
}

TEST_CASE("finetune_lapael") {
    SECTION("mask forced to 0 reproduces the plain trajectory bitwise") {
        auto docs = make_docs(5);
        ParaphraserParams phi = make_phi();

        TransformerParams plain = make_theta();
        finetune_plain(plain, docs, quick_cfg(7));

        TransformerParams noisy = make_theta();
        FinetuneConfig cfg = quick_cfg(7);
        cfg.noise_samples = 4;
        cfg.mask_override = 0.0;
        finetune_lapael(noisy, phi, docs, cfg);

        REQUIRE(same_values(plain, noisy));
    }
    SECTION("phi is bitwise unchanged by fine-tuning") {
        auto docs = make_docs(4);
        ParaphraserParams phi = make_phi();
        ParaphraserParams before = phi.clone();
        TransformerParams theta = make_theta();
        FinetuneConfig cfg = quick_cfg(8);
        finetune_lapael(theta, phi, docs, cfg);
        auto pa = phi.named_params();
        auto pb = before.named_params();
        for (std::size_t i = 0; i < pa.size(); ++i)
            REQUIRE(pa[i].second.values() == pb[i].second.values());
    }
    SECTION("N=4 step loss has strictly lower variance than N=1") {
        TransformerParams theta = make_theta();
        ParaphraserParams phi = make_phi();
        const std::vector<int> doc{3, 9, 1, 12, 6};
        Rng rng(55);
        std::vector<double> l1, l4;
        for (int rep = 0; rep < 100; ++rep) {
            l1.push_back(mean_noisy_loss(theta, phi, doc, 1, rng));
            l4.push_back(mean_noisy_loss(theta, phi, doc, 4, rng));
        }
        REQUIRE(variance(l4) < variance(l1));
    }
    SECTION("both N=1 and N=4 converge on a 10-doc corpus") {
        auto docs = make_docs(10);
        for (int n : {1, 4}) {
            TransformerParams theta = make_theta();
            ParaphraserParams phi = make_phi();
            FinetuneConfig cfg = quick_cfg(60 + n);
            cfg.epochs = 6;
            cfg.noise_samples = n;
            FinetuneOutcome out = finetune_lapael(theta, phi, docs, cfg);
            REQUIRE(out.per_epoch_loss.back() < out.per_epoch_loss.front());
        }
    }
    SECTION("a paraphraser with no attached blocks is rejected") {
        TransformerParams theta = make_theta();
        ParaphraserParams phi;
        REQUIRE_THROWS_AS(finetune_lapael(theta, phi, make_docs(2), quick_cfg(9)),
                          std::invalid_argument);
    }
}

TEST_CASE("finetune_noise_baseline") {
    SECTION("neftune with alpha = 0 equals plain under the same seed") {
        auto docs = make_docs(5);
        TransformerParams plain = make_theta();
        finetune_plain(plain, docs, quick_cfg(11));

        TransformerParams noisy = make_theta();
        FinetuneConfig cfg = quick_cfg(11);
        cfg.neftune_alpha = 0.0;
        cfg.noise_samples = 4;
        finetune_noise_baseline(noisy, docs, cfg, "neftune");
        REQUIRE(same_values(plain, noisy));
    }
    SECTION("uniform noise components stay within alpha/sqrt(T d)") {
        Rng rng(13);
        const double alpha = 5.0;
        const int t = 7, d = 16;
        const double bound = alpha / std::sqrt(static_cast<double>(t * d));
        double worst = 0.0;
        for (int i = 0; i < 100000; ++i)
            worst = std::max(worst, std::abs(rng.uniform(-bound, bound)));
        REQUIRE(worst <= bound);
    }
    SECTION("gaussian hook noise trains and the loss decreases") {
        TransformerParams theta = make_theta();
        FinetuneConfig cfg = quick_cfg(14);
        cfg.epochs = 8;
        cfg.gaussian_blocks = {0, 1};
        FinetuneOutcome out = finetune_noise_baseline(theta, make_docs(6), cfg, "gaussian");
        REQUIRE(out.per_epoch_loss.back() < out.per_epoch_loss.front());
        REQUIRE(std::isfinite(out.per_epoch_loss.back()));
    }
    SECTION("unknown method is an error") {
        TransformerParams theta = make_theta();
        REQUIRE_THROWS_AS(finetune_noise_baseline(theta, make_docs(2), quick_cfg(15), "pgd"),
                          std::invalid_argument);
    }
}

TEST_CASE("finetune_plus_paraphrases") {
    SECTION("empty paraphrase lists reduce to finetune_plain") {
        auto docs = make_docs(4);
        std::vector<std::vector<std::vector<int>>> empty(docs.size());
        TransformerParams a = make_theta();
        finetune_plain(a, docs, quick_cfg(17));
        TransformerParams b = make_theta();
        finetune_plus_paraphrases(b, docs, empty, quick_cfg(17));
        REQUIRE(same_values(a, b));
    }
    SECTION("K paraphrases per doc scale the per-epoch step count by K+1") {
        auto docs = make_docs(3);
        std::vector<std::vector<std::vector<int>>> paras;
        Rng rng(19);
        for (const auto& d : docs) {
            std::vector<std::vector<int>> set;
            for (int k = 0; k < 4; ++k) {
                auto p = d;
                p[0] = static_cast<int>(rng.below(kVocab));
                set.push_back(p);
            }
            paras.push_back(set);
        }
        TransformerParams theta = make_theta();
        FinetuneConfig cfg = quick_cfg(20);
        cfg.epochs = 2;
        FinetuneOutcome out = finetune_plus_paraphrases(theta, docs, paras, cfg);
        REQUIRE(out.steps == 2 * 3 * (4 + 1));
    }
    SECTION("composes with the latent paraphrasers") {
        auto docs = make_docs(3);
        std::vector<std::vector<std::vector<int>>> paras(docs.size());
        for (std::size_t i = 0; i < docs.size(); ++i) paras[i].push_back(docs[i]);
        TransformerParams theta = make_theta();
        ParaphraserParams phi = make_phi();
        FinetuneConfig cfg = quick_cfg(21);
        cfg.epochs = 2;
        FinetuneOutcome out = finetune_plus_paraphrases(theta, docs, paras, cfg, &phi);
        REQUIRE(out.steps == 2 * 3 * 2);
        REQUIRE(std::isfinite(out.per_epoch_loss.back()));
    }
    SECTION("missing paraphrase lists are an error") {
        TransformerParams theta = make_theta();
        auto docs = make_docs(2);
        std::vector<std::vector<std::vector<int>>> wrong(1);
        REQUIRE_THROWS_AS(finetune_plus_paraphrases(theta, docs, wrong, quick_cfg(22)),
                          std::invalid_argument);
    }
}

TEST_CASE("mlp-only subset freezes attention and embeddings bitwise") {
    TransformerParams theta = make_theta();
    TransformerParams before = theta.clone();
    FinetuneConfig cfg = quick_cfg(23);
    cfg.trainable_subset = TrainableSubset::mlp_only;
    finetune_plain(theta, make_docs(4), cfg);
    auto pa = theta.named_params();
    auto pb = before.named_params();
    bool mlp_moved = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const bool is_mlp = pa[i].first.find(".mlp.") != std::string::npos;
        if (is_mlp) {
            mlp_moved = mlp_moved || pa[i].second.values() != pb[i].second.values();
        } else {
            REQUIRE(pa[i].second.values() == pb[i].second.values());
        }
    }
    REQUIRE(mlp_moved);
}

TEST_CASE("seeded determinism: identical config and seed give identical theta") {
    auto docs = make_docs(5);
    auto run = [&] {
        TransformerParams theta = make_theta();
        ParaphraserParams phi = make_phi();
        FinetuneConfig cfg = quick_cfg(29);
        cfg.noise_samples = 2;
        finetune_lapael(theta, phi, docs, cfg);
        return theta;
    };
    REQUIRE(same_values(run(), run()));
}
