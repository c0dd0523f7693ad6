#ifndef LAPAEL_FINETUNE_HPP
#define LAPAEL_FINETUNE_HPP

// Fine-tunes the transformer on injection documents. Four noise regimes share
// one loop: none (plain NLL), trained latent paraphrasers (frozen phi),
// NEFTune-style additive uniform noise at the token embedding, and zero-mean
// multiplicative Gaussian noise at the paraphraser hook.
//
// Per step a document's loss is the mean over N independent noise
// trajectories. Trajectory gradients are combined by a pairwise tree and
// divided by N, so for power-of-two N a degenerate noise source (mask forced
// to 0, alpha = 0) reproduces the plain fine-tuning trajectory bit for bit.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapael/model.hpp"
#include "lapael/optim.hpp"
#include "lapael/paraphraser.hpp"
#include "lapael/rng.hpp"
#include "lapael/tensor.hpp"

namespace lapael {

enum class TrainableSubset { all, mlp_only };

inline std::string to_string(TrainableSubset s) {
    return s == TrainableSubset::all ? "all" : "mlp-only";
}
inline TrainableSubset subset_from_string(const std::string& s) {
    if (s == "all") return TrainableSubset::all;
    if (s == "mlp-only") return TrainableSubset::mlp_only;
    throw std::invalid_argument("unknown trainable subset: " + s);
}

struct FinetuneConfig {
    int epochs = 12;
    double lr = 5e-5;
    double lr_decay_factor = 0.85;
    int lr_decay_every = 4; // epochs
    int noise_samples = 4;  // N
    TrainableSubset trainable_subset = TrainableSubset::all;
    double neftune_alpha = 5.0;
    std::vector<int> gaussian_blocks;       // hook blocks for the gaussian baseline
    std::optional<double> mask_override;    // test hook: pin the paraphraser mask
    std::uint64_t seed = 0;
};

struct FinetuneOutcome {
    std::vector<double> per_epoch_loss;
    long steps = 0;
};

namespace detail {

inline std::vector<Tensor> select_trainable(TransformerParams& theta, TrainableSubset subset) {
    std::vector<Tensor> out;
    for (auto& [name, t] : theta.named_params()) {
        const bool trainable =
            subset == TrainableSubset::all || name.find(".mlp.") != std::string::npos;
        t.set_requires_grad(trainable);
        if (trainable) out.push_back(t);
    }
    return out;
}

// Pairwise (binary-counter) accumulator over per-trajectory gradient maps.
// Equal-rank partial sums merge, so N = 2^k identical maps reduce exactly.
class PairwiseGrads {
public:
    void push(std::vector<std::vector<double>> g) {
        entries_.push_back({std::move(g), 0});
        while (entries_.size() >= 2 &&
               entries_[entries_.size() - 1].rank == entries_[entries_.size() - 2].rank) {
            auto top = std::move(entries_.back());
            entries_.pop_back();
            auto& dst = entries_.back();
            add_into(dst.sum, top.sum);
            ++dst.rank;
        }
    }
    // Collapses the stack and divides by n.
    std::vector<std::vector<double>> finish(int n) {
        while (entries_.size() >= 2) {
            auto top = std::move(entries_.back());
            entries_.pop_back();
            add_into(entries_.back().sum, top.sum);
        }
        auto out = std::move(entries_.back().sum);
        entries_.clear();
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& v : out)
            for (auto& x : v) x *= inv;
        return out;
    }

private:
    struct Entry {
        std::vector<std::vector<double>> sum;
        int rank;
    };
    static void add_into(std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b) {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    }
    std::vector<Entry> entries_;
};

inline double pairwise_mean(const std::vector<double>& xs) {
    std::vector<std::pair<double, int>> stack;
    for (double x : xs) {
        stack.emplace_back(x, 0);
        while (stack.size() >= 2 && stack[stack.size() - 1].second == stack[stack.size() - 2].second) {
            const auto top = stack.back();
            stack.pop_back();
            stack.back().first += top.first;
            ++stack.back().second;
        }
    }
    while (stack.size() >= 2) {
        const auto top = stack.back();
        stack.pop_back();
        stack.back().first += top.first;
    }
    return stack.back().first / static_cast<double>(xs.size());
}

// Applies one noise trajectory to one document and returns its loss tensor.
struct TrajectoryContext {
    const ParaphraserParams* phi = nullptr; // lapael
    bool neftune = false;
    double neftune_alpha = 0.0;
    std::vector<int> gaussian_blocks;
    std::optional<double> mask_override;
};

inline Tensor doc_trajectory_loss(Tape& tp, const std::vector<int>& doc,
                                  const TransformerParams& theta, const TrajectoryContext& ctx,
                                  Rng& noise_rng) {
    const std::vector<int> inputs(doc.begin(), doc.end() - 1);
    const std::vector<int> targets(doc.begin() + 1, doc.end());
    const int t = static_cast<int>(inputs.size());
    const int d = theta.config.d_model;

    ForwardOptions opts;
    if (ctx.phi) opts.perturbers = paraphraser_hooks(*ctx.phi, rng_draw_fn(noise_rng),
                                                     ctx.mask_override);
    if (!ctx.gaussian_blocks.empty()) {
        // z ~ N(0, I) multiplied straight through the hook (mask == 1)
        for (int b : ctx.gaussian_blocks) {
            opts.perturbers[b] = [&noise_rng](Tape& tpp, const Tensor& h, int) {
                Tensor eps =
                    Tensor::from(h.shape(), noise_rng.normal_vec(h.numel()));
                return tpp.mul(h, eps);
            };
        }
    }
    if (ctx.neftune) {
        const double bound =
            ctx.neftune_alpha / std::sqrt(static_cast<double>(t) * static_cast<double>(d));
        Tensor off = Tensor::zeros({t, d});
        for (auto& v : off.values()) v = noise_rng.uniform(-bound, bound);
        opts.embedding_offset = off;
    }
    ForwardResult r = forward(tp, inputs, theta, opts);
    return nll_loss(tp, r.logits, targets);
}

inline FinetuneOutcome finetune_loop(TransformerParams& theta,
                                     const std::vector<std::vector<int>>& docs,
                                     const FinetuneConfig& cfg, const TrajectoryContext& ctx,
                                     int n_trajectories) {
    if (docs.empty()) throw std::invalid_argument("finetune: empty document set");
    for (const auto& doc : docs)
        if (doc.size() < 2) throw std::invalid_argument("finetune: document shorter than 2 tokens");
    if (n_trajectories < 1) throw std::invalid_argument("finetune: N must be >= 1");

    std::vector<Tensor> trainable = select_trainable(theta, cfg.trainable_subset);
    AdamW opt(trainable);
    Rng data_rng = derive_rng(cfg.seed, "finetune.data");
    Rng noise_rng = derive_rng(cfg.seed, "finetune.noise");

    FinetuneOutcome outcome;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = step_decay_lr(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every, epoch);
        std::vector<std::size_t> order(docs.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        data_rng.shuffle(order);
        std::vector<double> doc_losses;
        doc_losses.reserve(docs.size());
        for (std::size_t idx : order) {
            PairwiseGrads acc;
            std::vector<double> traj_losses(static_cast<std::size_t>(n_trajectories));
            for (int j = 0; j < n_trajectories; ++j) {
                Tape tp;
                Tensor loss = doc_trajectory_loss(tp, docs[idx], theta, ctx, noise_rng);
                if (!std::isfinite(loss.item()))
                    throw std::runtime_error("finetune: non-finite loss");
                tp.backward(loss);
                traj_losses[static_cast<std::size_t>(j)] = loss.item();
                std::vector<std::vector<double>> g;
                g.reserve(trainable.size());
                for (const auto& p : trainable) g.push_back(p.grad());
                acc.push(std::move(g));
            }
            opt.step_with(acc.finish(n_trajectories), lr);
            doc_losses.push_back(pairwise_mean(traj_losses));
            ++outcome.steps;
        }
        outcome.per_epoch_loss.push_back(pairwise_mean(doc_losses));
    }
    return outcome;
}

} // namespace detail

// Plain NLL fine-tuning (single trajectory, no noise).
inline FinetuneOutcome finetune_plain(TransformerParams& theta,
                                      const std::vector<std::vector<int>>& docs,
                                      const FinetuneConfig& cfg) {
    detail::TrajectoryContext ctx;
    return detail::finetune_loop(theta, docs, cfg, ctx, 1);
}

// Fine-tuning under the trained latent paraphrasers; phi stays frozen and
// each document takes N fresh noise trajectories per step.
inline FinetuneOutcome finetune_lapael(TransformerParams& theta, const ParaphraserParams& phi,
                                       const std::vector<std::vector<int>>& docs,
                                       const FinetuneConfig& cfg) {
    if (phi.blocks.empty())
        throw std::invalid_argument("finetune: paraphraser has no attached blocks");
    for (auto& [name, t] : phi.named_params()) t.set_requires_grad(false);
    detail::TrajectoryContext ctx;
    ctx.phi = &phi;
    ctx.mask_override = cfg.mask_override;
    return detail::finetune_loop(theta, docs, cfg, ctx, cfg.noise_samples);
}

// Untrained-noise baselines: "neftune" adds uniform noise in
// [-alpha/sqrt(T d), +alpha/sqrt(T d)] at the token embedding; "gaussian"
// multiplies the hook feature by fresh N(0, I) noise (mask == 1).
inline FinetuneOutcome finetune_noise_baseline(TransformerParams& theta,
                                               const std::vector<std::vector<int>>& docs,
                                               const FinetuneConfig& cfg,
                                               const std::string& method) {
    detail::TrajectoryContext ctx;
    if (method == "neftune") {
        ctx.neftune = true;
        ctx.neftune_alpha = cfg.neftune_alpha;
    } else if (method == "gaussian") {
        if (cfg.gaussian_blocks.empty())
            throw std::invalid_argument("finetune: gaussian baseline needs hook blocks");
        ctx.gaussian_blocks = cfg.gaussian_blocks;
    } else {
        throw std::invalid_argument("finetune: unknown noise baseline '" + method + "'");
    }
    return detail::finetune_loop(theta, docs, cfg, ctx, cfg.noise_samples);
}

// Plain NLL over the union of originals and their paraphrased documents.
// When phi is supplied the union is fine-tuned under the paraphrasers
// instead (the combined method).
inline FinetuneOutcome finetune_plus_paraphrases(
    TransformerParams& theta, const std::vector<std::vector<int>>& docs,
    const std::vector<std::vector<std::vector<int>>>& paraphrase_sets,
    const FinetuneConfig& cfg, const ParaphraserParams* phi = nullptr) {
    if (paraphrase_sets.size() != docs.size())
        throw std::invalid_argument("finetune: every document needs its paraphrase list");
    std::vector<std::vector<int>> all_docs;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        all_docs.push_back(docs[i]);
        for (const auto& p : paraphrase_sets[i]) all_docs.push_back(p);
    }
    if (phi) return finetune_lapael(theta, *phi, all_docs, cfg);
    return finetune_plain(theta, all_docs, cfg);
}

} // namespace lapael

#endif
