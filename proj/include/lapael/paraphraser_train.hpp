#ifndef LAPAEL_PARAPHRASER_TRAIN_HPP
#define LAPAEL_PARAPHRASER_TRAIN_HPP

// Trains the latent paraphrasers against a frozen transformer so that the
// distribution of block outputs under latent noise matches the distribution
// under data-level paraphrases.
//
// Per example and matched block:
//   data side:   K plain forwards on the paraphrased prefixes, block output
//                captured at each prefix's final token -> empirical Gaussian
//   latent side: N perturbed forwards on the original prefix with fresh
//                (eps, u) draws -> empirical Gaussian
// The loss is the symmetric KL between the two, summed over matched blocks,
// plus the mask auxiliary loss on the original prefix. Only phi moves; the
// data-side Gaussians depend only on the frozen theta and are precomputed.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lapael/gaussian_match.hpp"
#include "lapael/model.hpp"
#include "lapael/optim.hpp"
#include "lapael/paraphraser.hpp"
#include "lapael/rng.hpp"
#include "lapael/tensor.hpp"

namespace lapael {

struct ParaphraserTrainConfig {
    int latent_samples = 4;    // N perturbed forwards per example
    int paraphrase_count = 10; // K paraphrases used for the data-side estimate
    double mask_ratio = 0.5;   // r
    int epochs = 10;
    double lr = 1e-3;
    double lr_floor_frac = 0.1; // cosine decay floor as a fraction of lr
    double sigma_floor = 1e-4;
    std::vector<int> matched_blocks; // empty: match at every attached block

    void validate() const {
        if (latent_samples < 2)
            throw std::invalid_argument("paraphraser training: N must be >= 2");
        if (paraphrase_count < 2)
            throw std::invalid_argument("paraphraser training: K must be >= 2");
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw std::invalid_argument("paraphraser training: r must lie in [0,1]");
        if (epochs < 1) throw std::invalid_argument("paraphraser training: epochs must be >= 1");
    }
};

struct ParaphraserTrainExample {
    std::vector<int> prefix;                          // original x tokens
    std::vector<std::vector<int>> paraphrase_prefixes; // >= K alternatives
    std::vector<double> gold_mask;                     // 0 on entity tokens, 1 elsewhere
};

// Frozen per-example quantities: data-side Gaussians per matched block and
// the clean post-norm hook features the mask heads read.
struct ExampleStats {
    std::map<int, GaussianEstimate> data; // constants (no grad path)
    std::map<int, Tensor> clean_hook;     // block -> [T,d] constant
};

inline ExampleStats precompute_example_stats(const TransformerParams& theta,
                                             const ParaphraserTrainExample& ex,
                                             const std::vector<int>& matched_blocks,
                                             const std::vector<int>& attached_blocks,
                                             const ParaphraserTrainConfig& cfg) {
    if (static_cast<int>(ex.paraphrase_prefixes.size()) < cfg.paraphrase_count)
        throw std::invalid_argument("paraphraser training: example has fewer than K paraphrases");
    if (ex.gold_mask.size() != ex.prefix.size())
        throw std::invalid_argument("paraphraser training: example missing gold mask");

    int stop_block = 0;
    for (int b : matched_blocks) stop_block = std::max(stop_block, b);
    for (int b : attached_blocks) stop_block = std::max(stop_block, b);

    ExampleStats stats;
    // Data side: one capture per paraphrase at its own final prefix token.
    std::map<int, std::vector<Tensor>> samples;
    for (int k = 0; k < cfg.paraphrase_count; ++k) {
        const auto& toks = ex.paraphrase_prefixes[static_cast<std::size_t>(k)];
        Tape tp;
        tp.set_recording(false);
        ForwardOptions opts;
        opts.capture_outputs.insert(matched_blocks.begin(), matched_blocks.end());
        opts.stop_after_block = stop_block;
        ForwardResult r = forward(tp, toks, theta, opts);
        const int last = static_cast<int>(toks.size()) - 1;
        for (int b : matched_blocks)
            samples[b].push_back(tp.slice(r.block_outputs.at(b), 0, last, 1).clone());
    }
    for (int b : matched_blocks) {
        Tape tp;
        tp.set_recording(false);
        GaussianEstimate g = estimate_gaussian(tp, samples[b], cfg.sigma_floor);
        stats.data[b] = gaussian_from_values(g.mean.values(), g.std.values(), g.sample_count);
    }
    // Clean hook features for the mask heads.
    {
        Tape tp;
        tp.set_recording(false);
        ForwardOptions opts;
        opts.capture_hook_inputs.insert(attached_blocks.begin(), attached_blocks.end());
        opts.stop_after_block = stop_block;
        ForwardResult r = forward(tp, ex.prefix, theta, opts);
        for (int b : attached_blocks) stats.clean_hook[b] = r.hook_inputs.at(b).clone();
    }
    return stats;
}

struct StepLosses {
    Tensor total;
    Tensor kl;
    Tensor mask;
    double mean_mask = 0.0; // mean sigmoid(m_tilde) over tokens and heads
};

// Builds the full differentiable loss for one example given explicit draws
// (one map block->NoiseDraws per latent trajectory). Used by the training
// loop with fresh draws and by tests with replayed ones.
//
// Credit assignment: the mask head (W_m, b_m) learns from the auxiliary mask
// loss only. Inside the KL trajectories the mask is applied with detached
// mask parameters; the KL gradient on W_m is orders of magnitude larger than
// the auxiliary signal at this scale and would otherwise decide the mask by
// itself, erasing the gold-entity preference.
inline StepLosses build_paraphraser_losses(Tape& tp, const TransformerParams& theta,
                                           const ParaphraserParams& phi,
                                           const ParaphraserTrainExample& ex,
                                           const ExampleStats& stats,
                                           const ParaphraserTrainConfig& cfg,
                                           const std::vector<std::map<int, NoiseDraws>>& draws) {
    const std::vector<int> matched =
        cfg.matched_blocks.empty() ? phi.attached_blocks() : cfg.matched_blocks;
    int stop_block = 0;
    for (int b : matched) stop_block = std::max(stop_block, b);
    for (int b : phi.attached_blocks()) stop_block = std::max(stop_block, b);

    ParaphraserParams phi_detached_mask;
    phi_detached_mask.temperature = phi.temperature;
    phi_detached_mask.composition = phi.composition;
    for (const auto& b : phi.blocks) {
        ParaphraserBlockParams shadow = b;
        shadow.w_m = b.w_m.clone().set_requires_grad(false);
        shadow.b_m = b.b_m.clone().set_requires_grad(false);
        phi_detached_mask.blocks.push_back(std::move(shadow));
    }

    std::map<int, std::vector<Tensor>> latent_samples;
    for (int j = 0; j < cfg.latent_samples; ++j) {
        ForwardOptions opts;
        opts.perturbers = paraphraser_hooks(phi_detached_mask, replay_draw_fn(draws.at(j)));
        opts.capture_outputs.insert(matched.begin(), matched.end());
        opts.stop_after_block = stop_block;
        ForwardResult r = forward(tp, ex.prefix, theta, opts);
        const int last = static_cast<int>(ex.prefix.size()) - 1;
        for (int b : matched)
            latent_samples[b].push_back(tp.slice(r.block_outputs.at(b), 0, last, 1));
    }

    StepLosses out;
    for (int b : matched) {
        GaussianEstimate latent = estimate_gaussian(tp, latent_samples[b], cfg.sigma_floor);
        Tensor kl = symmetric_kl(tp, stats.data.at(b), latent);
        out.kl = out.kl.defined() ? tp.add(out.kl, kl) : kl;
    }

    long n_tokens = 0;
    double sig_sum = 0.0;
    for (const auto& bp : phi.blocks) {
        Tensor mt = mask_logits(tp, stats.clean_hook.at(bp.block), bp);
        Tensor ml = mask_loss(tp, mt, ex.gold_mask, cfg.mask_ratio);
        out.mask = out.mask.defined() ? tp.add(out.mask, ml) : ml;
        for (std::size_t i = 0; i < mt.numel(); ++i) {
            sig_sum += detail::sigmoid_stable(mt.at(i));
            ++n_tokens;
        }
    }
    out.mean_mask = n_tokens ? sig_sum / static_cast<double>(n_tokens) : 0.0;
    out.total = tp.add(out.kl, out.mask);
    return out;
}

struct ParaphraserTrainOutcome {
    // one row per optimizer step: step index, L_KL, L_mask, mean mask
    std::vector<std::array<double, 4>> curve;
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;
};

inline ParaphraserTrainOutcome train_paraphrasers(
    const TransformerParams& theta, ParaphraserParams& phi,
    const std::vector<ParaphraserTrainExample>& corpus, const ParaphraserTrainConfig& cfg,
    std::uint64_t seed) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("paraphraser training: empty corpus");
    const std::vector<int> matched =
        cfg.matched_blocks.empty() ? phi.attached_blocks() : cfg.matched_blocks;
    const std::vector<int> attached = phi.attached_blocks();
    const int d = theta.config.d_model;

    for (auto& [name, t] : phi.named_params()) t.set_requires_grad(true);

    std::vector<ExampleStats> stats;
    stats.reserve(corpus.size());
    for (const auto& ex : corpus)
        stats.push_back(precompute_example_stats(theta, ex, matched, attached, cfg));

    std::vector<Tensor> trainable;
    for (auto& [name, t] : phi.named_params()) trainable.push_back(t);
    AdamW opt(trainable);

    Rng data_rng = derive_rng(seed, "paraphraser.data");
    Rng noise_rng = derive_rng(seed, "paraphraser.noise");

    const long total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(corpus.size());
    ParaphraserTrainOutcome outcome;
    outcome.curve.reserve(static_cast<std::size_t>(total_steps));
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        data_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const auto& ex = corpus[idx];
            const int t_len = static_cast<int>(ex.prefix.size());
            std::vector<std::map<int, NoiseDraws>> draws(
                static_cast<std::size_t>(cfg.latent_samples));
            for (auto& per_traj : draws)
                for (int b : attached) per_traj[b] = draw_noise(noise_rng, t_len, d);

            Tape tp;
            StepLosses losses =
                build_paraphraser_losses(tp, theta, phi, ex, stats[idx], cfg, draws);
            if (!losses.total.all_finite())
                throw std::runtime_error("paraphraser training: non-finite loss");
            tp.backward(losses.total);
            opt.step(cosine_lr(cfg.lr, cfg.lr_floor_frac, step, total_steps));

            epoch_loss += losses.total.item();
            outcome.curve.push_back({static_cast<double>(step), losses.kl.item(),
                                     losses.mask.item(), losses.mean_mask});
            ++step;
        }
        epoch_loss /= static_cast<double>(corpus.size());
        if (epoch == 0) outcome.first_epoch_loss = epoch_loss;
        outcome.last_epoch_loss = epoch_loss;
    }
    return outcome;
}

// Mask-head behavior over a corpus: mean sigmoid(m_tilde) over all tokens,
// over gold-entity tokens, and over the rest, using clean features.
struct MaskStats {
    double mean_all = 0.0, mean_entity = 0.0, mean_other = 0.0;
    long n_entity = 0, n_other = 0;
};

inline MaskStats mask_statistics(const TransformerParams& theta, const ParaphraserParams& phi,
                                 const std::vector<ParaphraserTrainExample>& corpus) {
    MaskStats s;
    double sum_all = 0.0, sum_entity = 0.0, sum_other = 0.0;
    const std::vector<int> attached = phi.attached_blocks();
    int stop_block = 0;
    for (int b : attached) stop_block = std::max(stop_block, b);
    for (const auto& ex : corpus) {
        Tape tp;
        tp.set_recording(false);
        ForwardOptions opts;
        opts.capture_hook_inputs.insert(attached.begin(), attached.end());
        opts.stop_after_block = stop_block;
        ForwardResult r = forward(tp, ex.prefix, theta, opts);
        for (const auto& bp : phi.blocks) {
            Tensor mt = mask_logits(tp, r.hook_inputs.at(bp.block), bp);
            for (std::size_t t = 0; t < mt.numel(); ++t) {
                const double sig = detail::sigmoid_stable(mt.at(t));
                sum_all += sig;
                if (ex.gold_mask.at(t) == 0.0) {
                    sum_entity += sig;
                    ++s.n_entity;
                } else {
                    sum_other += sig;
                    ++s.n_other;
                }
            }
        }
    }
    const long n = s.n_entity + s.n_other;
    s.mean_all = n ? sum_all / static_cast<double>(n) : 0.0;
    s.mean_entity = s.n_entity ? sum_entity / static_cast<double>(s.n_entity) : 0.0;
    s.mean_other = s.n_other ? sum_other / static_cast<double>(s.n_other) : 0.0;
    return s;
}

} // namespace lapael

#endif
