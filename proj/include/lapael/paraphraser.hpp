#ifndef LAPAEL_PARAPHRASER_HPP
#define LAPAEL_PARAPHRASER_HPP

// Latent paraphraser: input-dependent stochastic perturbation of post-norm
// transformer features. Per token, a noise head produces a positive noise
// vector z through a reparameterized Gaussian, and a mask head produces a
// scalar gate m in (0,1) through a binary-concrete relaxation:
//
//   alpha = (W_mu h + b_mu) + eps,      eps ~ N(0, I)
//   z     = softplus(MLP_z(alpha))
//   m     = sigmoid((log u - log(1-u) + m_tilde) / tau),   m_tilde = W_m h + b_m
//   h'    = h o ((1 - m) 1 + m z)
//
// All randomness is caller-supplied (eps, u), so every application is
// replayable bit for bit.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lapael/model.hpp"
#include "lapael/rng.hpp"
#include "lapael/tensor.hpp"

namespace lapael {

enum class NoiseComposition {
    multiplicative, // h o ((1-m) 1 + m z), z = softplus(MLP_z(alpha))
    additive        // h + m z, z = MLP_z(alpha) without softplus (ablation)
};

inline std::string to_string(NoiseComposition c) {
    return c == NoiseComposition::multiplicative ? "multiplicative" : "additive";
}
inline NoiseComposition composition_from_string(const std::string& s) {
    if (s == "multiplicative") return NoiseComposition::multiplicative;
    if (s == "additive") return NoiseComposition::additive;
    throw std::invalid_argument("unknown noise composition: " + s);
}

struct ParaphraserBlockParams {
    int block = 0; // index of the transformer block this head is attached to
    Tensor w_mu;   // [d, d]
    Tensor b_mu;   // [d]
    Tensor w_z1;   // [d, d]
    Tensor b_z1;   // [d]
    Tensor w_z2;   // [d, d]
    Tensor b_z2;   // [d]
    Tensor w_m;    // [d, 1]
    Tensor b_m;    // scalar
};

struct ParaphraserParams {
    double temperature = 1.0;
    NoiseComposition composition = NoiseComposition::multiplicative;
    std::vector<ParaphraserBlockParams> blocks;

    static ParaphraserParams init(int d_model, const std::vector<int>& attached_blocks,
                                  Rng& rng, double temperature = 1.0,
                                  NoiseComposition comp = NoiseComposition::multiplicative) {
        if (temperature <= 0.0)
            throw std::invalid_argument("paraphraser: temperature must be positive");
        // Fan-in scaled init keeps the sampled noise spread at O(0.1) so the
        // latent-sample variance starts well clear of the sigma floor.
        const double scale = 0.5 / std::sqrt(static_cast<double>(d_model));
        auto randn = [&](Shape s) {
            Tensor t = Tensor::zeros(std::move(s));
            for (auto& v : t.values()) v = rng.normal() * scale;
            return t;
        };
        ParaphraserParams p;
        p.temperature = temperature;
        p.composition = comp;
        for (int blk : attached_blocks) {
            ParaphraserBlockParams b;
            b.block = blk;
            b.w_mu = randn({d_model, d_model});
            b.b_mu = Tensor::zeros({d_model});
            b.w_z1 = randn({d_model, d_model});
            b.b_z1 = Tensor::zeros({d_model});
            b.w_z2 = randn({d_model, d_model});
            // softplus(b_z2) == 1 at init, so the noise starts near identity.
            b.b_z2 = Tensor::full({d_model}, std::log(std::exp(1.0) - 1.0));
            b.w_m = randn({d_model, 1});
            b.b_m = Tensor::scalar(0.0);
            p.blocks.push_back(std::move(b));
        }
        return p;
    }

    std::vector<int> attached_blocks() const {
        std::vector<int> out;
        for (const auto& b : blocks) out.push_back(b.block);
        return out;
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (const auto& b : blocks) {
            const std::string pre = "paraphraser.b" + std::to_string(b.block) + ".";
            out.emplace_back(pre + "w_mu", b.w_mu);
            out.emplace_back(pre + "b_mu", b.b_mu);
            out.emplace_back(pre + "w_z1", b.w_z1);
            out.emplace_back(pre + "b_z1", b.b_z1);
            out.emplace_back(pre + "w_z2", b.w_z2);
            out.emplace_back(pre + "b_z2", b.b_z2);
            out.emplace_back(pre + "w_m", b.w_m);
            out.emplace_back(pre + "b_m", b.b_m);
        }
        return out;
    }

    ParaphraserParams clone() const {
        ParaphraserParams p;
        p.temperature = temperature;
        p.composition = composition;
        for (const auto& b : blocks) {
            ParaphraserBlockParams c;
            c.block = b.block;
            c.w_mu = b.w_mu.clone();
            c.b_mu = b.b_mu.clone();
            c.w_z1 = b.w_z1.clone();
            c.b_z1 = b.b_z1.clone();
            c.w_z2 = b.w_z2.clone();
            c.b_z2 = b.b_z2.clone();
            c.w_m = b.w_m.clone();
            c.b_m = b.b_m.clone();
            p.blocks.push_back(std::move(c));
        }
        return p;
    }
};

// Per-token randomness for one paraphraser application on a length-T feature.
struct NoiseDraws {
    std::vector<double> eps; // T*d standard normals
    std::vector<double> u;   // T uniforms, strictly in (0,1)
};

inline NoiseDraws draw_noise(Rng& rng, int t, int d) {
    NoiseDraws nd;
    nd.eps = rng.normal_vec(static_cast<std::size_t>(t) * d);
    nd.u.resize(t);
    for (auto& x : nd.u) x = rng.uniform01();
    return nd;
}

inline NoiseDraws zero_draws(int t, int d) {
    NoiseDraws nd;
    nd.eps.assign(static_cast<std::size_t>(t) * d, 0.0);
    nd.u.assign(t, 0.5);
    return nd;
}

// z = softplus(MLP_z((W_mu h + b_mu) + eps)); strictly positive elementwise.
inline Tensor sample_noise(Tape& tp, const Tensor& h, const ParaphraserBlockParams& p,
                           const Tensor& eps) {
    if (!h.all_finite()) throw std::domain_error("sample_noise: non-finite input feature");
    Tensor mu = tp.add(tp.matmul(h, p.w_mu), p.b_mu);
    Tensor alpha = tp.add(mu, eps);
    Tensor hidden = tp.gelu(tp.add(tp.matmul(alpha, p.w_z1), p.b_z1));
    Tensor pre = tp.add(tp.matmul(hidden, p.w_z2), p.b_z2);
    return tp.softplus(pre);
}

// Additive-ablation noise: MLP_z output without the softplus.
inline Tensor sample_noise_additive(Tape& tp, const Tensor& h,
                                    const ParaphraserBlockParams& p, const Tensor& eps) {
    if (!h.all_finite()) throw std::domain_error("sample_noise: non-finite input feature");
    Tensor mu = tp.add(tp.matmul(h, p.w_mu), p.b_mu);
    Tensor alpha = tp.add(mu, eps);
    Tensor hidden = tp.gelu(tp.add(tp.matmul(alpha, p.w_z1), p.b_z1));
    return tp.add(tp.matmul(hidden, p.w_z2), p.b_z2);
}

// Pre-sigmoid mask logits m_tilde = W_m h + b_m, shape [T,1].
inline Tensor mask_logits(Tape& tp, const Tensor& h, const ParaphraserBlockParams& p) {
    return tp.add(tp.matmul(h, p.w_m), p.b_m);
}

// Binary-concrete relaxation: m = sigmoid((log u - log(1-u) + m_tilde)/tau).
inline Tensor sample_mask(Tape& tp, const Tensor& h, const ParaphraserBlockParams& p,
                          const std::vector<double>& u, double tau) {
    const int t = h.shape()[0];
    if (static_cast<int>(u.size()) != t)
        throw std::invalid_argument("sample_mask: one uniform per token required");
    std::vector<double> logit_u(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(u[i] > 0.0 && u[i] < 1.0))
            throw std::domain_error("sample_mask: u must lie strictly in (0,1)");
        logit_u[i] = std::log(u[i]) - std::log(1.0 - u[i]);
    }
    Tensor lu = Tensor::from({t, 1}, std::move(logit_u));
    Tensor mt = mask_logits(tp, h, p);
    return tp.sigmoid(tp.mul_scalar(tp.add(lu, mt), 1.0 / tau));
}

// g = (1-m) 1 + m z with the scalar mask broadcast across channels; h' = h o g.
// Exposed separately so the arithmetic can be tested with pinned m and z.
inline Tensor compose_multiplicative(Tape& tp, const Tensor& h, const Tensor& m,
                                     const Tensor& z) {
    Tensor one = Tensor::full({1}, 1.0);
    Tensor gate = tp.add(tp.sub(one, m), tp.mul(m, z));
    return tp.mul(h, gate);
}

inline Tensor compose_additive(Tape& tp, const Tensor& h, const Tensor& m, const Tensor& z) {
    return tp.add(h, tp.mul(m, z));
}

// Full perturbation of a [T,d] feature. mask_override pins m to a constant
// (no gradient through the mask head); draws are consumed either way.
inline Tensor perturb(Tape& tp, const Tensor& h, const ParaphraserBlockParams& p,
                      const NoiseDraws& draws, double tau,
                      NoiseComposition comp = NoiseComposition::multiplicative,
                      std::optional<double> mask_override = std::nullopt) {
    const int t = h.shape()[0];
    const int d = h.shape()[1];
    if (draws.eps.size() != static_cast<std::size_t>(t) * d)
        throw std::invalid_argument("perturb: eps draw count mismatch");
    Tensor eps = Tensor::from({t, d}, draws.eps);
    Tensor m = mask_override ? Tensor::full({t, 1}, *mask_override)
                             : sample_mask(tp, h, p, draws.u, tau);
    if (comp == NoiseComposition::multiplicative) {
        Tensor z = sample_noise(tp, h, p, eps);
        return compose_multiplicative(tp, h, m, z);
    }
    Tensor z = sample_noise_additive(tp, h, p, eps);
    return compose_additive(tp, h, m, z);
}

// The "w/o Sampling" ablation: eps = 0 and u = 1/2, i.e. the deterministic
// center of both sampling distributions.
inline Tensor perturb_deterministic(Tape& tp, const Tensor& h,
                                    const ParaphraserBlockParams& p, double tau,
                                    NoiseComposition comp = NoiseComposition::multiplicative) {
    return perturb(tp, h, p, zero_draws(h.shape()[0], h.shape()[1]), tau, comp);
}

// ---- model integration ----

// Supplies (eps, u) for the hook applied at `block` on a [T,d] feature.
using DrawFn = std::function<NoiseDraws(int block, int t, int d)>;

inline DrawFn rng_draw_fn(Rng& rng) {
    return [&rng](int, int t, int d) { return draw_noise(rng, t, d); };
}

// Draws from `rng` while appending every draw to `record` (keyed by block)
// so a training step can be replayed exactly.
inline DrawFn recording_draw_fn(Rng& rng, std::map<int, NoiseDraws>& record) {
    return [&rng, &record](int block, int t, int d) {
        NoiseDraws nd = draw_noise(rng, t, d);
        record[block] = nd;
        return nd;
    };
}

inline DrawFn replay_draw_fn(const std::map<int, NoiseDraws>& record) {
    return [&record](int block, int, int) { return record.at(block); };
}

// Builds the forward() perturber map for every attached block. The params
// and the draw function must outlive the forward call.
inline std::map<int, LatentHook> paraphraser_hooks(
    const ParaphraserParams& params, DrawFn draw,
    std::optional<double> mask_override = std::nullopt) {
    std::map<int, LatentHook> hooks;
    for (const auto& b : params.blocks) {
        const ParaphraserBlockParams* bp = &b;
        const double tau = params.temperature;
        const NoiseComposition comp = params.composition;
        hooks[b.block] = [bp, draw, tau, comp, mask_override](Tape& tp, const Tensor& h,
                                                              int block) {
            NoiseDraws nd = draw(block, h.shape()[0], h.shape()[1]);
            return perturb(tp, h, *bp, nd, tau, comp, mask_override);
        };
    }
    return hooks;
}

} // namespace lapael

#endif
