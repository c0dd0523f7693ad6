#ifndef LAPAEL_MODEL_HPP
#define LAPAEL_MODEL_HPP

// Decoder-only pre-norm transformer. Each block is
//   x = x + Attn(LN1(x));  v = LN2(x);  x = x + MLP(hook(v))
// where hook() is an optional per-block latent perturbation applied to the
// post-second-norm feature, just before the MLP. Block outputs and hook
// inputs can both be captured by index.

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lapael/rng.hpp"
#include "lapael/tensor.hpp"

namespace lapael {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq_len = 64;
    bool tie_embeddings = true;

    void validate() const {
        if (vocab_size <= 0) throw std::invalid_argument("model: vocab_size must be positive");
        if (d_model % n_heads != 0)
            throw std::invalid_argument("model: d_model must be divisible by n_heads");
        if (n_layers <= 0 || d_ff <= 0 || max_seq_len <= 0)
            throw std::invalid_argument("model: bad dimensions");
    }
};

struct BlockParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct TransformerParams {
    ModelConfig config;
    Tensor tok_embed; // [V, d]
    Tensor pos_embed; // [max_seq_len, d]
    std::vector<BlockParams> blocks;
    Tensor final_gamma, final_beta;
    Tensor head_w; // [d, V]; unused when tie_embeddings

    static TransformerParams init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        const double std_dev = 0.02;
        auto randn = [&](Shape s) {
            Tensor t = Tensor::zeros(std::move(s));
            for (auto& v : t.values()) v = rng.normal() * std_dev;
            return t;
        };
        TransformerParams p;
        p.config = cfg;
        const int d = cfg.d_model;
        p.tok_embed = randn({cfg.vocab_size, d});
        p.pos_embed = randn({cfg.max_seq_len, d});
        p.blocks.resize(cfg.n_layers);
        for (auto& b : p.blocks) {
            b.ln1_gamma = Tensor::full({d}, 1.0);
            b.ln1_beta = Tensor::zeros({d});
            b.wq = randn({d, d});
            b.bq = Tensor::zeros({d});
            b.wk = randn({d, d});
            b.bk = Tensor::zeros({d});
            b.wv = randn({d, d});
            b.bv = Tensor::zeros({d});
            b.wo = randn({d, d});
            b.bo = Tensor::zeros({d});
            b.ln2_gamma = Tensor::full({d}, 1.0);
            b.ln2_beta = Tensor::zeros({d});
            b.mlp_w1 = randn({d, cfg.d_ff});
            b.mlp_b1 = Tensor::zeros({cfg.d_ff});
            b.mlp_w2 = randn({cfg.d_ff, d});
            b.mlp_b2 = Tensor::zeros({d});
        }
        p.final_gamma = Tensor::full({d}, 1.0);
        p.final_beta = Tensor::zeros({d});
        if (!cfg.tie_embeddings) p.head_w = randn({d, cfg.vocab_size});
        return p;
    }

    // Canonical (name, tensor) listing; ordering is the optimizer-state and
    // checkpoint order, so it must stay stable.
    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embed.tok", tok_embed);
        out.emplace_back("embed.pos", pos_embed);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string pre = "block" + std::to_string(i) + ".";
            const BlockParams& b = blocks[i];
            out.emplace_back(pre + "ln1.gamma", b.ln1_gamma);
            out.emplace_back(pre + "ln1.beta", b.ln1_beta);
            out.emplace_back(pre + "attn.wq", b.wq);
            out.emplace_back(pre + "attn.bq", b.bq);
            out.emplace_back(pre + "attn.wk", b.wk);
            out.emplace_back(pre + "attn.bk", b.bk);
            out.emplace_back(pre + "attn.wv", b.wv);
            out.emplace_back(pre + "attn.bv", b.bv);
            out.emplace_back(pre + "attn.wo", b.wo);
            out.emplace_back(pre + "attn.bo", b.bo);
            out.emplace_back(pre + "ln2.gamma", b.ln2_gamma);
            out.emplace_back(pre + "ln2.beta", b.ln2_beta);
            out.emplace_back(pre + "mlp.w1", b.mlp_w1);
            out.emplace_back(pre + "mlp.b1", b.mlp_b1);
            out.emplace_back(pre + "mlp.w2", b.mlp_w2);
            out.emplace_back(pre + "mlp.b2", b.mlp_b2);
        }
        out.emplace_back("final.gamma", final_gamma);
        out.emplace_back("final.beta", final_beta);
        if (!config.tie_embeddings) out.emplace_back("head.w", head_w);
        return out;
    }

    TransformerParams clone() const {
        TransformerParams p;
        p.config = config;
        p.tok_embed = tok_embed.clone();
        p.pos_embed = pos_embed.clone();
        for (const auto& b : blocks) {
            BlockParams c;
            c.ln1_gamma = b.ln1_gamma.clone();
            c.ln1_beta = b.ln1_beta.clone();
            c.wq = b.wq.clone();
            c.bq = b.bq.clone();
            c.wk = b.wk.clone();
            c.bk = b.bk.clone();
            c.wv = b.wv.clone();
            c.bv = b.bv.clone();
            c.wo = b.wo.clone();
            c.bo = b.bo.clone();
            c.ln2_gamma = b.ln2_gamma.clone();
            c.ln2_beta = b.ln2_beta.clone();
            c.mlp_w1 = b.mlp_w1.clone();
            c.mlp_b1 = b.mlp_b1.clone();
            c.mlp_w2 = b.mlp_w2.clone();
            c.mlp_b2 = b.mlp_b2.clone();
            p.blocks.push_back(std::move(c));
        }
        p.final_gamma = final_gamma.clone();
        p.final_beta = final_beta.clone();
        if (head_w.defined()) p.head_w = head_w.clone();
        return p;
    }
};

// Per-block latent perturbation: takes the post-LN2 feature [T,d], returns
// the perturbed feature of the same shape.
using LatentHook = std::function<Tensor(Tape&, const Tensor&, int block)>;

struct ForwardOptions {
    std::map<int, LatentHook> perturbers;
    std::set<int> capture_outputs;
    std::set<int> capture_hook_inputs;
    Tensor embedding_offset;   // optional [T,d] additive noise at the embedding
    int stop_after_block = -1; // >=0: skip later blocks and the head
};

struct ForwardResult {
    Tensor logits; // [T, V]; undefined when stop_after_block cut the head off
    std::map<int, Tensor> block_outputs;
    std::map<int, Tensor> hook_inputs;
};

namespace detail {

inline Tensor causal_mask(int t) {
    Tensor m = Tensor::zeros({t, t});
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j)
            m.values()[static_cast<std::size_t>(i) * t + j] = -1e9;
    return m;
}

inline Tensor attention(Tape& tp, const Tensor& x, const BlockParams& b, int n_heads,
                        const Tensor& mask) {
    const int t = x.shape()[0];
    const int d = x.shape()[1];
    const int dh = d / n_heads;
    Tensor q = tp.add(tp.matmul(x, b.wq), b.bq);
    Tensor k = tp.add(tp.matmul(x, b.wk), b.bk);
    Tensor v = tp.add(tp.matmul(x, b.wv), b.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> ctx;
    ctx.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = tp.slice(q, 1, h * dh, dh);
        Tensor kh = tp.slice(k, 1, h * dh, dh);
        Tensor vh = tp.slice(v, 1, h * dh, dh);
        Tensor scores = tp.add(tp.mul_scalar(tp.matmul_nt(qh, kh), scale), mask);
        Tensor probs = tp.softmax(scores);
        ctx.push_back(tp.matmul(probs, vh));
    }
    Tensor merged = n_heads == 1 ? ctx[0] : tp.concat(ctx, 1);
    (void)t;
    return tp.add(tp.matmul(merged, b.wo), b.bo);
}

inline Tensor mlp(Tape& tp, const Tensor& x, const BlockParams& b) {
    Tensor h = tp.gelu(tp.add(tp.matmul(x, b.mlp_w1), b.mlp_b1));
    return tp.add(tp.matmul(h, b.mlp_w2), b.mlp_b2);
}

} // namespace detail

// One full block on input x [T,d] (no hooks); used by forward and by the
// capture-consistency checks.
inline Tensor run_block(Tape& tp, const Tensor& x, const TransformerParams& params,
                        int block) {
    const BlockParams& b = params.blocks.at(static_cast<std::size_t>(block));
    Tensor mask = detail::causal_mask(x.shape()[0]);
    Tensor a = tp.layer_norm(x, b.ln1_gamma, b.ln1_beta);
    Tensor x1 = tp.add(x, detail::attention(tp, a, b, params.config.n_heads, mask));
    Tensor v = tp.layer_norm(x1, b.ln2_gamma, b.ln2_beta);
    return tp.add(x1, detail::mlp(tp, v, b));
}

inline ForwardResult forward(Tape& tp, const std::vector<int>& tokens,
                             const TransformerParams& params,
                             const ForwardOptions& opts = {}) {
    const ModelConfig& cfg = params.config;
    const int t = static_cast<int>(tokens.size());
    if (t == 0) throw std::invalid_argument("forward: empty token sequence");
    if (t > cfg.max_seq_len) throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::invalid_argument("forward: token id out of range");
    auto check_block = [&](int b, const char* what) {
        if (b < 0 || b >= cfg.n_layers)
            throw std::invalid_argument(std::string("forward: unknown block index in ") + what);
    };
    for (const auto& [b, _] : opts.perturbers) check_block(b, "perturbers");
    for (int b : opts.capture_outputs) check_block(b, "capture");
    for (int b : opts.capture_hook_inputs) check_block(b, "capture");

    std::vector<int> positions(tokens.size());
    for (int i = 0; i < t; ++i) positions[i] = i;
    Tensor x = tp.add(tp.embedding(params.tok_embed, tokens),
                      tp.embedding(params.pos_embed, positions));
    if (opts.embedding_offset.defined()) x = tp.add(x, opts.embedding_offset);

    Tensor mask = detail::causal_mask(t);
    ForwardResult result;
    const int last_block =
        opts.stop_after_block >= 0 ? std::min(opts.stop_after_block, cfg.n_layers - 1)
                                   : cfg.n_layers - 1;
    for (int i = 0; i <= last_block; ++i) {
        const BlockParams& b = params.blocks[static_cast<std::size_t>(i)];
        Tensor a = tp.layer_norm(x, b.ln1_gamma, b.ln1_beta);
        Tensor x1 = tp.add(x, detail::attention(tp, a, b, cfg.n_heads, mask));
        Tensor v = tp.layer_norm(x1, b.ln2_gamma, b.ln2_beta);
        if (opts.capture_hook_inputs.count(i)) result.hook_inputs[i] = v;
        auto it = opts.perturbers.find(i);
        if (it != opts.perturbers.end()) v = it->second(tp, v, i);
        x = tp.add(x1, detail::mlp(tp, v, b));
        if (opts.capture_outputs.count(i)) result.block_outputs[i] = x;
    }
    if (opts.stop_after_block >= 0) return result;

    Tensor f = tp.layer_norm(x, params.final_gamma, params.final_beta);
    result.logits = cfg.tie_embeddings ? tp.matmul_nt(f, params.tok_embed)
                                       : tp.matmul(f, params.head_w);
    return result;
}

// Mean next-token negative log-likelihood. Targets must align 1:1 with the
// logit rows.
inline Tensor nll_loss(Tape& tp, const Tensor& logits, const std::vector<int>& targets) {
    if (static_cast<std::size_t>(logits.shape()[0]) != targets.size())
        throw std::invalid_argument("nll_loss: logits/target length mismatch");
    return tp.cross_entropy(logits, targets);
}

// Mean NLL of a whole token sequence under the model (positions 1..n-1).
inline double sequence_nll(const std::vector<int>& tokens, const TransformerParams& params) {
    if (tokens.size() < 2) throw std::invalid_argument("sequence_nll: need at least 2 tokens");
    Tape tp;
    tp.set_recording(false);
    ForwardResult r = forward(tp, std::vector<int>(tokens.begin(), tokens.end() - 1), params);
    return nll_loss(tp, r.logits, std::vector<int>(tokens.begin() + 1, tokens.end())).item();
}

// Deterministic argmax decoding; ties break toward the lowest token id.
// Stops at stop_token (not emitted), max_new tokens, or a full context.
inline std::vector<int> generate_greedy(const std::vector<int>& prefix,
                                        const TransformerParams& params, int max_new,
                                        int stop_token) {
    if (prefix.empty()) throw std::invalid_argument("generate_greedy: empty prefix");
    if (static_cast<int>(prefix.size()) > params.config.max_seq_len)
        throw std::invalid_argument("generate_greedy: prefix exceeds max_seq_len");
    std::vector<int> ctx = prefix;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int>(ctx.size()) >= params.config.max_seq_len) break;
        Tape tp;
        tp.set_recording(false);
        ForwardResult r = forward(tp, ctx, params);
        const int v = params.config.vocab_size;
        const double* row =
            r.logits.values().data() + (static_cast<std::size_t>(ctx.size()) - 1) * v;
        int best = 0;
        for (int j = 1; j < v; ++j)
            if (row[j] > row[best]) best = j;
        if (best == stop_token) break;
        out.push_back(best);
        ctx.push_back(best);
    }
    return out;
}

} // namespace lapael

#endif
