#ifndef LAPAEL_OPTIM_HPP
#define LAPAEL_OPTIM_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lapael/tensor.hpp"

namespace lapael {

// Decoupled-weight-decay adaptive moment optimizer with bias correction.
// State order follows the parameter list, so runs are reproducible.
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    explicit AdamW(std::vector<Tensor> params) : AdamW(std::move(params), Options()) {}

    AdamW(std::vector<Tensor> params, Options opts)
        : params_(std::move(params)), opts_(opts) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].numel(), 0.0);
            slots_[i].v.assign(params_[i].numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad())
                throw std::logic_error("AdamW::step: parameter has no gradient");
            const auto& g = p.grad();
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            auto& w = p.values();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[j]);
            }
        }
    }

    // Apply an externally accumulated gradient (same layout as the params).
    void step_with(const std::vector<std::vector<double>>& grads, double lr) {
        if (grads.size() != params_.size())
            throw std::invalid_argument("AdamW::step_with: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& g = grads[i];
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            auto& w = params_[i].values();
            if (g.size() != w.size())
                throw std::invalid_argument("AdamW::step_with: gradient shape mismatch");
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w[j]);
            }
        }
    }

    const std::vector<Tensor>& params() const { return params_; }
    long steps_taken() const { return t_; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Tensor> params_;
    std::vector<Slot> slots_;
    Options opts_;
    long t_ = 0;
};

// Cosine decay from lr0 to floor_frac*lr0 over total_steps, no warmup.
inline double cosine_lr(double lr0, double floor_frac, long step, long total_steps) {
    if (total_steps <= 1) return lr0;
    const double lo = lr0 * floor_frac;
    const double progress =
        static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
    return lo + (lr0 - lo) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Step schedule: multiply by `factor` once per `every` epochs.
inline double step_decay_lr(double lr0, double factor, int every, int epoch) {
    if (every <= 0) return lr0;
    return lr0 * std::pow(factor, static_cast<double>(epoch / every));
}

} // namespace lapael

#endif
