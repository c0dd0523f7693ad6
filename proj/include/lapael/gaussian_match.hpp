#ifndef LAPAEL_GAUSSIAN_MATCH_HPP
#define LAPAEL_GAUSSIAN_MATCH_HPP

// Empirical diagonal Gaussians over latent features and the symmetric KL
// between them, plus the auxiliary mask loss. All built on tape ops so the
// losses are differentiable end to end.

#include <stdexcept>
#include <vector>

#include "lapael/tensor.hpp"

namespace lapael {

struct GaussianEstimate {
    Tensor mean; // [d]
    Tensor std;  // [d], elementwise >= sigma_floor
    int sample_count = 0;
};

// Per-dimension mean and Bessel-corrected standard deviation of >= 2 samples
// of equal width. Variance is clamped at sigma_floor^2 before the square
// root, which keeps the estimate and its gradient finite when samples agree.
inline GaussianEstimate estimate_gaussian(Tape& tp, const std::vector<Tensor>& samples,
                                          double sigma_floor = 1e-4) {
    if (samples.size() < 2)
        throw std::invalid_argument("estimate_gaussian: need at least 2 samples");
    const int n = static_cast<int>(samples.size());
    const int d = static_cast<int>(samples[0].numel());
    std::vector<Tensor> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        if (static_cast<int>(s.numel()) != d)
            throw std::invalid_argument("estimate_gaussian: sample widths differ");
        rows.push_back(tp.reshape(s, {1, d}));
    }
    Tensor stacked = n == 1 ? rows[0] : tp.concat(rows, 0); // [n, d]
    GaussianEstimate g;
    g.sample_count = n;
    g.mean = tp.mean_axis(stacked, 0); // [d]
    Tensor centered = tp.sub(stacked, g.mean);
    Tensor var = tp.mul_scalar(tp.sum_axis(tp.pow_scalar(centered, 2.0), 0),
                               1.0 / static_cast<double>(n - 1));
    g.std = tp.sqrt(tp.max_scalar(var, sigma_floor * sigma_floor));
    return g;
}

inline GaussianEstimate gaussian_from_values(const std::vector<double>& mean,
                                             const std::vector<double>& std,
                                             int sample_count) {
    if (mean.size() != std.size())
        throw std::invalid_argument("gaussian_from_values: width mismatch");
    for (double s : std)
        if (s <= 0.0) throw std::invalid_argument("gaussian_from_values: non-positive sigma");
    GaussianEstimate g;
    g.mean = Tensor::from({static_cast<int>(mean.size())}, mean);
    g.std = Tensor::from({static_cast<int>(std.size())}, std);
    g.sample_count = sample_count;
    return g;
}

namespace detail {
// KL(p || q) for diagonal Gaussians, summed over dimensions:
//   log(sigma_q/sigma_p) + (sigma_p^2 + (mu_p - mu_q)^2) / (2 sigma_q^2) - 1/2
inline Tensor kl_directed(Tape& tp, const GaussianEstimate& p, const GaussianEstimate& q) {
    const int d = static_cast<int>(p.mean.numel());
    Tensor log_ratio = tp.log(tp.div(q.std, p.std));
    Tensor num = tp.add(tp.pow_scalar(p.std, 2.0), tp.pow_scalar(tp.sub(p.mean, q.mean), 2.0));
    Tensor den = tp.mul_scalar(tp.pow_scalar(q.std, 2.0), 2.0);
    Tensor per_dim = tp.add(log_ratio, tp.div(num, den));
    return tp.add_scalar(tp.sum_all(per_dim), -0.5 * d);
}
} // namespace detail

// Mean of the two directed KLs; zero iff the estimates coincide, and exactly
// symmetric in its arguments.
inline Tensor symmetric_kl(Tape& tp, const GaussianEstimate& a, const GaussianEstimate& b) {
    if (a.mean.numel() != b.mean.numel())
        throw std::invalid_argument("symmetric_kl: estimate widths differ");
    for (double s : a.std.values())
        if (s <= 0.0) throw std::invalid_argument("symmetric_kl: non-positive sigma");
    for (double s : b.std.values())
        if (s <= 0.0) throw std::invalid_argument("symmetric_kl: non-positive sigma");
    return tp.mul_scalar(tp.add(detail::kl_directed(tp, a, b), detail::kl_directed(tp, b, a)),
                         0.5);
}

// Mask auxiliary loss over one sequence:
//   | sum_t sigmoid(m_tilde_t) - r*T |  +  sum_t | sigmoid(m_tilde_t) - gold_t |
// The first term is a sequence-level budget tying the expected mask count to
// the ratio r; the second pins tokens to the gold entity labels (gold = 0 on
// named-entity tokens).
inline Tensor mask_loss(Tape& tp, const Tensor& mask_logit_seq,
                        const std::vector<double>& gold_mask, double ratio) {
    const int t = static_cast<int>(mask_logit_seq.numel());
    if (static_cast<int>(gold_mask.size()) != t)
        throw std::invalid_argument("mask_loss: gold mask length mismatch");
    Tensor s = tp.sigmoid(tp.reshape(mask_logit_seq, {t}));
    Tensor budget = tp.abs(tp.add_scalar(tp.sum_all(s), -ratio * t));
    Tensor gold = Tensor::from({t}, gold_mask);
    Tensor pin = tp.sum_all(tp.abs(tp.sub(s, gold)));
    return tp.add(budget, pin);
}

} // namespace lapael

#endif
