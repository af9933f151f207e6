#pragma once

// Closed-set cross entropy, top-k one-vs-all loss, open-set entropy, the
// unknown-probability weight and the weighted domain-adversarial loss.
// Gradients are with respect to the quantities the network produces
// (closed logits, interleaved open-set logit pairs, discriminator probabilities).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unida/net.hpp"

namespace unida {

/// Probability clamp used inside the domain loss logarithms.
inline constexpr double kProbClamp = 1e-7;

struct LossWeights {
    double ova = 1.0;
    double entropy = 0.1;
    double domain = 1.0;

    bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
    double closed_ce = 0.0;
    double ova = 0.0;
    double entropy = 0.0;
    double domain_adv = 0.0;
    double total = 0.0;
    LossWeights weights;

    double recompute_total() const {
        return closed_ce + weights.ova * ova + weights.entropy * entropy + weights.domain * domain_adv;
    }
};

// ---------------------------------------------------------------------------
// Closed-set cross entropy

inline double closed_set_ce(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw std::out_of_range("closed_set_ce: label " + std::to_string(label) + " out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

/// d/dlogits = softmax - onehot(label).
inline std::vector<double> closed_set_ce_grad(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw std::out_of_range("closed_set_ce: label out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> g(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += (g[i] = std::exp(logits[i] - m));
    for (double& v : g) v /= sum;
    g[static_cast<std::size_t>(label)] -= 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// Top-k one-vs-all loss

/// The min(k, K-1) negatives with the largest known probability. Ties go to
/// the lower class index.
inline std::vector<int> hardest_negatives(std::span<const double> known_prob, int label, int k) {
    const int classes = static_cast<int>(known_prob.size());
    if (label < 0 || label >= classes) throw std::out_of_range("ova_loss_topk: label out of range");
    if (k < 1) throw std::invalid_argument("ova_loss_topk: k must be >= 1");
    std::vector<int> negatives;
    for (int j = 0; j < classes; ++j)
        if (j != label) negatives.push_back(j);
    const auto m = static_cast<std::size_t>(std::min(k, classes - 1));
    std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(m), negatives.end(),
                      [&](int a, int b) {
                          const double pa = known_prob[static_cast<std::size_t>(a)];
                          const double pb = known_prob[static_cast<std::size_t>(b)];
                          return pa != pb ? pa > pb : a < b;
                      });
    negatives.resize(m);
    return negatives;
}

/// -log p_label - mean over the hardest negatives of log(1 - p_j).
inline double ova_loss_topk(const OpenSetScores& scores, int label, int k) {
    const auto negatives = hardest_negatives(scores.known_prob, label, k);
    double loss = -scores.log_known[static_cast<std::size_t>(label)];
    if (negatives.empty()) return loss;
    double neg = 0.0;
    for (int j : negatives) neg -= scores.log_unknown[static_cast<std::size_t>(j)];
    return loss + neg / static_cast<double>(negatives.size());
}

/// Gradient with respect to interleaved (pos, neg) logits.
inline std::vector<double> ova_loss_topk_grad(const OpenSetScores& scores, int label, int k) {
    const auto negatives = hardest_negatives(scores.known_prob, label, k);
    std::vector<double> g(2 * scores.classes(), 0.0);
    // d/d(pos - neg) of -log p is -(1 - p); of -log(1 - p) it is p.
    const auto l = static_cast<std::size_t>(label);
    const double d_label = -(1.0 - scores.known_prob[l]);
    g[2 * l] += d_label;
    g[2 * l + 1] -= d_label;
    if (!negatives.empty()) {
        const double inv_m = 1.0 / static_cast<double>(negatives.size());
        for (int j : negatives) {
            const auto jj = static_cast<std::size_t>(j);
            const double d = scores.known_prob[jj] * inv_m;
            g[2 * jj] += d;
            g[2 * jj + 1] -= d;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Open-set entropy

/// Mean binary entropy over the K heads, with 0 ln 0 := 0.
inline double open_entropy(const OpenSetScores& scores) {
    if (scores.classes() == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < scores.classes(); ++k) {
        const double p = scores.known_prob[k];
        const double q = 1.0 - p;
        double h = 0.0;
        if (p > 0.0) h -= p * scores.log_known[k];
        if (q > 0.0) h -= q * scores.log_unknown[k];
        sum += h;
    }
    return sum / static_cast<double>(scores.classes());
}

inline double open_entropy(std::span<const double> known_prob) {
    return open_entropy(OpenSetScores::from_probabilities(known_prob));
}

/// dH/d(pos - neg) = -(pos - neg) p (1 - p), averaged over K.
inline std::vector<double> open_entropy_grad(const OpenSetScores& scores) {
    std::vector<double> g(2 * scores.classes(), 0.0);
    const double inv_k = 1.0 / static_cast<double>(scores.classes());
    for (std::size_t k = 0; k < scores.classes(); ++k) {
        const double p = scores.known_prob[k];
        const double diff = scores.logit_pairs[k][0] - scores.logit_pairs[k][1];
        const double d = -diff * p * (1.0 - p) * inv_k;
        g[2 * k] = d;
        g[2 * k + 1] = -d;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Unknown weight and domain-adversarial loss

/// 1 - known_prob at the closed-set argmax. A constant for differentiation.
inline double unknown_weight(const OpenSetScores& scores, std::span<const double> closed_logits) {
    const int y = argmax(closed_logits);
    if (static_cast<std::size_t>(y) >= scores.classes())
        throw std::invalid_argument("unknown_weight: closed and open heads disagree on class count");
    return 1.0 - scores.known_prob[static_cast<std::size_t>(y)];
}

/// -mean_s log D - mean_t w log(1 - D), probabilities clamped to [1e-7, 1 - 1e-7].
inline double domain_adversarial_loss(std::span<const double> d_source, std::span<const double> d_target,
                                      std::span<const double> w_target) {
    if (d_target.size() != w_target.size())
        throw std::invalid_argument("domain_adversarial_loss: target probabilities and weights differ in length");
    auto clamp = [](double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); };
    double src = 0.0;
    for (double d : d_source) src -= std::log(clamp(d));
    double tgt = 0.0;
    for (std::size_t i = 0; i < d_target.size(); ++i) tgt -= w_target[i] * std::log1p(-clamp(d_target[i]));
    double loss = 0.0;
    if (!d_source.empty()) loss += src / static_cast<double>(d_source.size());
    if (!d_target.empty()) loss += tgt / static_cast<double>(d_target.size());
    return loss;
}

struct DomainLossGrad {
    std::vector<double> d_source;  // dL/dD for each source sample
    std::vector<double> d_target;
};

/// Zero where the clamp is active.
inline DomainLossGrad domain_adversarial_loss_grad(std::span<const double> d_source, std::span<const double> d_target,
                                                   std::span<const double> w_target) {
    if (d_target.size() != w_target.size())
        throw std::invalid_argument("domain_adversarial_loss: target probabilities and weights differ in length");
    auto inside = [](double p) { return p > kProbClamp && p < 1.0 - kProbClamp; };
    DomainLossGrad g;
    g.d_source.resize(d_source.size(), 0.0);
    g.d_target.resize(d_target.size(), 0.0);
    const double ns = static_cast<double>(d_source.size());
    const double nt = static_cast<double>(d_target.size());
    for (std::size_t i = 0; i < d_source.size(); ++i)
        if (inside(d_source[i])) g.d_source[i] = -1.0 / (ns * d_source[i]);
    for (std::size_t i = 0; i < d_target.size(); ++i)
        if (inside(d_target[i])) g.d_target[i] = w_target[i] / (nt * (1.0 - d_target[i]));
    return g;
}

}  // namespace unida
