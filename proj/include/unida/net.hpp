#pragma once

// Feature extractor F, closed-set head, one-vs-all open-set head and domain
// discriminator D. Batched passes keep one sample per column.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "unida/common.hpp"
#include "unida/synth_data.hpp"

namespace unida {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using FeatureVector = Eigen::VectorXd;

struct NetDims {
    int input_side = 28;
    int hidden1 = 256;
    int hidden2 = 128;
    int feature = 64;
    int classes = 8;
    int disc_hidden = 64;

    int input() const { return input_side * input_side; }
    bool operator==(const NetDims&) const = default;
};

/// y = W x + b, W stored out × in.
struct Dense {
    Matrix weight;
    Vector bias;

    Dense() = default;
    Dense(int in, int out) : weight(Matrix::Zero(out, in)), bias(Vector::Zero(out)) {}

    /// Column by column, so each sample's output is bitwise independent of
    /// the rest of the batch.
    Matrix forward(const Matrix& x) const {
        Matrix y(weight.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) y.col(j).noalias() = weight * x.col(j) + bias;
        return y;
    }

    /// Accumulates dW, db into `grad` and returns dx.
    Matrix backward(const Matrix& x, const Matrix& dy, Dense& grad) const {
        grad.weight.noalias() += dy * x.transpose();
        grad.bias += dy.rowwise().sum();
        return weight.transpose() * dy;
    }
};

/// Which sub-network a parameter tensor belongs to.
enum class ParamGroup { extractor, closed_head, open_head, discriminator };

inline const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::extractor: return "extractor";
        case ParamGroup::closed_head: return "closed_head";
        case ParamGroup::open_head: return "open_head";
        case ParamGroup::discriminator: return "discriminator";
    }
    return "?";
}

/// Parameters of all four sub-networks. Also used as the gradient container.
struct ModelParams {
    NetDims dims;
    Dense ext1, ext2, ext3;
    Dense closed_head;
    Dense open_head;  // rows 2k (positive) and 2k+1 (negative) form the pair of class k
    Dense disc1, disc2;

    static ModelParams zeros(const NetDims& d) {
        ModelParams p;
        p.dims = d;
        p.ext1 = Dense(d.input(), d.hidden1);
        p.ext2 = Dense(d.hidden1, d.hidden2);
        p.ext3 = Dense(d.hidden2, d.feature);
        p.closed_head = Dense(d.feature, d.classes);
        p.open_head = Dense(d.feature, 2 * d.classes);
        p.disc1 = Dense(d.feature, d.disc_hidden);
        p.disc2 = Dense(d.disc_hidden, 1);
        return p;
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    static ModelParams initialized(const NetDims& d, std::uint64_t seed) {
        ModelParams p = zeros(d);
        Rng rng = derive_rng(seed, {0x696e6974ULL});
        p.for_each_tensor([&](const char*, ParamGroup, bool is_bias, std::span<double> values, int fan_in) {
            if (is_bias) return;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : values) v = dist(rng);
        });
        return p;
    }

    /// Visits every tensor in checkpoint order:
    ///   ext1.W ext1.b ext2.W ext2.b ext3.W ext3.b closed.W closed.b open.W open.b disc1.W disc1.b disc2.W disc2.b
    /// Weight spans are Eigen column-major storage.
    template <class F>
    void for_each_tensor(F&& fn) {
        visit_layers(*this, fn);
    }
    template <class F>
    void for_each_tensor(F&& fn) const {
        visit_layers(*this, fn);
    }

    std::size_t size() const {
        std::size_t n = 0;
        for_each_tensor([&](const char*, ParamGroup, bool, auto values, int) { n += values.size(); });
        return n;
    }

    bool finite() const {
        bool ok = true;
        for_each_tensor([&](const char*, ParamGroup, bool, auto values, int) { ok = ok && all_finite(values); });
        return ok;
    }

    void set_zero() {
        for_each_tensor([](const char*, ParamGroup, bool, std::span<double> v, int) { std::fill(v.begin(), v.end(), 0.0); });
    }

private:
    template <class Self, class F>
    static void visit_layers(Self& self, F& fn) {
        visit(fn, "ext1", ParamGroup::extractor, self.ext1);
        visit(fn, "ext2", ParamGroup::extractor, self.ext2);
        visit(fn, "ext3", ParamGroup::extractor, self.ext3);
        visit(fn, "closed", ParamGroup::closed_head, self.closed_head);
        visit(fn, "open", ParamGroup::open_head, self.open_head);
        visit(fn, "disc1", ParamGroup::discriminator, self.disc1);
        visit(fn, "disc2", ParamGroup::discriminator, self.disc2);
    }

    template <class F, class L>
    static void visit(F& fn, const char* name, ParamGroup g, L& layer) {
        using Elem = std::conditional_t<std::is_const_v<L>, const double, double>;
        const int fan_in = static_cast<int>(layer.weight.cols());
        fn(name, g, false, std::span<Elem>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())), fan_in);
        fn(name, g, true, std::span<Elem>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())), fan_in);
    }
};

// ---------------------------------------------------------------------------
// Feature extractor: input -> tanh(hidden1) -> tanh(hidden2) -> linear feature

struct ExtractorTrace {
    Matrix input;
    Matrix h1;
    Matrix h2;
    Matrix features;
};

/// Stacks crops as columns.
inline Matrix stack_images(std::span<const Image> crops, int expected_side) {
    Matrix x(expected_side * expected_side, static_cast<Eigen::Index>(crops.size()));
    for (std::size_t i = 0; i < crops.size(); ++i) {
        if (crops[i].side != expected_side)
            throw std::invalid_argument("extract_features: crop side " + std::to_string(crops[i].side) +
                                        " does not match model input side " + std::to_string(expected_side));
        x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(crops[i].pixels.data(), expected_side * expected_side);
    }
    return x;
}

inline ExtractorTrace extract_features(const ModelParams& p, Matrix inputs) {
    if (inputs.rows() != p.dims.input())
        throw std::invalid_argument("extract_features: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                                    std::to_string(p.dims.input()));
    ExtractorTrace t;
    t.input = std::move(inputs);
    t.h1 = p.ext1.forward(t.input).array().tanh().matrix();
    t.h2 = p.ext2.forward(t.h1).array().tanh().matrix();
    t.features = p.ext3.forward(t.h2);
    return t;
}

inline FeatureVector extract_features(const ModelParams& p, const Image& crop) {
    return extract_features(p, stack_images(std::span<const Image>(&crop, 1), p.dims.input_side)).features.col(0);
}

inline void extractor_backward(const ModelParams& p, const ExtractorTrace& t, const Matrix& d_features, ModelParams& grad) {
    Matrix d_h2 = p.ext3.backward(t.h2, d_features, grad.ext3);
    Matrix d_a2 = (d_h2.array() * (1.0 - t.h2.array().square())).matrix();
    Matrix d_h1 = p.ext2.backward(t.h1, d_a2, grad.ext2);
    Matrix d_a1 = (d_h1.array() * (1.0 - t.h1.array().square())).matrix();
    p.ext1.backward(t.input, d_a1, grad.ext1);
}

// ---------------------------------------------------------------------------
// Closed-set head

inline Matrix closed_logits(const ModelParams& p, const Matrix& features) { return p.closed_head.forward(features); }

inline Vector closed_logits(const ModelParams& p, const FeatureVector& f) {
    return p.closed_head.forward(Matrix(f)).col(0);
}

/// Index of the largest value; ties go to the lowest index.
inline int argmax(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmax of empty range");
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

inline int argmax(const Vector& v) { return argmax(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))); }

inline Vector softmax(const Vector& logits) {
    Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
}

// ---------------------------------------------------------------------------
// Open-set head: K one-vs-all logit pairs

struct OpenSetScores {
    std::vector<std::array<double, 2>> logit_pairs;  // {positive, negative}
    std::vector<double> known_prob;
    std::vector<double> log_known;
    std::vector<double> log_unknown;

    std::size_t classes() const { return known_prob.size(); }

    /// Interleaved pos0, neg0, pos1, neg1, ...
    static OpenSetScores from_logits(std::span<const double> interleaved) {
        if (interleaved.size() % 2 != 0) throw std::invalid_argument("open-set logits must come in pairs");
        OpenSetScores s;
        const std::size_t k = interleaved.size() / 2;
        s.logit_pairs.resize(k);
        s.known_prob.resize(k);
        s.log_known.resize(k);
        s.log_unknown.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            const double pos = interleaved[2 * i];
            const double neg = interleaved[2 * i + 1];
            s.logit_pairs[i] = {pos, neg};
            const double m = std::max(pos, neg);
            const double ep = std::exp(pos - m);
            const double en = std::exp(neg - m);
            const double lse = m + std::log(ep + en);
            s.known_prob[i] = ep / (ep + en);
            s.log_known[i] = pos - lse;
            s.log_unknown[i] = neg - lse;
        }
        return s;
    }

    /// Builds scores from known probabilities directly (logit pair (logit p, 0)).
    /// Log terms are floored at log(1e-7) when p touches 0 or 1.
    static OpenSetScores from_probabilities(std::span<const double> probs) {
        constexpr double floor = 1e-7;
        OpenSetScores s;
        for (double p : probs) {
            if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("known probability outside [0, 1]");
            const double pc = std::clamp(p, floor, 1.0 - floor);
            s.logit_pairs.push_back({std::log(pc) - std::log1p(-pc), 0.0});
            s.known_prob.push_back(p);
            s.log_known.push_back(p > 0.0 ? std::log(p) : std::log(floor));
            s.log_unknown.push_back(p < 1.0 ? std::log1p(-p) : std::log(floor));
        }
        return s;
    }
};

inline Matrix open_logits(const ModelParams& p, const Matrix& features) { return p.open_head.forward(features); }

inline OpenSetScores open_scores(const ModelParams& p, const FeatureVector& f) {
    Vector z = p.open_head.forward(Matrix(f)).col(0);
    return OpenSetScores::from_logits(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
}

inline OpenSetScores open_scores_column(const Matrix& logits, Eigen::Index col) {
    Vector z = logits.col(col);
    return OpenSetScores::from_logits(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
}

// ---------------------------------------------------------------------------
// Domain discriminator behind gradient reversal

/// Identity forward; backward multiplies incoming gradients by -lambda.
struct GradReversal {
    double lambda = 1.0;

    void validate() const {
        if (!std::isfinite(lambda) || lambda < 0.0) throw std::invalid_argument("gradient reversal lambda must be finite and >= 0");
    }
    Matrix backward(const Matrix& grad) const { return -lambda * grad; }
};

struct DiscriminatorTrace {
    Matrix hidden;
    RowVector logit;
    RowVector prob;  // D(F(x)) = probability of source
};

inline double sigmoid(double a) {
    if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

inline DiscriminatorTrace discriminate(const ModelParams& p, const Matrix& features) {
    DiscriminatorTrace t;
    t.hidden = p.disc1.forward(features).array().tanh().matrix();
    t.logit = p.disc2.forward(t.hidden).row(0);
    t.prob = t.logit.unaryExpr([](double a) { return sigmoid(a); });
    return t;
}

inline double discriminate(const ModelParams& p, const FeatureVector& f) { return discriminate(p, Matrix(f)).prob(0); }

/// Backpropagates d(loss)/d(logit) through D. Discriminator gradients are
/// accumulated unscaled; the returned feature gradient has passed through the
/// reversal layer (or not, when `reverse` is false).
inline Matrix discriminator_backward(const ModelParams& p, const Matrix& features, const DiscriminatorTrace& t,
                                     const RowVector& d_logit, const GradReversal& grl, ModelParams& grad,
                                     bool reverse = true) {
    Matrix d_hidden = p.disc2.backward(t.hidden, Matrix(d_logit), grad.disc2);
    Matrix d_pre = (d_hidden.array() * (1.0 - t.hidden.array().square())).matrix();
    Matrix d_features = p.disc1.backward(features, d_pre, grad.disc1);
    return reverse ? grl.backward(d_features) : d_features;
}

}  // namespace unida
