#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "unida/net.hpp"

namespace unida {

enum class OptimizerKind { adaptive, momentum };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adaptive ? "adaptive" : "momentum"; }

inline OptimizerKind optimizer_kind_from(const std::string& s) {
    if (s == "adaptive") return OptimizerKind::adaptive;
    if (s == "momentum") return OptimizerKind::momentum;
    throw std::invalid_argument("optimizer must be 'adaptive' or 'momentum', got '" + s + "'");
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    bool operator==(const AdamWConfig&) const = default;
};

/// One AdamW update on a tensor. `t` is the 1-based step count.
/// Weight decay is decoupled: theta <- theta - lr * wd * theta before the moment step.
inline void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                         double lr, long t, const AdamWConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= lr * cfg.weight_decay * theta[i];
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

/// Heavy-ball SGD: buf <- mu * buf + g; theta <- theta - lr * buf.
inline void momentum_update(std::span<double> theta, std::span<const double> grad, std::span<double> buf, double lr,
                            double mu) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        buf[i] = mu * buf[i] + grad[i];
        theta[i] -= lr * buf[i];
    }
}

/// Learning rate per parameter group for one step.
struct GroupRates {
    double heads = 0.0;     // open-set head and discriminator
    double backbone = 0.0;  // extractor and closed-set head

    double for_group(ParamGroup g) const {
        return (g == ParamGroup::open_head || g == ParamGroup::discriminator) ? heads : backbone;
    }
};

/// Optimizer state over a whole ModelParams. Groups excluded via `frozen`
/// are neither updated nor advance their state.
class ModelOptimizer {
public:
    ModelOptimizer(OptimizerKind kind, const NetDims& dims, AdamWConfig adamw = {}, double momentum = 0.9)
        : kind_(kind), adamw_(adamw), momentum_(momentum), first_(ModelParams::zeros(dims)),
          second_(ModelParams::zeros(dims)) {}

    OptimizerKind kind() const { return kind_; }
    long steps() const { return t_; }

    void step(ModelParams& params, const ModelParams& grad, const GroupRates& rates, bool update_discriminator) {
        ++t_;
        std::vector<std::span<double>> theta, m, v;
        std::vector<std::span<const double>> g;
        std::vector<ParamGroup> groups;
        params.for_each_tensor([&](const char*, ParamGroup grp, bool, std::span<double> s, int) {
            theta.push_back(s);
            groups.push_back(grp);
        });
        grad.for_each_tensor([&](const char*, ParamGroup, bool, std::span<const double> s, int) { g.push_back(s); });
        first_.for_each_tensor([&](const char*, ParamGroup, bool, std::span<double> s, int) { m.push_back(s); });
        second_.for_each_tensor([&](const char*, ParamGroup, bool, std::span<double> s, int) { v.push_back(s); });
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (groups[i] == ParamGroup::discriminator && !update_discriminator) continue;
            const double lr = rates.for_group(groups[i]);
            if (kind_ == OptimizerKind::adaptive)
                adamw_update(theta[i], g[i], m[i], v[i], lr, t_, adamw_);
            else
                momentum_update(theta[i], g[i], m[i], lr, momentum_);
        }
    }

private:
    OptimizerKind kind_;
    AdamWConfig adamw_;
    double momentum_;
    ModelParams first_;   // Adam m, or momentum buffer
    ModelParams second_;  // Adam v
    long t_ = 0;
};

}  // namespace unida
