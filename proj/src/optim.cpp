#include "slvm/optim.hpp"

#include <cmath>

namespace slvm {
namespace optim {

void adam_step(ParamTable& params, AdamState& state, const AdamConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != p->value.size()) m.assign(p->value.size(), 0.0);
        if (v.size() != p->value.size()) v.assign(p->value.size(), 0.0);
        const bool has_grad = p->grad.size() == p->value.size();
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double g = has_grad ? p->grad[i] : 0.0;
            if (!std::isfinite(g)) {
                throw numeric_error("non-finite gradient in parameter " + name);
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void zero_grads(ParamTable& params) {
    for (auto& [name, p] : params) {
        (void)name;
        p->ensure_grad();
        p->zero_grad();
    }
}

double clip_grad_norm(ParamTable& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        (void)name;
        for (double g : p->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& [name, p] : params) {
            (void)name;
            for (double& g : p->grad) g *= scale;
        }
    }
    return norm;
}

}  // namespace optim
}  // namespace slvm
