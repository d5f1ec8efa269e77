#include "sivit/optimizer.hpp"

#include <cmath>
#include <utility>

#include "sivit/errors.hpp"

namespace sivit {

double cosine_lr(int step, int total_steps, double lr0) {
    if (total_steps < 1 || step < 0 || step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) +
                            " outside [0, " + std::to_string(total_steps) + "]");
    }
    if (lr0 <= 0.0) throw ContractError("cosine_lr: lr0 must be positive");
    const double lr_min = lr0 / 20.0;
    if (step == 0) return lr0;  // keep the endpoints exact
    if (step == total_steps) return lr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * t));
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double weight_decay)
    : weight_decay_(weight_decay) {
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (params.empty()) throw ContractError("Adam: no parameters");
    slots_.reserve(params.size());
    for (auto& [name, t] : params) {
        if (!t.defined() || !t.requires_grad()) {
            throw ContractError("Adam: parameter '" + name + "' is not trainable");
        }
        Slot s;
        s.param = t;
        s.m.assign(t.data().size(), 0.0);
        s.v.assign(t.data().size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::step(double lr) {
    if (lr <= 0.0) throw ContractError("Adam::step: lr must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        auto& p = s.param.data();
        const std::vector<double>* g =
            s.param.has_grad() ? &std::as_const(s.param).grad() : nullptr;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            s.m[i] = kBeta1 * s.m[i] + (1.0 - kBeta1) * gi;
            s.v[i] = kBeta2 * s.v[i] + (1.0 - kBeta2) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay_ * p[i]);
            if (!std::isfinite(p[i])) {
                throw NumericError("Adam::step: parameter became non-finite");
            }
        }
    }
}

}  // namespace sivit
