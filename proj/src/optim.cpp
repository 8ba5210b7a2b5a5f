#include "hyperlora/optim.hpp"

#include <cmath>

namespace hyperlora {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state) {
    const AdamConfig& c = state.cfg;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (p.shape() != g.shape())
            throw ShapeError("adam_step gradient shape " + g.shape().str() + " vs param " + p.shape().str() +
                             " for '" + name + "'");
        if (!g.all_finite()) throw NumericsError("non-finite gradient for '" + name + "'");
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor(p.shape())).first;
            state.v.emplace(name, Tensor(p.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        for (int64_t i = 0; i < p.numel(); ++i) {
            const float gi = g.at(i);
            m.at(i) = c.beta1 * m.at(i) + (1.0f - c.beta1) * gi;
            v.at(i) = c.beta2 * v.at(i) + (1.0f - c.beta2) * gi * gi;
            const float mhat = m.at(i) / static_cast<float>(bc1);
            const float vhat = v.at(i) / static_cast<float>(bc2);
            p.at(i) -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

}  // namespace hyperlora
