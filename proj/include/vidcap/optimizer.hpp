#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/errors.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moment buffers are indexed in the order the parameter list was given at
// init; the same order must be used for every step.
struct AdamState {
    AdamConfig cfg;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    static AdamState init(const std::vector<std::pair<std::string, Tensor*>>& params, AdamConfig cfg) {
        AdamState s;
        s.cfg = cfg;
        for (const auto& [name, t] : params) {
            s.m.emplace_back(t->data.size(), 0.0);
            s.v.emplace_back(t->data.size(), 0.0);
        }
        return s;
    }
};

// One bias-corrected Adam update from the gradients stored in each tensor.
// A non-finite gradient anywhere aborts the whole step: parameters, moments
// and the step counter stay untouched and the function returns false so the
// caller can log the divergence event.
inline bool adam_step(const std::vector<std::pair<std::string, Tensor*>>& params, AdamState& state) {
    if (params.size() != state.m.size())
        throw ConfigError("optimizer state built for " + std::to_string(state.m.size()) + " parameters, got " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor* t = params[i].second;
        if (t->grad.size() != t->data.size() || state.m[i].size() != t->data.size())
            throw ConfigError("parameter " + params[i].first + " does not match its optimizer state");
        for (double g : t->grad)
            if (!std::isfinite(g)) return false;
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor* t = params[i].second;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < t->data.size(); ++j) {
            const double g = t->grad[j];
            m[j] = state.cfg.beta1 * m[j] + (1.0 - state.cfg.beta1) * g;
            v[j] = state.cfg.beta2 * v[j] + (1.0 - state.cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            t->data[j] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
    return true;
}

}  // namespace vidcap
