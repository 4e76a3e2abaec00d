#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vidcap/tensor.hpp"

namespace vidcap {

// Result of checking one parameter tensor against central differences.
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool within(double tol) const { return max_rel_err < tol; }
};

// relative error with a floor so near-zero gradients compare on an
// absolute scale: |a - n| / max(|a|, |n|, 0.01)
inline double grad_rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 0.01});
}

// Central-difference check of a scalar-valued function of named parameters.
// `loss` must rebuild its graph from the tensors' current contents on every
// call. Analytic gradients are taken from each tensor's grad buffer, which
// the caller fills (one backward pass) before invoking the check.
inline GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor*>>& params,
                                  const std::function<double()>& loss, double h = 1e-5) {
    GradCheckReport report;
    for (const auto& [name, t] : params) {
        GradCheckEntry e;
        e.name = name;
        for (std::int64_t i = 0; i < t->numel(); ++i) {
            const double keep = t->data[i];
            t->data[i] = keep + h;
            const double lp = loss();
            t->data[i] = keep - h;
            const double lm = loss();
            t->data[i] = keep;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = t->grad[i];
            const double rel = grad_rel_err(analytic, numeric);
            if (rel > e.max_rel_err) {
                e.max_rel_err = rel;
                e.worst_index = i;
                e.analytic = analytic;
                e.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace vidcap
