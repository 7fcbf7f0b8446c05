#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sslpdl/nn/tensor.hpp"
#include "sslpdl/random.hpp"

namespace sslpdl::nn {

struct GradCheckResult {
    double max_rel_err = 0;
    std::size_t checked = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0, worst_numeric = 0;
};

inline double relative_error(double a, double n, double floor = 1e-8) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central differences on `samples` random coordinates of x (all of them when
// x is smaller). f must evaluate the loss at the current contents of x.
inline GradCheckResult grad_check(std::vector<double>& x, const std::vector<double>& analytic,
                                  const std::function<double()>& f, std::size_t samples, double eps,
                                  std::uint64_t seed, double floor = 1e-8) {
    GradCheckResult r;
    if (x.empty()) return r;
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (samples < x.size()) {
        auto eng = keyed_engine(seed, x.size(), Stream::sampling);
        std::shuffle(idx.begin(), idx.end(), eng);
        idx.resize(samples);
    }
    for (auto i : idx) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double fp = f();
        x[i] = keep - eps;
        const double fm = f();
        x[i] = keep;
        const double num = (fp - fm) / (2 * eps);
        const double err = relative_error(analytic[i], num, floor);
        if (err > r.max_rel_err || r.checked == 0) {
            r.max_rel_err = std::max(err, r.max_rel_err);
            r.worst_index = i;
            r.worst_analytic = analytic[i];
            r.worst_numeric = num;
        }
        ++r.checked;
    }
    return r;
}

// Checks every parameter array of a store; returns the worst result.
inline GradCheckResult grad_check_params(ParamStore<double>& p, const Grads<double>& analytic,
                                         const std::function<double()>& f, std::size_t samples_per_param,
                                         double eps, std::uint64_t seed, double floor = 1e-8) {
    GradCheckResult worst;
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto r = grad_check(p.values[i], analytic.values[i], f, samples_per_param, eps, hash_key({seed, i}), floor);
        worst.checked += r.checked;
        if (r.max_rel_err >= worst.max_rel_err) {
            worst.max_rel_err = r.max_rel_err;
            worst.worst_index = i;
            worst.worst_analytic = r.worst_analytic;
            worst.worst_numeric = r.worst_numeric;
        }
    }
    return worst;
}

} // namespace sslpdl::nn
