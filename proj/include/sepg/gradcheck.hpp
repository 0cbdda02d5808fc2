#pragma once

#include <functional>
#include <vector>

#include "sepg/autodiff.hpp"
#include "sepg/rng.hpp"
#include "sepg/tensor.hpp"

namespace sepg {

struct GradCheckOptions {
    double step = 1e-4;        // central-difference step on values scaled O(1)
    int64_t max_coords = -1;   // per tensor; -1 sweeps every coordinate
    uint64_t seed = 17;        // coordinate subsampling seed
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checked_coords = 0;
    int worst_input = -1;
    int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares the analytic gradient of a scalar-valued function against central
// differences. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Throws OracleError if the function evaluates to a non-finite value.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                  GradCheckOptions opt = {});

// Multi-input variant; the function receives one Var per input tensor.
GradCheckReport grad_check_multi(const std::function<Var(const std::vector<Var>&)>& f,
                                 const std::vector<Tensor>& inputs, GradCheckOptions opt = {});

} // namespace sepg
