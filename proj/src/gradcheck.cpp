#include "sepg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sepg/error.hpp"

namespace sepg {

namespace {

double eval_scalar(const std::function<Var(const std::vector<Var>&)>& f,
                   const std::vector<Tensor>& inputs) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(Var::constant(t));
    Var out = f(vars);
    double v = out.value().item();
    if (!std::isfinite(v)) throw OracleError("objective is non-finite during grad check");
    return v;
}

std::vector<int64_t> pick_coords(int64_t n, int64_t max_coords, Rng& rng) {
    if (max_coords < 0 || max_coords >= n) {
        std::vector<int64_t> all(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        return all;
    }
    // Sampling without replacement keeps the probe spread across the tensor.
    std::vector<int64_t> coords;
    coords.reserve(static_cast<size_t>(max_coords));
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < max_coords; ++i) {
        int64_t j = rng.uniform_int(i, n - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        coords.push_back(pool[static_cast<size_t>(i)]);
    }
    std::sort(coords.begin(), coords.end());
    return coords;
}

} // namespace

GradCheckReport grad_check_multi(const std::function<Var(const std::vector<Var>&)>& f,
                                 const std::vector<Tensor>& inputs, GradCheckOptions opt) {
    // Analytic pass.
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(Var::param(t));
    Var out = f(vars);
    if (!std::isfinite(out.value().item())) {
        throw OracleError("objective is non-finite during grad check");
    }
    backward(out);
    std::vector<Tensor> analytic;
    analytic.reserve(vars.size());
    for (Var& v : vars) analytic.push_back(v.grad());

    GradCheckReport report;
    Rng rng(opt.seed);
    std::vector<Tensor> probe = inputs;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        std::vector<int64_t> coords = pick_coords(inputs[ti].numel(), opt.max_coords, rng);
        for (int64_t ci : coords) {
            double orig = probe[ti][ci];
            probe[ti][ci] = orig + opt.step;
            double fp = eval_scalar(f, probe);
            probe[ti][ci] = orig - opt.step;
            double fm = eval_scalar(f, probe);
            probe[ti][ci] = orig;

            double numeric = (fp - fm) / (2.0 * opt.step);
            double an = analytic[ti][ci];
            double denom = std::max({std::fabs(an), std::fabs(numeric), 1e-8});
            double rel = std::fabs(an - numeric) / denom;
            ++report.checked_coords;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = static_cast<int>(ti);
                report.worst_coord = ci;
                report.worst_analytic = an;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                  GradCheckOptions opt) {
    auto wrap = [&f](const std::vector<Var>& vars) { return f(vars[0]); };
    return grad_check_multi(wrap, {x}, opt).max_rel_err;
}

} // namespace sepg
