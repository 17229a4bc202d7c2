#include "mtsnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mtsnet/autograd.hpp"
#include "mtsnet/ops.hpp"

namespace mtsnet::gradcheck {

namespace {

double weighted_sum(const Tensor64& out, const Tensor64& r) {
    double acc = 0.0;
    const auto o = out.data();
    const auto w = r.data();
    for (std::size_t i = 0; i < o.size(); ++i) acc += o[i] * w[i];
    return acc;
}

}  // namespace

Comparison compare(const Function& f, const std::vector<Tensor64>& inputs, const Options& options) {
    std::vector<Tensor64> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(t.clone().set_requires_grad(true));

    Comparison result;
    Tape::current().clear();
    Tensor64 out;
    {
        KinkWatch watch(2.0 * options.step);
        out = f(leaves);
        result.kink_hits = watch.hits();
    }
    const Tensor64 r(out.shape(), NormalInit{0.0, 1.0, options.seed});
    backward(sum(mul(out, r)));

    std::vector<Tensor64> probe;
    probe.reserve(inputs.size());
    for (const auto& t : inputs) probe.push_back(t.clone());

    NoGradGuard no_grad;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        auto values = probe[i].mutable_data();
        const auto analytic = leaves[i].grad();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + options.step;
            const double up = weighted_sum(f(probe), r);
            values[j] = saved - options.step;
            const double down = weighted_sum(f(probe), r);
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic.empty() ? 0.0 : analytic[j];
            const double err = std::abs(a - numeric);
            result.max_abs_error = std::max(result.max_abs_error, err);
            result.max_rel_error = std::max(result.max_rel_error, err / (std::abs(numeric) + 1e-8));
            ++result.elements;
        }
    }
    return result;
}

std::vector<std::string> registered_names() {
    std::vector<std::string> names;
    for (const auto& e : registry()) names.push_back(e.name);
    return names;
}

Summary run(const std::string& op, std::size_t trials, double tolerance, std::uint64_t seed, double step) {
    const auto& entries = registry();
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == op; });
    if (it == entries.end()) throw ConfigError("unknown gradcheck op '" + op + "'");

    constexpr std::size_t max_redraws_per_trial = 50;
    Summary summary;
    summary.op = op;
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t attempt = 0;; ++attempt) {
            Instance inst = it->make(rng);
            const Comparison c = compare(inst.f, inst.inputs, {step, rng()});
            if (c.kink_hits > 0 && attempt < max_redraws_per_trial) {
                ++summary.redrawn;
                continue;
            }
            ++summary.trials;
            if (c.max_rel_error < tolerance) ++summary.passed;
            summary.worst_rel_error = std::max(summary.worst_rel_error, c.max_rel_error);
            break;
        }
    }
    return summary;
}

}  // namespace mtsnet::gradcheck
