#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mtsnet/tensor.hpp"

namespace mtsnet::gradcheck {

/// A differentiable computation evaluated in the 64-bit path.
using Function = std::function<Tensor64(const std::vector<Tensor64>&)>;

struct Options {
    double step = 1e-3;
    std::uint64_t seed = 0;
};

struct Comparison {
    /// max over elements of |analytic - numeric| / (|numeric| + 1e-8)
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t elements = 0;
    /// relu inputs closer than 2*step to 0 at the base point.
    std::size_t kink_hits = 0;
};

/// Compares backward() against central differences of sum(R * f(inputs)),
/// where R is a fixed random tensor shaped like the output. Inputs are not
/// modified.
Comparison compare(const Function& f, const std::vector<Tensor64>& inputs, const Options& options = {});

/// One random instance of a registered op.
struct Instance {
    Function f;
    std::vector<Tensor64> inputs;
};

using InstanceFactory = std::function<Instance(std::mt19937_64&)>;

struct Entry {
    std::string name;
    InstanceFactory make;
};

/// Every op the gradient checker knows by name.
const std::vector<Entry>& registry();
std::vector<std::string> registered_names();

struct Summary {
    std::string op;
    std::size_t trials = 0;
    std::size_t passed = 0;
    /// Instances redrawn because a relu input sat within 2*step of its kink.
    std::size_t redrawn = 0;
    double worst_rel_error = 0.0;
};

/// Runs `trials` random instances of `op`; a trial passes when its
/// max_rel_error < tolerance. Throws ConfigError for unknown names.
Summary run(const std::string& op, std::size_t trials, double tolerance, std::uint64_t seed,
            double step = 1e-3);

}  // namespace mtsnet::gradcheck
