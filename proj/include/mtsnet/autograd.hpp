#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mtsnet/tensor.hpp"

namespace mtsnet {

/// Ordered record of the differentiable operations executed on this thread.
///
/// Operations append a backward closure when gradient recording is enabled
/// and at least one operand requires a gradient. Because an operation can only
/// consume tensors that already exist, insertion order is a topological order:
/// running the closures in reverse visits every node once, after all of its
/// consumers. The tape is cleared after each backward pass.
class Tape {
public:
    using Backward = std::function<void()>;

    /// The calling thread's tape.
    static Tape& current();

    void record(Backward fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Runs every recorded closure in reverse order, then clears the tape.
    /// Returns the number of nodes visited.
    std::size_t run_backward();

private:
    std::vector<Backward> nodes_;
};

bool grad_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// While alive, ops with a non-differentiable point (relu at 0) count the
/// inputs lying within `margin` of it on this thread. A central difference
/// taken across such a point measures a secant, not a derivative.
class KinkWatch {
public:
    explicit KinkWatch(double margin);
    ~KinkWatch();
    KinkWatch(const KinkWatch&) = delete;
    KinkWatch& operator=(const KinkWatch&) = delete;

    std::size_t hits() const;

private:
    double previous_margin_;
    std::size_t start_hits_;
};

/// Accumulates d(loss)/d(leaf) into every leaf that requires a gradient.
/// `loss` must hold exactly one element. Gradients add onto existing buffers.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Node count visited by the most recent backward pass on this thread.
std::size_t last_backward_visits();

namespace detail {

/// Active KinkWatch margin, 0 when none.
double kink_margin();
void note_kinks(std::size_t count);

/// Whether an op over these operands should be recorded.
template <typename T>
bool should_record(std::initializer_list<const BasicTensor<T>*> inputs) {
    if (!grad_enabled()) return false;
    for (const BasicTensor<T>* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
using StoragePtr = std::shared_ptr<typename BasicTensor<T>::Storage>;

/// Gradient buffer of `s`, allocated with zeros on first use.
template <typename T>
T* grad_buffer(typename BasicTensor<T>::Storage& s) {
    if (s.grad.empty()) s.grad.assign(s.data.size(), T{0});
    return s.grad.data();
}

}  // namespace detail

}  // namespace mtsnet
