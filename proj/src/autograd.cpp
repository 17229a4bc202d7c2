#include "mtsnet/autograd.hpp"

namespace mtsnet {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::size_t t_last_visits = 0;
thread_local double t_kink_margin = 0.0;
thread_local std::size_t t_kink_hits = 0;

}  // namespace

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

std::size_t Tape::run_backward() {
    // Closures may capture large activations; move them out so the tape is
    // empty (and reusable) even if a closure throws.
    std::vector<Backward> nodes = std::move(nodes_);
    nodes_.clear();
    std::size_t visits = 0;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        (*it)();
        ++visits;
        *it = nullptr;  // release captured activations as soon as possible
    }
    return visits;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

KinkWatch::KinkWatch(double margin) : previous_margin_(t_kink_margin), start_hits_(t_kink_hits) {
    t_kink_margin = margin;
}

KinkWatch::~KinkWatch() { t_kink_margin = previous_margin_; }

std::size_t KinkWatch::hits() const { return t_kink_hits - start_hits_; }

double detail::kink_margin() { return t_kink_margin; }

void detail::note_kinks(std::size_t count) { t_kink_hits += count; }

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss");
    }
    auto& storage = *loss.storage();
    detail::grad_buffer<T>(storage)[0] += T{1};
    t_last_visits = Tape::current().run_backward();
}

std::size_t last_backward_visits() { return t_last_visits; }

template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace mtsnet
