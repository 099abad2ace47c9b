#include "mmvt/tape.hpp"

#include <atomic>

namespace mmvt {

namespace {
thread_local Tape* g_active = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

void accumulate(Tensor& into, const Tensor& add) {
    if (into.empty()) {
        into = add;
        into.clear_node();
        into.set_requires_grad(false);
        return;
    }
    if (into.dims() != add.dims() || into.dtype() != add.dtype())
        throw std::runtime_error("tape: gradient shape/dtype mismatch during accumulation");
    const std::size_t n = into.size();
    if (into.dtype() == DType::f32) {
        auto a = into.data<float>();
        auto b = add.data<float>();
        for (std::size_t i = 0; i < n; ++i) a[i] += b[i];
    } else {
        auto a = into.data<double>();
        auto b = add.data<double>();
        for (std::size_t i = 0; i < n; ++i) a[i] += b[i];
    }
}
}  // namespace

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {
    if (g_active) throw std::logic_error("tape: nested tapes are not supported");
    g_active = this;
}

Tape::~Tape() { g_active = nullptr; }

Tape* Tape::active() { return g_active; }

void Tape::watch(Tensor& t) {
    if (t.empty()) throw std::runtime_error("tape: cannot watch empty tensor");
    if (tracked(t)) return;
    nodes_.push_back(Node{"leaf", {}, nullptr});
    t.set_requires_grad(true);
    t.set_node(id_, static_cast<int>(nodes_.size()) - 1);
}

int Tape::record(const char* op, std::vector<int> parents, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(parents), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<Tensor> Tape::backward(const Tensor& loss) const {
    if (!tracked(loss)) throw std::runtime_error("tape: loss is not tracked on this tape");
    if (loss.size() != 1) throw std::runtime_error("tape: loss must be a scalar");

    // suspend recording so gradient rules never append to the tape mid-walk
    struct Suspend {
        Tape* saved;
        Suspend() : saved(g_active) { g_active = nullptr; }
        ~Suspend() { g_active = saved; }
    } suspend;

    std::vector<Tensor> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.node())] = Tensor::full({1}, 1.0, loss.dtype());

    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        const Tensor& g = grads[static_cast<std::size_t>(i)];
        if (g.empty() || !node.fn) continue;
        std::vector<Tensor> parent_grads = node.fn(g);
        if (parent_grads.size() != node.parents.size())
            throw std::logic_error("tape: backward rule returned wrong arity");
        for (std::size_t p = 0; p < node.parents.size(); ++p) {
            const int pid = node.parents[p];
            if (pid < 0 || parent_grads[p].empty()) continue;
            accumulate(grads[static_cast<std::size_t>(pid)], parent_grads[p]);
        }
    }
    return grads;
}

const Tensor& Tape::grad_of(const std::vector<Tensor>& grads, const Tensor& t) {
    static const Tensor empty;
    if (t.node() < 0 || static_cast<std::size_t>(t.node()) >= grads.size()) return empty;
    return grads[static_cast<std::size_t>(t.node())];
}

}  // namespace mmvt
