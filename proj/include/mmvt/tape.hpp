#pragma once

#include <functional>
#include <vector>

#include "mmvt/tensor.hpp"

namespace mmvt {

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order by construction, and backward() walks the list once in
// reverse. One tape per training step; nesting is rejected. While a Tape is
// alive it is the thread's active tape and every op routes through it.
class Tape {
public:
    // returns one gradient per parent, in parent order; entries for parents
    // that do not need gradients are left empty
    using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // marks t as a leaf whose gradient should be produced by backward()
    void watch(Tensor& t);

    int record(const char* op, std::vector<int> parents, BackwardFn fn);

    // true when t carries a live node id on this tape
    bool tracked(const Tensor& t) const { return t.tape_id() == id_ && t.node() >= 0; }

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t id() const { return id_; }

    // loss must be a scalar tracked on this tape; returns per-node gradients
    std::vector<Tensor> backward(const Tensor& loss) const;

    // gradient lookup after backward(); empty tensor if none reached t
    static const Tensor& grad_of(const std::vector<Tensor>& grads, const Tensor& t);

private:
    struct Node {
        const char* op;
        std::vector<int> parents;
        BackwardFn fn;  // null for leaves
    };

    std::vector<Node> nodes_;
    std::uint64_t id_;
};

}  // namespace mmvt
