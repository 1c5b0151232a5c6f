#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <vector>

#include "smokenet/common.hpp"

namespace smokenet {

// Dense rank-4 tensor with a reverse-mode tape. Each non-leaf tensor keeps
// strong references to its parents plus a closure that routes its gradient
// to them, so a graph stays alive exactly as long as its outputs do.
//
// Scalar is float (training/profiling default) or double (verification).
template <typename S>
struct Tensor : std::enable_shared_from_this<Tensor<S>> {
    using Ptr = std::shared_ptr<Tensor<S>>;

    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;  // allocated lazily; same length as data when present
    std::vector<Ptr> parents;
    std::function<void(Tensor<S>&)> backprop;  // unset on leaves
    const char* op = "";

    Tensor(Shape s, bool req) : shape(s), data(static_cast<std::size_t>(s.numel()), S(0)), requires_grad(req) {}

    Tensor(const Tensor&) = delete;
    Tensor& operator=(const Tensor&) = delete;

    std::int64_t numel() const { return shape.numel(); }
    bool is_leaf() const { return !backprop; }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape.c + c) * shape.h + h) * shape.w + w;
    }
    S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data[static_cast<std::size_t>(index(n, c, h, w))];
    }
    S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data[static_cast<std::size_t>(index(n, c, h, w))];
    }

    S item() const {
        if (numel() != 1) {
            throw ShapeError(format_msg("item: tensor ", shape.str(), " is not a scalar"));
        }
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), S(0));
        }
    }

    void zero_grad() { grad.clear(); }

    void accumulate_grad(const S* g, std::size_t len) {
        ensure_grad();
        for (std::size_t i = 0; i < len; ++i) {
            grad[i] += g[i];
        }
    }

    // Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    // across calls; interior gradients are reset per sweep so that a second
    // backward() exactly doubles every leaf gradient.
    void backward() {
        if (numel() != 1) {
            throw ShapeError(format_msg("backward: loss must be a scalar, got shape ", shape.str()));
        }
        if (!requires_grad) {
            throw Error("backward: loss does not depend on any tensor that requires gradients");
        }

        std::vector<Tensor<S>*> topo;
        std::unordered_set<Tensor<S>*> visited;
        struct Frame {
            Tensor<S>* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({this, 0});
        visited.insert(this);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                Tensor<S>* p = f.node->parents[f.next_parent++].get();
                if (p->requires_grad && visited.insert(p).second) {
                    stack.push_back({p, 0});
                }
            } else {
                topo.push_back(f.node);
                stack.pop_back();
            }
        }

        for (Tensor<S>* node : topo) {
            if (!node->is_leaf()) {
                node->grad.assign(node->data.size(), S(0));
            }
        }
        ensure_grad();
        grad[0] += S(1);

        // Post-order lists inputs before consumers; walk it backwards so each
        // node fires only after every consumer has deposited its gradient.
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            if (!(*it)->is_leaf()) {
                (*it)->backprop(**it);
            }
        }
    }
};

template <typename S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

template <typename S>
TensorPtr<S> make_tensor(Shape shape, bool requires_grad = false) {
    return std::make_shared<Tensor<S>>(shape, requires_grad);
}

template <typename S>
TensorPtr<S> full(Shape shape, S value, bool requires_grad = false) {
    auto t = make_tensor<S>(shape, requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

template <typename S>
TensorPtr<S> zeros(Shape shape, bool requires_grad = false) {
    return make_tensor<S>(shape, requires_grad);
}

template <typename S>
TensorPtr<S> ones(Shape shape, bool requires_grad = false) {
    return full<S>(shape, S(1), requires_grad);
}

template <typename S>
TensorPtr<S> from_values(Shape shape, const std::vector<S>& values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
        throw ShapeError(format_msg("from_values: ", values.size(), " values for shape ", shape.str()));
    }
    auto t = make_tensor<S>(shape, requires_grad);
    t->data = values;
    return t;
}

template <typename S>
TensorPtr<S> uniform(Shape shape, std::mt19937_64& rng, S lo, S hi, bool requires_grad = false) {
    auto t = make_tensor<S>(shape, requires_grad);
    std::uniform_real_distribution<S> dist(lo, hi);
    for (auto& v : t->data) {
        v = dist(rng);
    }
    return t;
}

// Graph node helper: output requires grad iff any parent does; parents and
// the backprop closure are recorded only in that case.
template <typename S>
TensorPtr<S> make_node(Shape shape, std::initializer_list<TensorPtr<S>> parents, const char* opname) {
    bool req = false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) {
            req = true;
        }
    }
    auto t = make_tensor<S>(shape, req);
    t->op = opname;
    if (req) {
        for (const auto& p : parents) {
            if (p) {
                t->parents.push_back(p);
            }
        }
    }
    return t;
}

}  // namespace smokenet
