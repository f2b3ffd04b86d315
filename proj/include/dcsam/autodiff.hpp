#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dcsam/tensor.hpp"

namespace dcsam::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

   private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct BackwardContext {
    const Tensor& grad;    // dL/d(output)
    const Tensor& output;  // forward value of the node
    std::span<const Tensor* const> inputs;
    std::span<Tensor* const> input_grads;  // nullptr where the input is untracked
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Wengert list for reverse-mode accumulation. Nodes are appended in execution
/// order, so the index order is already a topological order.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(std::string name, Tensor value);

    /// Appends an operation. The node is tracked iff any input is tracked; the
    /// backward function is dropped otherwise.
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a tracked scalar. One gradient per registered parameter,
    /// shaped like the parameter (zeros when the loss does not depend on it).
    std::map<std::string, Tensor> gradients(Var loss) const;

   private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, std::size_t>> parameters_;
};

inline std::map<std::string, Tensor> grad(const Tape& tape, Var loss)
{
    return tape.gradients(loss);
}

// Tracked operations. Each forwards to the untracked kernel of the same name.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var v);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
Var sigmoid(Var a);

/// Bias is a detached constant; gradients flow through the logits only.
Var masked_softmax_rows(Var x, const Tensor& bias);

Var conv1x1(Var x, Var w, Var b);

/// Concatenation along axis 0; trailing dimensions must agree.
Var concat(const std::vector<Var>& parts);

/// v[C] repeated over an H×W grid, giving C×H×W.
Var broadcast_spatial(Var v, std::size_t h, std::size_t w);

/// tau * log(sum_i exp(x[i, c] / tau)) for every column c of x[R×C]; result [C].
Var logsumexp_cols(Var x, double tau);

}  // namespace dcsam::ad
