#include "dcsam/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dcsam/errors.hpp"

namespace dcsam::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value)
{
    nodes_.push_back(Node{std::move(value), false, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(std::string name, Tensor value)
{
    require_finite(value, "Tape::parameter");
    nodes_.push_back(Node{std::move(value), true, {}, {}});
    parameters_.emplace_back(std::move(name), nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward)
{
    Node node{std::move(value), false, {}, {}};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        if (in.tape_ != this) throw InvalidArgument("operands belong to different tapes");
        node.inputs.push_back(in.id_);
        node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

std::map<std::string, Tensor> Tape::gradients(Var loss) const
{
    if (loss.tape_ != this) throw InvalidArgument("loss belongs to a different tape");
    if (!nodes_[loss.id_].requires_grad)
        throw UntrackedLoss("loss does not depend on any parameter");
    if (nodes_[loss.id_].value.size() != 1)
        throw ShapeMismatch("loss must be a scalar, got " +
                            shape_string(nodes_[loss.id_].value.shape()));

    std::vector<Tensor> grads(loss.id_ + 1);
    grads[loss.id_] = Tensor(nodes_[loss.id_].value.shape(), 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.backward || grads[id].empty()) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            in_values.push_back(&nodes_[in].value);
            if (nodes_[in].requires_grad) {
                if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape());
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardContext{grads[id], node.value, in_values, in_grads});
        // Interior gradients are no longer needed once propagated.
        if (!node.inputs.empty()) grads[id] = Tensor();
    }

    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : parameters_) {
        if (id <= loss.id_ && !grads[id].empty())
            out.emplace(name, std::move(grads[id]));
        else
            out.emplace(name, Tensor(nodes_[id].value.shape()));
    }
    return out;
}

namespace {

void accumulate(Tensor* dst, const Tensor& src)
{
    if (dst == nullptr) return;
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tape& common_tape(Var a, Var b)
{
    if (&a.tape() != &b.tape()) throw InvalidArgument("operands belong to different tapes");
    return a.tape();
}

}  // namespace

Var matmul(Var a, Var b)
{
    Tape& tape = common_tape(a, b);
    return tape.record(dcsam::matmul(a.value(), b.value()), {a, b}, [](const BackwardContext& c) {
        if (c.input_grads[0]) accumulate(c.input_grads[0], dcsam::matmul(c.grad, dcsam::transpose(*c.inputs[1])));
        if (c.input_grads[1]) accumulate(c.input_grads[1], dcsam::matmul(dcsam::transpose(*c.inputs[0]), c.grad));
    });
}

Var transpose(Var a)
{
    return a.tape().record(dcsam::transpose(a.value()), {a}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], dcsam::transpose(c.grad));
    });
}

Var add(Var a, Var b)
{
    Tape& tape = common_tape(a, b);
    return tape.record(dcsam::add(a.value(), b.value()), {a, b}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], c.grad);
        accumulate(c.input_grads[1], c.grad);
    });
}

Var sub(Var a, Var b)
{
    Tape& tape = common_tape(a, b);
    return tape.record(dcsam::sub(a.value(), b.value()), {a, b}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], c.grad);
        if (c.input_grads[1]) accumulate(c.input_grads[1], dcsam::scale(c.grad, -1.0));
    });
}

Var hadamard(Var a, Var b)
{
    Tape& tape = common_tape(a, b);
    return tape.record(dcsam::hadamard(a.value(), b.value()), {a, b}, [](const BackwardContext& c) {
        if (c.input_grads[0]) accumulate(c.input_grads[0], dcsam::hadamard(c.grad, *c.inputs[1]));
        if (c.input_grads[1]) accumulate(c.input_grads[1], dcsam::hadamard(c.grad, *c.inputs[0]));
    });
}

Var scale(Var a, double s)
{
    return a.tape().record(dcsam::scale(a.value(), s), {a}, [s](const BackwardContext& c) {
        accumulate(c.input_grads[0], dcsam::scale(c.grad, s));
    });
}

Var add_row(Var a, Var v)
{
    Tape& tape = common_tape(a, v);
    return tape.record(dcsam::add_row(a.value(), v.value()), {a, v}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], c.grad);
        if (Tensor* dv = c.input_grads[1]) {
            const std::size_t rows = c.grad.dim(0), cols = c.grad.dim(1);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < cols; ++k) (*dv)[k] += c.grad.at(r, k);
        }
    });
}

Var reshape(Var a, Shape shape)
{
    return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [](const BackwardContext& c) {
        Tensor* da = c.input_grads[0];
        for (std::size_t i = 0; i < c.grad.size(); ++i) (*da)[i] += c.grad[i];
    });
}

Var sum(Var a)
{
    return a.tape().record(Tensor::scalar(dcsam::sum(a.value())), {a}, [](const BackwardContext& c) {
        const double g = c.grad[0];
        for (double& v : c.input_grads[0]->data()) v += g;
    });
}

Var mean(Var a)
{
    const double n = static_cast<double>(a.value().size());
    return a.tape().record(Tensor::scalar(dcsam::sum(a.value()) / n), {a},
                           [n](const BackwardContext& c) {
                               const double g = c.grad[0] / n;
                               for (double& v : c.input_grads[0]->data()) v += g;
                           });
}

Var sigmoid(Var a)
{
    require_finite(a.value(), "sigmoid");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.value()[i];
        // Branch keeps exp() from overflowing for large |x|.
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return a.tape().record(std::move(out), {a}, [](const BackwardContext& c) {
        Tensor* da = c.input_grads[0];
        for (std::size_t i = 0; i < c.grad.size(); ++i) {
            const double y = c.output[i];
            (*da)[i] += c.grad[i] * y * (1.0 - y);
        }
    });
}

Var masked_softmax_rows(Var x, const Tensor& bias)
{
    return x.tape().record(dcsam::masked_softmax_rows(x.value(), bias), {x},
                           [](const BackwardContext& c) {
                               const Tensor& y = c.output;
                               Tensor* dx = c.input_grads[0];
                               const std::size_t rows = y.dim(0), cols = y.dim(1);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t k = 0; k < cols; ++k)
                                       dot += c.grad.at(r, k) * y.at(r, k);
                                   for (std::size_t k = 0; k < cols; ++k)
                                       dx->at(r, k) += y.at(r, k) * (c.grad.at(r, k) - dot);
                               }
                           });
}

Var conv1x1(Var x, Var w, Var b)
{
    Tape& tape = common_tape(x, w);
    common_tape(x, b);
    return tape.record(dcsam::conv1x1(x.value(), w.value(), b.value()), {x, w, b},
                       [](const BackwardContext& c) {
                           const Tensor& xv = *c.inputs[0];
                           const Tensor& wv = *c.inputs[1];
                           const std::size_t cin = xv.dim(0), pixels = xv.dim(1) * xv.dim(2);
                           const std::size_t cout = wv.dim(0);
                           const Tensor g = c.grad.reshaped({cout, pixels});
                           if (c.input_grads[0])
                               accumulate(c.input_grads[0],
                                          dcsam::matmul(dcsam::transpose(wv), g));
                           if (c.input_grads[1])
                               accumulate(c.input_grads[1],
                                          dcsam::matmul(g, dcsam::transpose(xv.reshaped({cin, pixels}))));
                           if (Tensor* db = c.input_grads[2])
                               for (std::size_t o = 0; o < cout; ++o)
                                   for (std::size_t p = 0; p < pixels; ++p) (*db)[o] += g.at(o, p);
                       });
}

Var concat(const std::vector<Var>& parts)
{
    if (parts.empty()) throw InvalidArgument("concat of nothing");
    Tape& tape = parts.front().tape();
    Shape shape = parts.front().shape();
    std::size_t lead = 0;
    std::vector<double> data;
    for (const Var& p : parts) {
        Shape trailing(p.shape().begin() + 1, p.shape().end());
        if (!std::equal(trailing.begin(), trailing.end(), shape.begin() + 1, shape.end()) ||
            p.shape().size() != shape.size())
            throw ShapeMismatch("concat: " + shape_string(p.shape()) + " vs " +
                                shape_string(shape));
        require_finite(p.value(), "concat");
        lead += p.shape()[0];
        data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    shape[0] = lead;
    return tape.record(Tensor(shape, std::move(data)), parts, [](const BackwardContext& c) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < c.inputs.size(); ++k) {
            const std::size_t n = c.inputs[k]->size();
            if (Tensor* dp = c.input_grads[k])
                for (std::size_t i = 0; i < n; ++i) (*dp)[i] += c.grad[offset + i];
            offset += n;
        }
    });
}

Var broadcast_spatial(Var v, std::size_t h, std::size_t w)
{
    require_rank(v.value(), 1, "broadcast_spatial");
    const std::size_t channels = v.value().dim(0);
    Tensor out({channels, h, w});
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t p = 0; p < h * w; ++p) out[ch * h * w + p] = v.value()[ch];
    return v.tape().record(std::move(out), {v}, [channels, h, w](const BackwardContext& c) {
        Tensor* dv = c.input_grads[0];
        for (std::size_t ch = 0; ch < channels; ++ch)
            for (std::size_t p = 0; p < h * w; ++p) (*dv)[ch] += c.grad[ch * h * w + p];
    });
}

Var logsumexp_cols(Var x, double tau)
{
    if (!(tau > 0.0)) throw InvalidArgument("logsumexp_cols: tau must be positive");
    require_rank(x.value(), 2, "logsumexp_cols");
    require_finite(x.value(), "logsumexp_cols");
    const Tensor& xv = x.value();
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    Tensor out({cols});
    for (std::size_t k = 0; k < cols; ++k) {
        double peak = xv.at(0, k);
        for (std::size_t r = 1; r < rows; ++r) peak = std::max(peak, xv.at(r, k));
        double total = 0.0;
        for (std::size_t r = 0; r < rows; ++r) total += std::exp((xv.at(r, k) - peak) / tau);
        out[k] = peak + tau * std::log(total);
    }
    return x.tape().record(std::move(out), {x}, [tau](const BackwardContext& c) {
        const Tensor& xv = *c.inputs[0];
        Tensor* dx = c.input_grads[0];
        const std::size_t rows = xv.dim(0), cols = xv.dim(1);
        for (std::size_t k = 0; k < cols; ++k)
            for (std::size_t r = 0; r < rows; ++r)
                dx->at(r, k) += c.grad[k] * std::exp((xv.at(r, k) - c.output[k]) / tau);
    });
}

}  // namespace dcsam::ad
