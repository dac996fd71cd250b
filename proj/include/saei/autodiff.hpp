// autodiff.hpp - define-by-run reverse-mode differentiation over dense tensors.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// scalar Var walks the tape once in reverse and accumulates adjoints into every
// node that requires a gradient. Tapes are single-use and single-threaded;
// independent tapes may be used concurrently.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saei::ad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty, or same length as data

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<std::size_t> shape_);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vector(std::vector<double> v);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool has_grad() const { return !grad.empty(); }
    bool all_finite() const;
};

std::size_t shape_product(std::span<const std::size_t> shape);

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    double item() const;  // value of a single-element node
    std::size_t size() const { return value().size(); }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Owned leaf. requires_grad controls whether backward() accumulates into it.
    Var leaf(Tensor t, bool requires_grad = true);
    // Leaves that alias caller-owned storage; the tensor must outlive the tape.
    Var parameter(const Tensor& t);
    Var constant(const Tensor& t);
    Var constant(double v);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    // Adjoint of a node after backward(); zeros if nothing flowed into it.
    std::span<const double> grad(Var v) const;

    // Reverse sweep from a single-element node. May be called once per tape.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

    // Used by the op implementations.
    using BackwardRule = std::function<void(Tape&, std::size_t self)>;
    Var record(Tensor out, std::vector<std::size_t> inputs, BackwardRule rule);
    std::vector<double>& grad_buffer(std::size_t id);
    std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        bool requires_grad = false;

        const Tensor& value() const { return external ? *external : owned; }
    };

    std::vector<Node> nodes_;
    bool swept_ = false;
};

// Primitive set. Binary elementwise ops require equal sizes, except that a
// single-element operand broadcasts against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// [m,k] x [k,n] -> [m,n]. Any other right operand with k elements is read as
// a flat vector and yields [m].
Var matmul(Var a, Var b);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
// Stable softmax of a flat vector at the given temperature.
Var softmax(Var logits, double temperature);
// Selects flat elements by index; the result has shape [indices.size()].
Var gather(Var x, std::span<const std::size_t> indices);
Var gather(Var x, std::size_t index);
// Row r of a rank-2 tensor as a rank-1 vector.
Var row(Var x, std::size_t r);
Var sum(Var x);
Var mean(Var x);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

// Composites built from the primitives above.
Var log_softmax(Var logits, double temperature);
// -sum(p log p) computed from log-probabilities.
Var entropy_from_logp(Var logp);

// Plain-value softmax used where no tape is wanted.
std::vector<double> softmax_row(std::span<const double> logits, double temperature);

// Max over coordinates of |analytic - numeric| / max(1, |analytic|), where the
// numeric gradient uses central differences with the given step.
using ScalarFn = std::function<Var(Tape&, Var)>;
double finite_diff_check(const ScalarFn& fn, const Tensor& point, double step);

}  // namespace saei::ad
