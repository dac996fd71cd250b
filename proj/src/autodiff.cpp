#include "saei/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saei::ad {

std::size_t shape_product(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    for (std::size_t d : shape) {
        if (d == 0) throw Error("tensor dimensions must be positive");
    }
    if (shape.empty() || shape_product(shape) != data.size()) {
        throw Error("tensor shape does not match data length");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
    const std::size_t n = shape_product(shape_);
    return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

const Tensor& Var::value() const { return tape->value(*this); }

double Var::item() const {
    const Tensor& t = value();
    if (t.size() != 1) throw Error("item() on a non-scalar node");
    return t.data[0];
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Var Tape::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.owned = std::move(t);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& t) {
    Node n;
    n.external = &t;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(const Tensor& t) {
    Node n;
    n.external = &t;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(double v) { return leaf(Tensor::scalar(v), false); }

const Tensor& Tape::value(Var v) const { return nodes_[v.id].value(); }

std::span<const double> Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad;
}

Var Tape::record(Tensor out, std::vector<std::size_t> inputs, BackwardRule rule) {
    Node n;
    n.owned = std::move(out);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.rule = std::move(rule);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw Error("loss belongs to a different tape");
    if (value(loss).size() != 1) throw Error("backward requires a scalar loss");
    if (swept_) throw Error("backward already ran on this tape");
    swept_ = true;
    if (nodes_[loss.id].requires_grad) {
        grad_buffer(loss.id)[0] = 1.0;
        for (std::size_t k = loss.id + 1; k-- > 0;) {
            Node& n = nodes_[k];
            if (!n.rule || n.grad.empty()) continue;
            n.rule(*this, k);
        }
    }
    // Resize untouched leaf gradients so callers always see a full buffer.
    for (Node& n : nodes_) {
        if (n.requires_grad && n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw Error("operands live on different tapes");
    return *a.tape;
}

bool wants(Tape& t, std::size_t id) {
    return t.requires_grad(Var{&t, id});
}

// Result shape for a binary elementwise op with scalar broadcast.
std::vector<std::size_t> binary_shape(const Tensor& a, const Tensor& b) {
    if (a.size() == b.size()) return a.shape;
    if (a.size() == 1) return b.shape;
    if (b.size() == 1) return a.shape;
    throw Error("elementwise operands differ in size");
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, F f) {
    auto shape = binary_shape(a, b);
    const std::size_t n = shape_product(shape);
    std::vector<double> out(n);
    const bool ab = a.size() == 1;
    const bool bb = b.size() == 1;
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a.data[ab ? 0 : i], b.data[bb ? 0 : i]);
    return Tensor(std::move(shape), std::move(out));
}

// Accumulates g (length n) into the adjoint of `id`, reducing when the input
// was broadcast from a single element.
void accumulate(Tape& t, std::size_t id, std::span<const double> g) {
    auto& buf = t.grad_buffer(id);
    if (buf.size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    } else {
        double s = 0.0;
        for (double v : g) s += v;
        buf[0] += s;
    }
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x + y; });
    return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
        const auto& in = tp.inputs(self);
        auto g = tp.out_grad(self);
        if (wants(tp, in[0])) accumulate(tp, in[0], g);
        if (wants(tp, in[1])) accumulate(tp, in[1], g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x - y; });
    return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
        const auto& in = tp.inputs(self);
        auto g = tp.out_grad(self);
        if (wants(tp, in[0])) accumulate(tp, in[0], g);
        if (wants(tp, in[1])) {
            std::vector<double> neg(g.begin(), g.end());
            for (double& v : neg) v = -v;
            accumulate(tp, in[1], neg);
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x * y; });
    return t.record(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t self) {
        const auto& in = tp.inputs(self);
        auto g = tp.out_grad(self);
        const Tensor& av = tp.value(Var{&tp, in[0]});
        const Tensor& bv = tp.value(Var{&tp, in[1]});
        const std::size_t n = g.size();
        const bool ab = av.size() == 1;
        const bool bb = bv.size() == 1;
        if (wants(tp, in[0])) {
            std::vector<double> ga(n);
            for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * bv.data[bb ? 0 : i];
            accumulate(tp, in[0], ga);
        }
        if (wants(tp, in[1])) {
            std::vector<double> gb(n);
            for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * av.data[ab ? 0 : i];
            accumulate(tp, in[1], gb);
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2) throw Error("matmul: left operand must be rank 2");
    const std::size_t m = av.shape[0];
    const std::size_t k = av.shape[1];
    // A right operand that is not a [k, n] matrix is read as a flat k-vector.
    const bool rhs_matrix = bv.rank() == 2 && bv.shape[0] == k;
    if (!rhs_matrix && bv.size() != k) throw Error("matmul: inner dimensions differ");
    const std::size_t n = rhs_matrix ? bv.shape[1] : 1;

    std::vector<double> out(m * n, 0.0);
    if (n == 1) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = av.data.data() + i * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * bv.data[p];
            out[i] = s;
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = av.data.data() + i * k;
            double* orow = out.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = arow[p];
                const double* brow = bv.data.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        }
    }
    std::vector<std::size_t> shape = rhs_matrix ? std::vector<std::size_t>{m, n}
                                                 : std::vector<std::size_t>{m};
    return t.record(Tensor(std::move(shape), std::move(out)), {a.id, b.id},
                    [m, k, n](Tape& tp, std::size_t self) {
                        const auto& in = tp.inputs(self);
                        auto g = tp.out_grad(self);
                        const Tensor& A = tp.value(Var{&tp, in[0]});
                        const Tensor& B = tp.value(Var{&tp, in[1]});
                        if (wants(tp, in[0])) {
                            auto& ga = tp.grad_buffer(in[0]);
                            for (std::size_t i = 0; i < m; ++i) {
                                const double* grow = g.data() + i * n;
                                double* garow = ga.data() + i * k;
                                for (std::size_t p = 0; p < k; ++p) {
                                    const double* brow = B.data.data() + p * n;
                                    double s = 0.0;
                                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                    garow[p] += s;
                                }
                            }
                        }
                        if (wants(tp, in[1])) {
                            auto& gb = tp.grad_buffer(in[1]);
                            for (std::size_t i = 0; i < m; ++i) {
                                const double* arow = A.data.data() + i * k;
                                const double* grow = g.data() + i * n;
                                for (std::size_t p = 0; p < k; ++p) {
                                    double* gbrow = gb.data() + p * n;
                                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += arow[p] * grow[j];
                                }
                            }
                        }
                    });
}

Var tanh(Var x) {
    const Tensor& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv.data[i]);
    return x.tape->record(Tensor(xv.shape, std::move(out)), {x.id}, [](Tape& tp, std::size_t self) {
        auto g = tp.out_grad(self);
        const Tensor& y = tp.value(Var{&tp, self});
        auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

Var exp(Var x) {
    const Tensor& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv.data[i]);
    return x.tape->record(Tensor(xv.shape, std::move(out)), {x.id}, [](Tape& tp, std::size_t self) {
        auto g = tp.out_grad(self);
        const Tensor& y = tp.value(Var{&tp, self});
        auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y.data[i];
    });
}

Var log(Var x) {
    const Tensor& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv.data[i]);
    return x.tape->record(Tensor(xv.shape, std::move(out)), {x.id}, [](Tape& tp, std::size_t self) {
        auto g = tp.out_grad(self);
        const std::size_t in = tp.inputs(self)[0];
        const Tensor& xin = tp.value(Var{&tp, in});
        auto& gx = tp.grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xin.data[i];
    });
}

std::vector<double> softmax_row(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw Error("temperature must be positive");
    if (logits.empty()) throw Error("invalid logits");
    for (double z : logits) {
        if (!std::isfinite(z)) throw Error("invalid logits");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp((logits[i] - m) / temperature);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

Var softmax(Var logits, double temperature) {
    const Tensor& zv = logits.value();
    std::vector<double> p = softmax_row(zv.data, temperature);
    return logits.tape->record(Tensor(zv.shape, std::move(p)), {logits.id},
                               [temperature](Tape& tp, std::size_t self) {
                                   auto g = tp.out_grad(self);
                                   const Tensor& y = tp.value(Var{&tp, self});
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y.data[i];
                                   auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       gx[i] += y.data[i] * (g[i] - dot) / temperature;
                                   }
                               });
}

Var gather(Var x, std::span<const std::size_t> indices) {
    const Tensor& xv = x.value();
    if (indices.empty()) throw Error("gather: empty index set");
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xv.size()) throw Error("gather: index out of range");
        out[i] = xv.data[indices[i]];
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return x.tape->record(Tensor::vector(std::move(out)), {x.id},
                          [idx = std::move(idx)](Tape& tp, std::size_t self) {
                              auto g = tp.out_grad(self);
                              auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
                              for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
                          });
}

Var gather(Var x, std::size_t index) {
    const std::size_t idx[1] = {index};
    return gather(x, std::span<const std::size_t>(idx));
}

Var row(Var x, std::size_t r) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw Error("row: tensor must be rank 2");
    if (r >= xv.shape[0]) throw Error("row: index out of range");
    const std::size_t cols = xv.shape[1];
    std::vector<double> out(xv.data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                            xv.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    return x.tape->record(Tensor::vector(std::move(out)), {x.id},
                          [r, cols](Tape& tp, std::size_t self) {
                              auto g = tp.out_grad(self);
                              auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
                              for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += g[j];
                          });
}

Var sum(Var x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data) s += v;
    return x.tape->record(Tensor::scalar(s), {x.id}, [](Tape& tp, std::size_t self) {
        const double g = tp.out_grad(self)[0];
        auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
        for (double& v : gx) v += g;
    });
}

Var mean(Var x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data) s += v;
    const double n = static_cast<double>(xv.size());
    return x.tape->record(Tensor::scalar(s / n), {x.id}, [n](Tape& tp, std::size_t self) {
        const double g = tp.out_grad(self)[0] / n;
        auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
        for (double& v : gx) v += g;
    });
}

Var scale(Var x, double c) {
    const Tensor& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv.data[i];
    return x.tape->record(Tensor(xv.shape, std::move(out)), {x.id}, [c](Tape& tp, std::size_t self) {
        auto g = tp.out_grad(self);
        auto& gx = tp.grad_buffer(tp.inputs(self)[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
}

Var add_scalar(Var x, double c) {
    const Tensor& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv.data[i] + c;
    return x.tape->record(Tensor(xv.shape, std::move(out)), {x.id}, [](Tape& tp, std::size_t self) {
        auto g = tp.out_grad(self);
        accumulate(tp, tp.inputs(self)[0], g);
    });
}

Var log_softmax(Var logits, double temperature) {
    if (!(temperature > 0.0)) throw Error("temperature must be positive");
    const Tensor& zv = logits.value();
    for (double z : zv.data) {
        if (!std::isfinite(z)) throw Error("invalid logits");
    }
    // The shift is held constant; log-softmax is invariant to it.
    const double m = *std::max_element(zv.data.begin(), zv.data.end());
    Var shifted = add_scalar(scale(logits, 1.0 / temperature), -m / temperature);
    Var lse = log(sum(exp(shifted)));
    return sub(shifted, lse);
}

Var entropy_from_logp(Var logp) {
    return -sum(exp(logp) * logp);
}

// ---------------------------------------------------------------------------

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double step) {
    std::vector<double> analytic;
    {
        Tape tape;
        Var x = tape.leaf(point);
        Var y = fn(tape, x);
        tape.backward(y);
        auto g = tape.grad(x);
        analytic.assign(g.begin(), g.end());
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        Var x = tape.leaf(p, false);
        return fn(tape, x).item();
    };
    double worst = 0.0;
    Tensor probe = point;
    probe.grad.clear();
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = point.data[i];
        probe.data[i] = x0 + step;
        const double fp = eval(probe);
        probe.data[i] = x0 - step;
        const double fm = eval(probe);
        probe.data[i] = x0;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace saei::ad
