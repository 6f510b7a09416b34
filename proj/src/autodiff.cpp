#include "concrete/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace concrete::ad {
namespace {

void require_same_tape(NodeRef a, NodeRef b) {
    if (&a.tape() != &b.tape()) {
        throw std::invalid_argument("autodiff: operands recorded on different tapes");
    }
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* what) {
    if (a == b || b == 1) return a;
    if (a == 1) return b;
    throw std::invalid_argument(std::string("autodiff: incompatible ") + what + " for broadcasting");
}

// Sums `g` (shape of the broadcast output) down to shape (rows, cols).
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    Tensor out(rows, cols);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const std::size_t rr = rows == 1 ? 0 : r;
        for (std::size_t c = 0; c < g.cols(); ++c) {
            out(rr, cols == 1 ? 0 : c) += g(r, c);
        }
    }
    return out;
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F f) {
    const std::size_t rows = broadcast_dim(a.rows(), b.rows(), "rows");
    const std::size_t cols = broadcast_dim(a.cols(), b.cols(), "cols");
    Tensor out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t ra = a.rows() == 1 ? 0 : r;
        const std::size_t rb = b.rows() == 1 ? 0 : r;
        for (std::size_t c = 0; c < cols; ++c) {
            out(r, c) = f(a(ra, a.cols() == 1 ? 0 : c), b(rb, b.cols() == 1 ? 0 : c));
        }
    }
    return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

// Unary elementwise op whose derivative is expressed via (input, output).
template <class Fwd, class Deriv>
NodeRef unary(NodeRef a, Fwd fwd, Deriv deriv) {
    Tape& tape = a.tape();
    const std::size_t ia = a.index();
    Tensor out = map(a.value(), fwd);
    const std::size_t self = tape.size();
    return tape.record(std::move(out), {ia}, [ia, self, deriv](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor ga(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] * deriv(x[i], y[i]);
        t.accumulate(ia, ga);
    });
}

double stable_softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// NodeRef --------------------------------------------------------------------

Tape& NodeRef::tape() const {
    if (tape_ == nullptr) throw std::logic_error("NodeRef: not attached to a tape");
    return *tape_;
}
const Tensor& NodeRef::value() const { return tape().value(index_); }
const Tensor& NodeRef::grad() const { return tape().grad(index_); }

// Tape -----------------------------------------------------------------------

NodeRef Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, Kind::Constant, false});
    return {this, nodes_.size() - 1};
}

NodeRef Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, Kind::Variable, true});
    return {this, nodes_.size() - 1};
}

NodeRef Tape::discrete(Tensor value, NodeRef source) {
    if (&source.tape() != this) throw std::invalid_argument("Tape::discrete: source on another tape");
    nodes_.push_back(Node{std::move(value), {}, {source.index()}, {}, Kind::Discrete, false});
    return {this, nodes_.size() - 1};
}

NodeRef Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
    Node node{std::move(value), {}, std::move(parents), {}, Kind::Operation, needs};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t i, const Tensor& g) {
    Node& n = nodes_.at(i);
    if (!n.requires_grad) return;
    if (!n.grad.same_shape(g)) {
        throw std::logic_error("Tape::accumulate: gradient shape " + g.shape_string() +
                               " does not match value shape " + n.value.shape_string());
    }
    for (std::size_t k = 0; k < g.size(); ++k) n.grad[k] += g[k];
}

void Tape::backward(NodeRef root, BackwardOptions options) {
    if (&root.tape() != this) throw std::invalid_argument("Tape::backward: root on another tape");
    const std::size_t r = root.index();
    if (nodes_.at(r).value.size() != 1) {
        throw std::invalid_argument("Tape::backward: root must be scalar, got shape " +
                                    nodes_[r].value.shape_string());
    }
    std::vector<char> reached(r + 1, 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        nodes_[i].grad = nodes_[i].requires_grad ? Tensor(nodes_[i].value.rows(), nodes_[i].value.cols())
                                                 : Tensor();
    }
    reached[r] = 1;
    if (nodes_[r].requires_grad) nodes_[r].grad[0] = 1.0;
    for (std::size_t i = r + 1; i-- > 0;) {
        if (!reached[i]) continue;
        Node& n = nodes_[i];
        if (n.kind == Kind::Discrete) {
            if (options.reject_discrete) {
                for (auto p : n.parents) {
                    if (nodes_[p].requires_grad) {
                        throw NonDifferentiableError(
                            "backward: gradient path runs through a discrete sample; "
                            "use a relaxed sampler or a score-function estimator");
                    }
                }
            }
            continue;
        }
        for (auto p : n.parents) reached[p] = 1;
        if (n.requires_grad && n.backward) {
            // Copy: the callback may not reallocate nodes_, but keep the
            // upstream gradient stable while parents accumulate.
            const Tensor g = n.grad;
            n.backward(*this, g);
        }
    }
}

// Ops ------------------------------------------------------------------------

NodeRef constant_like(NodeRef ref, Tensor value) { return ref.tape().constant(std::move(value)); }

NodeRef add(NodeRef a, NodeRef b) {
    require_same_tape(a, b);
    const std::size_t ia = a.index(), ib = b.index();
    Tensor out = broadcast_apply(a.value(), b.value(), [](double x, double y) { return x + y; });
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
        t.accumulate(ib, reduce_to(g, t.value(ib).rows(), t.value(ib).cols()));
    });
}

NodeRef sub(NodeRef a, NodeRef b) {
    require_same_tape(a, b);
    const std::size_t ia = a.index(), ib = b.index();
    Tensor out = broadcast_apply(a.value(), b.value(), [](double x, double y) { return x - y; });
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
        Tensor gb = reduce_to(g, t.value(ib).rows(), t.value(ib).cols());
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = -gb[k];
        t.accumulate(ib, gb);
    });
}

NodeRef mul(NodeRef a, NodeRef b) {
    require_same_tape(a, b);
    const std::size_t ia = a.index(), ib = b.index();
    Tensor out = broadcast_apply(a.value(), b.value(), [](double x, double y) { return x * y; });
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& va = t.value(ia);
        const Tensor& vb = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor full = broadcast_apply(g, vb, [](double x, double y) { return x * y; });
            t.accumulate(ia, reduce_to(full, va.rows(), va.cols()));
        }
        if (t.requires_grad(ib)) {
            Tensor full = broadcast_apply(g, va, [](double x, double y) { return x * y; });
            t.accumulate(ib, reduce_to(full, vb.rows(), vb.cols()));
        }
    });
}

NodeRef div(NodeRef a, NodeRef b) {
    require_same_tape(a, b);
    for (double v : b.value().data()) {
        if (v == 0.0) throw std::domain_error("autodiff::div: division by zero");
    }
    const std::size_t ia = a.index(), ib = b.index();
    Tensor out = broadcast_apply(a.value(), b.value(), [](double x, double y) { return x / y; });
    const std::size_t self = a.tape().size();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib, self](Tape& t, const Tensor& g) {
        const Tensor& va = t.value(ia);
        const Tensor& vb = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor full = broadcast_apply(g, vb, [](double x, double y) { return x / y; });
            t.accumulate(ia, reduce_to(full, va.rows(), va.cols()));
        }
        if (t.requires_grad(ib)) {
            // d(a/b)/db = -(a/b)/b
            const Tensor& q = t.value(self);
            Tensor gq(g.rows(), g.cols());
            for (std::size_t k = 0; k < g.size(); ++k) gq[k] = -g[k] * q[k];
            Tensor full = broadcast_apply(gq, vb, [](double x, double y) { return x / y; });
            t.accumulate(ib, reduce_to(full, vb.rows(), vb.cols()));
        }
    });
}

NodeRef neg(NodeRef a) {
    return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

NodeRef scale(NodeRef a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

NodeRef add_scalar(NodeRef a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

NodeRef exp(NodeRef a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

NodeRef log(NodeRef a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) throw std::domain_error("autodiff::log: argument must be positive");
    }
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

NodeRef sigmoid(NodeRef a) {
    return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

NodeRef tanh(NodeRef a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

NodeRef softplus(NodeRef a) {
    return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

NodeRef log_sigmoid(NodeRef a) {
    return unary(
        a, [](double x) { return -stable_softplus(-x); }, [](double x, double) { return stable_sigmoid(-x); });
}

NodeRef clamp(NodeRef a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

namespace {

// Shape of a reduction result and the index map from (r, c) to output slot.
struct ReduceShape {
    std::size_t rows, cols;
};

ReduceShape reduce_shape(const Tensor& a, Reduce how) {
    switch (how) {
        case Reduce::PerRow: return {a.rows(), 1};
        case Reduce::PerColumn: return {1, a.cols()};
        case Reduce::All: break;
    }
    return {1, 1};
}

inline std::size_t reduce_slot(Reduce how, std::size_t r, std::size_t c) {
    switch (how) {
        case Reduce::PerRow: return r;
        case Reduce::PerColumn: return c;
        case Reduce::All: break;
    }
    return 0;
}

Tensor lse_forward(const Tensor& a, Reduce how) {
    if (a.size() == 0) throw std::invalid_argument("logsumexp: empty tensor");
    const auto shape = reduce_shape(a, how);
    Tensor mx(shape.rows, shape.cols, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) {
            double& m = mx[reduce_slot(how, r, c)];
            m = std::max(m, a(r, c));
        }
    Tensor acc(shape.rows, shape.cols);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) {
            const std::size_t s = reduce_slot(how, r, c);
            acc[s] += std::exp(a(r, c) - mx[s]);
        }
    for (std::size_t s = 0; s < acc.size(); ++s) acc[s] = mx[s] + std::log(acc[s]);
    return acc;
}

}  // namespace

NodeRef logsumexp(NodeRef a, Reduce how) {
    const std::size_t ia = a.index();
    Tensor out = lse_forward(a.value(), how);
    const std::size_t self = a.tape().size();
    return a.tape().record(std::move(out), {ia}, [ia, self, how](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor ga(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const std::size_t s = reduce_slot(how, r, c);
                ga(r, c) = g[s] * std::exp(x(r, c) - y[s]);
            }
        t.accumulate(ia, ga);
    });
}

NodeRef log_softmax(NodeRef a, Reduce how) { return sub(a, logsumexp(a, how)); }

NodeRef softmax(NodeRef a, Reduce how) {
    const std::size_t ia = a.index();
    const Tensor& x = a.value();
    const Tensor lse = lse_forward(x, how);
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = std::exp(x(r, c) - lse[reduce_slot(how, r, c)]);
    const std::size_t self = a.tape().size();
    return a.tape().record(std::move(out), {ia}, [ia, self, how](Tape& t, const Tensor& g) {
        const Tensor& y = t.value(self);
        const auto shape = reduce_shape(y, how);
        Tensor dot(shape.rows, shape.cols);
        for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t c = 0; c < y.cols(); ++c) dot[reduce_slot(how, r, c)] += g(r, c) * y(r, c);
        Tensor ga(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t c = 0; c < y.cols(); ++c)
                ga(r, c) = y(r, c) * (g(r, c) - dot[reduce_slot(how, r, c)]);
        t.accumulate(ia, ga);
    });
}

NodeRef sum(NodeRef a, Reduce how) {
    const std::size_t ia = a.index();
    const Tensor& x = a.value();
    const auto shape = reduce_shape(x, how);
    Tensor out(shape.rows, shape.cols);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[reduce_slot(how, r, c)] += x(r, c);
    return a.tape().record(std::move(out), {ia}, [ia, how](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        Tensor ga(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g[reduce_slot(how, r, c)];
        t.accumulate(ia, ga);
    });
}

NodeRef mean(NodeRef a, Reduce how) {
    const Tensor& x = a.value();
    std::size_t count = x.size();
    if (how == Reduce::PerRow) count = x.cols();
    if (how == Reduce::PerColumn) count = x.rows();
    if (count == 0) throw std::invalid_argument("mean: empty reduction");
    return scale(sum(a, how), 1.0 / static_cast<double>(count));
}

NodeRef matmul(NodeRef a, NodeRef b) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    if (x.cols() != w.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + x.shape_string() + " x " + w.shape_string());
    }
    Tensor out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double xik = x(i, k);
            if (xik == 0.0) continue;
            for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += xik * w(k, j);
        }
    const std::size_t ia = a.index(), ib = b.index();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        const Tensor& w = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor gx(x.rows(), x.cols());  // g * w^T
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t k = 0; k < x.cols(); ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < w.cols(); ++j) s += g(i, j) * w(k, j);
                    gx(i, k) = s;
                }
            t.accumulate(ia, gx);
        }
        if (t.requires_grad(ib)) {
            Tensor gw(w.rows(), w.cols());  // x^T * g
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t k = 0; k < x.cols(); ++k) {
                    const double xik = x(i, k);
                    if (xik == 0.0) continue;
                    for (std::size_t j = 0; j < w.cols(); ++j) gw(k, j) += xik * g(i, j);
                }
            t.accumulate(ib, gw);
        }
    });
}

NodeRef affine(NodeRef x, NodeRef w, NodeRef b) { return add(matmul(x, w), b); }

NodeRef concat(std::span<const NodeRef> parts, Axis axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape& tape = parts.front().tape();
    std::vector<std::size_t> ids;
    std::size_t rows = 0, cols = 0;
    for (const auto& p : parts) {
        require_same_tape(parts.front(), p);
        ids.push_back(p.index());
        const Tensor& v = p.value();
        if (axis == Axis::Cols) {
            if (rows == 0) rows = v.rows();
            if (v.rows() != rows) throw std::invalid_argument("concat: row counts differ");
            cols += v.cols();
        } else {
            if (cols == 0) cols = v.cols();
            if (v.cols() != cols) throw std::invalid_argument("concat: column counts differ");
            rows += v.rows();
        }
    }
    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < v.rows(); ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) {
                if (axis == Axis::Cols) out(r, offset + c) = v(r, c);
                else out(offset + r, c) = v(r, c);
            }
        offset += axis == Axis::Cols ? v.cols() : v.rows();
    }
    return tape.record(std::move(out), ids, [ids, axis](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (auto id : ids) {
            const Tensor& v = t.value(id);
            if (t.requires_grad(id)) {
                Tensor gp(v.rows(), v.cols());
                for (std::size_t r = 0; r < v.rows(); ++r)
                    for (std::size_t c = 0; c < v.cols(); ++c)
                        gp(r, c) = axis == Axis::Cols ? g(r, offset + c) : g(offset + r, c);
                t.accumulate(id, gp);
            }
            offset += axis == Axis::Cols ? v.cols() : v.rows();
        }
    });
}

NodeRef broadcast_to(NodeRef a, std::size_t rows, std::size_t cols) {
    const Tensor& x = a.value();
    if ((x.rows() != rows && x.rows() != 1) || (x.cols() != cols && x.cols() != 1)) {
        throw std::invalid_argument("broadcast_to: cannot broadcast " + x.shape_string());
    }
    return add(a, a.tape().constant(Tensor(rows, cols)));
}

NodeRef slice_cols(NodeRef a, std::size_t begin, std::size_t count) {
    const Tensor& x = a.value();
    if (begin + count > x.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
    Tensor out(x.rows(), count);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), {ia}, [ia, begin, count](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        Tensor ga(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) = g(r, c);
        t.accumulate(ia, ga);
    });
}

NodeRef reshape(NodeRef a, std::size_t rows, std::size_t cols) {
    const Tensor& x = a.value();
    if (rows * cols != x.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(rows, cols, x.vector());
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        t.accumulate(ia, Tensor(x.rows(), x.cols(), g.vector()));
    });
}

NodeRef repeat_rows(NodeRef a, std::size_t times) {
    if (times == 0) throw std::invalid_argument("repeat_rows: times must be positive");
    const Tensor& x = a.value();
    Tensor out(x.rows() * times, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k < times; ++k)
            for (std::size_t c = 0; c < x.cols(); ++c) out(r * times + k, c) = x(r, c);
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), {ia}, [ia, times](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(ia);
        Tensor ga(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t k = 0; k < times; ++k)
                for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g(r * times + k, c);
        t.accumulate(ia, ga);
    });
}

NodeRef stop_gradient(NodeRef a) { return a.tape().constant(a.value()); }

Tensor tensor_logsumexp_rows(const Tensor& a) { return lse_forward(a, Reduce::PerRow); }

Tensor tensor_transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
    return out;
}

}  // namespace concrete::ad
