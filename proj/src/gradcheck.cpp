#include "concrete/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "concrete/oracle.hpp"

namespace concrete::gradcheck {
namespace {

using ad::NodeRef;
using ad::Reduce;

Tensor random_tensor(RngStream& rng, const InputSpec& s) {
    Tensor t(s.rows, s.cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.lo + (s.hi - s.lo) * sample_uniform(rng);
    return t;
}

PrimitiveCase unary(std::string name, std::function<NodeRef(NodeRef)> f, double lo = -2.0, double hi = 2.0) {
    return {std::move(name), {{3, 4, lo, hi}}, [f](std::span<const NodeRef> in) { return f(in[0]); }};
}

PrimitiveCase binary(std::string name, std::function<NodeRef(NodeRef, NodeRef)> f, InputSpec a, InputSpec b) {
    return {std::move(name), {a, b}, [f](std::span<const NodeRef> in) { return f(in[0], in[1]); }};
}

}  // namespace

std::vector<PrimitiveCase> primitive_cases() {
    std::vector<PrimitiveCase> cases;
    const InputSpec m34{3, 4};
    cases.push_back(binary("add", ad::add, m34, m34));
    cases.push_back(binary("add/broadcast-row", ad::add, m34, {1, 4}));
    cases.push_back(binary("add/broadcast-scalar", ad::add, {1, 1}, m34));
    cases.push_back(binary("sub", ad::sub, m34, {3, 1}));
    cases.push_back(binary("mul", ad::mul, m34, m34));
    cases.push_back(binary("mul/broadcast-col", ad::mul, {3, 1}, m34));
    cases.push_back(binary("div", ad::div, m34, {3, 4, 0.5, 2.0}));
    cases.push_back(binary("div/broadcast", ad::div, m34, {1, 4, -2.0, -0.5}));
    cases.push_back(unary("neg", ad::neg));
    cases.push_back(unary("scale", [](NodeRef a) { return ad::scale(a, -1.7); }));
    cases.push_back(unary("add_scalar", [](NodeRef a) { return ad::add_scalar(a, 0.3); }));
    cases.push_back(unary("exp", ad::exp));
    cases.push_back(unary("log", ad::log, 0.2, 3.0));
    cases.push_back(unary("sigmoid", ad::sigmoid, -4.0, 4.0));
    cases.push_back(unary("tanh", ad::tanh));
    cases.push_back(unary("softplus", ad::softplus, -5.0, 5.0));
    cases.push_back(unary("log_sigmoid", ad::log_sigmoid, -5.0, 5.0));
    // Inputs stay away from the kinks at +-1.
    cases.push_back(unary("clamp/inside", [](NodeRef a) { return ad::clamp(a, -1.0, 1.0); }, -0.9, 0.9));
    cases.push_back(unary("clamp/outside", [](NodeRef a) { return ad::clamp(a, -1.0, 1.0); }, 1.1, 2.0));
    for (auto [how, tag] : {std::pair{Reduce::PerRow, "rows"}, std::pair{Reduce::PerColumn, "cols"},
                            std::pair{Reduce::All, "all"}}) {
        cases.push_back(unary(std::string("logsumexp/") + tag, [how](NodeRef a) { return ad::logsumexp(a, how); }));
        cases.push_back(unary(std::string("softmax/") + tag, [how](NodeRef a) { return ad::softmax(a, how); }));
        cases.push_back(
            unary(std::string("log_softmax/") + tag, [how](NodeRef a) { return ad::log_softmax(a, how); }));
        cases.push_back(unary(std::string("sum/") + tag, [how](NodeRef a) { return ad::sum(a, how); }));
        cases.push_back(unary(std::string("mean/") + tag, [how](NodeRef a) { return ad::mean(a, how); }));
    }
    cases.push_back(binary("matmul", ad::matmul, {3, 4}, {4, 2}));
    cases.push_back({"affine",
                     {{3, 4}, {4, 2}, {1, 2}},
                     [](std::span<const NodeRef> in) { return ad::affine(in[0], in[1], in[2]); }});
    cases.push_back({"concat/cols",
                     {{3, 2}, {3, 1}, {3, 3}},
                     [](std::span<const NodeRef> in) { return ad::concat(in, ad::Axis::Cols); }});
    cases.push_back({"concat/rows",
                     {{1, 4}, {2, 4}},
                     [](std::span<const NodeRef> in) { return ad::concat(in, ad::Axis::Rows); }});
    cases.push_back({"broadcast_to",
                     {{1, 3}},
                     [](std::span<const NodeRef> in) { return ad::broadcast_to(in[0], 4, 3); }});
    cases.push_back(unary("slice_cols", [](NodeRef a) { return ad::slice_cols(a, 1, 2); }));
    cases.push_back(unary("reshape", [](NodeRef a) { return ad::reshape(a, 6, 2); }));
    cases.push_back(unary("repeat_rows", [](NodeRef a) { return ad::repeat_rows(a, 3); }));
    return cases;
}

double max_gradient_error(const PrimitiveCase& c, RngStream& rng, std::size_t points, double h) {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
        std::vector<Tensor> inputs;
        for (const auto& s : c.inputs) inputs.push_back(random_tensor(rng, s));

        // Output shape, then the fixed projection weights.
        Tensor weights;
        {
            ad::Tape probe;
            std::vector<NodeRef> nodes;
            for (const auto& t : inputs) nodes.push_back(probe.constant(t));
            const Tensor& out = c.build(nodes).value();
            weights = random_tensor(rng, {out.rows(), out.cols(), -1.0, 1.0});
        }

        std::vector<double> flat;
        for (const auto& t : inputs) flat.insert(flat.end(), t.data().begin(), t.data().end());

        const auto unflatten = [&](std::span<const double> x) {
            std::vector<Tensor> out;
            std::size_t offset = 0;
            for (const auto& t : inputs) {
                Tensor u(t.rows(), t.cols());
                for (std::size_t i = 0; i < u.size(); ++i) u[i] = x[offset + i];
                offset += u.size();
                out.push_back(std::move(u));
            }
            return out;
        };

        const auto value = [&](std::span<const double> x) {
            ad::Tape tape;
            std::vector<NodeRef> nodes;
            for (auto& t : unflatten(x)) nodes.push_back(tape.constant(std::move(t)));
            const NodeRef y = c.build(nodes);
            double acc = 0.0;
            for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * y.value()[i];
            return acc;
        };

        ad::Tape tape;
        std::vector<NodeRef> nodes;
        for (const auto& t : inputs) nodes.push_back(tape.variable(t));
        const NodeRef y = c.build(nodes);
        const NodeRef root = ad::sum(y * ad::constant_like(y, weights));
        tape.backward(root);
        std::vector<double> reverse;
        for (const auto& n : nodes) reverse.insert(reverse.end(), n.grad().data().begin(), n.grad().data().end());

        const auto numeric = oracle::finite_difference(value, flat, h);
        double scale = 1e-8, diff = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            scale = std::max(scale, std::abs(numeric[i]));
            diff = std::max(diff, std::abs(reverse[i] - numeric[i]));
        }
        worst = std::max(worst, diff / scale);
    }
    return worst;
}

}  // namespace concrete::gradcheck
