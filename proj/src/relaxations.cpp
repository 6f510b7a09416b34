#include "concrete/relaxations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace concrete {
namespace {

void require_arity(std::size_t expected, std::size_t got, const char* what) {
    if (expected != got) {
        throw std::invalid_argument(std::string(what) + ": arity mismatch (" + std::to_string(expected) +
                                    " vs " + std::to_string(got) + ")");
    }
}

double log_factorial(std::size_t k) { return std::lgamma(static_cast<double>(k) + 1.0); }

std::vector<double> perturbed_scaled(const LocationVector& alpha, double lambda, std::span<const double> g) {
    require_arity(alpha.size(), g.size(), "noise");
    std::vector<double> z(alpha.size());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = (alpha.logit(k) + g[k]) / lambda;
    return z;
}

}  // namespace

Temperature::Temperature(double lambda) : lambda_(lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("Temperature: lambda must be finite and > 0");
    }
}

LocationVector LocationVector::from_logits(std::vector<double> logits) {
    if (logits.empty()) throw std::invalid_argument("LocationVector: need at least one state");
    for (double l : logits) {
        if (!std::isfinite(l)) throw std::invalid_argument("LocationVector: logits must be finite");
    }
    return LocationVector(std::move(logits));
}

LocationVector LocationVector::from_alphas(std::span<const double> alphas) {
    std::vector<double> logits;
    logits.reserve(alphas.size());
    for (double a : alphas) {
        if (!(a > 0.0)) throw std::invalid_argument("LocationVector: alphas must be > 0");
        logits.push_back(std::log(a));
    }
    return from_logits(std::move(logits));
}

BinaryLocation BinaryLocation::from_alpha(double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("BinaryLocation: alpha must be > 0");
    return BinaryLocation(std::log(alpha));
}

BinaryLocation BinaryLocation::from_logit(double logit) {
    if (!std::isfinite(logit)) throw std::invalid_argument("BinaryLocation: logit must be finite");
    return BinaryLocation(logit);
}

SimplexPoint::SimplexPoint(std::vector<double> coords) : coords_(std::move(coords)) {
    if (coords_.empty()) throw std::invalid_argument("SimplexPoint: empty");
    double total = 0.0;
    for (double c : coords_) {
        if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("SimplexPoint: coordinate outside [0,1]");
        total += c;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance) {
        throw std::invalid_argument("SimplexPoint: coordinates do not sum to 1");
    }
}

LogSimplexPoint::LogSimplexPoint(std::vector<double> log_coords) : log_coords_(std::move(log_coords)) {
    if (log_coords_.empty()) throw std::invalid_argument("LogSimplexPoint: empty");
    for (double y : log_coords_) {
        if (!(y <= 0.0)) throw std::invalid_argument("LogSimplexPoint: coordinate must be <= 0");
    }
    if (std::abs(logsumexp(log_coords_)) > kSimplexTolerance) {
        throw std::invalid_argument("LogSimplexPoint: log-sum-exp of coordinates is not 0");
    }
}

SimplexPoint LogSimplexPoint::exp() const {
    std::vector<double> x(log_coords_.size());
    std::transform(log_coords_.begin(), log_coords_.end(), x.begin(), [](double y) { return std::exp(y); });
    return SimplexPoint(std::move(x));
}

double logsumexp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Discrete -----------------------------------------------------------------------

OneHot discrete_sample_from_gumbels(const LocationVector& alpha, std::span<const double> gumbels) {
    require_arity(alpha.size(), gumbels.size(), "discrete_sample");
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        const double v = alpha.logit(k) + gumbels[k];
        if (v > best_val) {
            best_val = v;
            best = k;
        }
    }
    return {best, alpha.size()};
}

OneHot discrete_sample(const LocationVector& alpha, RngStream& rng) {
    std::vector<double> g(alpha.size());
    fill_gumbel(rng, g);
    return discrete_sample_from_gumbels(alpha, g);
}

double discrete_log_mass(const LocationVector& alpha, const OneHot& d) {
    require_arity(alpha.size(), d.arity, "discrete_log_mass");
    if (d.index >= d.arity) throw std::invalid_argument("discrete_log_mass: index out of range");
    return alpha.logit(d.index) - logsumexp(alpha.logits());
}

// Concrete / ExpConcrete ---------------------------------------------------------

LogSimplexPoint exp_concrete_sample_from_gumbels(const LocationVector& alpha, Temperature lambda,
                                                 std::span<const double> gumbels) {
    std::vector<double> z = perturbed_scaled(alpha, lambda.value(), gumbels);
    const double lse = logsumexp(z);
    for (auto& v : z) v = std::min(v - lse, 0.0);
    return LogSimplexPoint(std::move(z));
}

LogSimplexPoint exp_concrete_sample(const LocationVector& alpha, Temperature lambda, RngStream& rng) {
    std::vector<double> g(alpha.size());
    fill_gumbel(rng, g);
    return exp_concrete_sample_from_gumbels(alpha, lambda, g);
}

SimplexPoint concrete_sample_from_gumbels(const LocationVector& alpha, Temperature lambda,
                                          std::span<const double> gumbels) {
    return exp_concrete_sample_from_gumbels(alpha, lambda, gumbels).exp();
}

SimplexPoint concrete_sample(const LocationVector& alpha, Temperature lambda, RngStream& rng) {
    std::vector<double> g(alpha.size());
    fill_gumbel(rng, g);
    return concrete_sample_from_gumbels(alpha, lambda, g);
}

double concrete_log_density(const LocationVector& alpha, Temperature lambda, const SimplexPoint& x) {
    const std::size_t n = alpha.size();
    require_arity(n, x.size(), "concrete_log_density");
    const double lam = lambda.value();
    std::vector<double> inner(n);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!(x[k] > 0.0)) throw std::domain_error("concrete_log_density: coordinate on the simplex boundary");
        const double lx = std::log(x[k]);
        acc += alpha.logit(k) + (-lam - 1.0) * lx;
        inner[k] = alpha.logit(k) - lam * lx;
    }
    return log_factorial(n - 1) + static_cast<double>(n - 1) * std::log(lam) + acc -
           static_cast<double>(n) * logsumexp(inner);
}

double exp_concrete_log_density(const LocationVector& alpha, Temperature lambda, const LogSimplexPoint& y) {
    const std::size_t n = alpha.size();
    require_arity(n, y.size(), "exp_concrete_log_density");
    const double lam = lambda.value();
    std::vector<double> inner(n);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        inner[k] = alpha.logit(k) - lam * y[k];
        acc += inner[k];
    }
    return log_factorial(n - 1) + static_cast<double>(n - 1) * std::log(lam) + acc -
           static_cast<double>(n) * logsumexp(inner);
}

// Binary -----------------------------------------------------------------------------

double binary_concrete_sample_from_logistic(BinaryLocation alpha, Temperature lambda, double logistic) {
    return sigmoid((alpha.logit() + logistic) / lambda.value());
}

double binary_concrete_sample(BinaryLocation alpha, Temperature lambda, RngStream& rng) {
    return binary_concrete_sample_from_logistic(alpha, lambda, sample_logistic(rng));
}

double binary_concrete_log_density(BinaryLocation alpha, Temperature lambda, double x) {
    if (!(x > 0.0 && x < 1.0)) throw std::domain_error("binary_concrete_log_density: x must lie in (0,1)");
    const double lam = lambda.value();
    const double la = alpha.logit();
    const double lx = std::log(x);
    const double l1x = std::log1p(-x);
    const double terms[2] = {la - lam * lx, -lam * l1x};
    return std::log(lam) + la + (-lam - 1.0) * (lx + l1x) - 2.0 * logsumexp(terms);
}

BinaryLogit binary_logit_sample_from_uniform(BinaryLocation alpha, Temperature lambda, double u) {
    return {(alpha.logit() + logistic_from_uniform(u)) / lambda.value()};
}

BinaryLogit binary_logit_sample(BinaryLocation alpha, Temperature lambda, RngStream& rng) {
    return binary_logit_sample_from_uniform(alpha, lambda, sample_uniform(rng));
}

double binary_logit_log_density(BinaryLocation alpha, Temperature lambda, BinaryLogit y) {
    const double lam = lambda.value();
    const double t = -lam * y.y + alpha.logit();
    return std::log(lam) + t - 2.0 * softplus(t);
}

// Discretization and embedding ---------------------------------------------------

OneHot round_to_onehot(const SimplexPoint& x) {
    const auto c = x.coords();
    const auto it = std::max_element(c.begin(), c.end());  // first maximum
    return {static_cast<std::size_t>(it - c.begin()), c.size()};
}

bool is_power_of_two(std::size_t n) noexcept { return n >= 2 && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
    if (!is_power_of_two(n)) throw std::invalid_argument("arity must be a power of two >= 2");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    return bits;
}

Tensor corner_matrix(std::size_t n) {
    const std::size_t bits = log2_exact(n);
    Tensor c(bits, n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t r = 0; r < bits; ++r) c(r, k) = ((k >> (bits - 1 - r)) & 1U) ? 1.0 : -1.0;
    return c;
}

std::vector<double> hypercube_embed(const OneHot& d) {
    const Tensor c = corner_matrix(d.arity);
    if (d.index >= d.arity) throw std::invalid_argument("hypercube_embed: index out of range");
    std::vector<double> out(c.rows());
    for (std::size_t r = 0; r < c.rows(); ++r) out[r] = c(r, d.index);
    return out;
}

std::vector<double> hypercube_embed(const SimplexPoint& x) {
    const Tensor c = corner_matrix(x.size());
    std::vector<double> out(c.rows(), 0.0);
    for (std::size_t r = 0; r < c.rows(); ++r)
        for (std::size_t k = 0; k < x.size(); ++k) out[r] += c(r, k) * x[k];
    return out;
}

}  // namespace concrete

namespace concrete::on_tape {

NodeRef exp_concrete_sample(NodeRef logits, double lambda, const Tensor& gumbels) {
    (void)Temperature{lambda};
    const NodeRef z = (logits + constant_like(logits, gumbels)) / lambda;
    return z - ad::logsumexp(z, ad::Reduce::PerRow);
}

NodeRef exp_concrete_log_density(NodeRef logits, double lambda, NodeRef y) {
    (void)Temperature{lambda};
    const std::size_t n = y.cols();
    const NodeRef inner = logits - y * lambda;
    const double constant = std::lgamma(static_cast<double>(n)) + static_cast<double>(n - 1) * std::log(lambda);
    return (ad::sum(inner, ad::Reduce::PerRow) - ad::logsumexp(inner, ad::Reduce::PerRow) * static_cast<double>(n)) +
           constant;
}

NodeRef concrete_log_density(NodeRef logits, double lambda, NodeRef x) {
    (void)Temperature{lambda};
    const std::size_t n = x.cols();
    const NodeRef lx = ad::log(x);
    const NodeRef acc = ad::sum(logits + lx * (-lambda - 1.0), ad::Reduce::PerRow);
    const NodeRef inner = logits - lx * lambda;
    const double constant = std::lgamma(static_cast<double>(n)) + static_cast<double>(n - 1) * std::log(lambda);
    return (acc - ad::logsumexp(inner, ad::Reduce::PerRow) * static_cast<double>(n)) + constant;
}

NodeRef binary_logit_sample(NodeRef logits, double lambda, const Tensor& logistic) {
    (void)Temperature{lambda};
    return (logits + constant_like(logits, logistic)) / lambda;
}

NodeRef binary_logit_log_density(NodeRef logits, double lambda, NodeRef y) {
    (void)Temperature{lambda};
    const NodeRef t = logits - y * lambda;
    return (t - ad::softplus(t) * 2.0) + std::log(lambda);
}

NodeRef binary_concrete_sample(NodeRef logits, double lambda, const Tensor& logistic) {
    return ad::sigmoid(binary_logit_sample(logits, lambda, logistic));
}

NodeRef binary_concrete_log_density(NodeRef logits, double lambda, NodeRef x) {
    (void)Temperature{lambda};
    const NodeRef lx = ad::log(x);
    const NodeRef l1x = ad::log(1.0 - x);
    const NodeRef a = logits - lx * lambda;
    const NodeRef b = l1x * (-lambda);
    // log(e^a + e^b) = b + softplus(a - b)
    const NodeRef lse = b + ad::softplus(a - b);
    return ((logits + (lx + l1x) * (-lambda - 1.0)) - lse * 2.0) + std::log(lambda);
}

NodeRef discrete_sample(NodeRef logits, const Tensor& gumbels) {
    const Tensor& l = logits.value();
    const std::size_t rows = std::max(l.rows(), gumbels.rows());
    if (gumbels.cols() != l.cols() || (l.rows() != rows && l.rows() != 1)) {
        throw std::invalid_argument("discrete_sample: noise shape does not match logits");
    }
    Tensor onehot(rows, l.cols());
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t lr = l.rows() == 1 ? 0 : r;
        std::size_t best = 0;
        double best_val = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < l.cols(); ++k) {
            const double v = l(lr, k) + gumbels(r, k);
            if (v > best_val) {
                best_val = v;
                best = k;
            }
        }
        onehot(r, best) = 1.0;
    }
    return logits.tape().discrete(std::move(onehot), logits);
}

NodeRef discrete_log_mass(NodeRef logits, NodeRef onehot) {
    return ad::sum(ad::log_softmax(logits, ad::Reduce::PerRow) * onehot, ad::Reduce::PerRow);
}

NodeRef bernoulli_sample(NodeRef logits, const Tensor& logistic) {
    const Tensor& l = logits.value();
    if (!l.same_shape(logistic)) throw std::invalid_argument("bernoulli_sample: noise shape does not match logits");
    Tensor bits(l.rows(), l.cols());
    for (std::size_t i = 0; i < l.size(); ++i) bits[i] = (l[i] + logistic[i] >= 0.0) ? 1.0 : 0.0;
    return logits.tape().discrete(std::move(bits), logits);
}

NodeRef bernoulli_log_mass(NodeRef logits, NodeRef bits) {
    // d log sigmoid(l) + (1 - d) log sigmoid(-l) = d * l - softplus(l)
    return bits * logits - ad::softplus(logits);
}

NodeRef hypercube_embed(NodeRef x, std::size_t n) {
    if (x.cols() != n) throw std::invalid_argument("hypercube_embed: column count must equal the arity");
    return ad::matmul(x, constant_like(x, ad::tensor_transpose(corner_matrix(n))));
}

}  // namespace concrete::on_tape
