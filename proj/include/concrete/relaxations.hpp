#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "concrete/autodiff.hpp"
#include "concrete/noise.hpp"
#include "concrete/tensor.hpp"

// Discrete, Concrete, ExpConcrete, Binary Concrete and logit-space binary
// random variables. Densities are only ever computed in log space.
namespace concrete {

/// Relaxation temperature, strictly positive.
class Temperature {
public:
    explicit Temperature(double lambda);
    double value() const noexcept { return lambda_; }

private:
    double lambda_;
};

/// Location vector alpha in (0, inf)^n, stored as logits log(alpha).
class LocationVector {
public:
    static LocationVector from_logits(std::vector<double> logits);
    static LocationVector from_alphas(std::span<const double> alphas);

    std::size_t size() const noexcept { return logits_.size(); }
    std::span<const double> logits() const noexcept { return logits_; }
    double logit(std::size_t k) const { return logits_.at(k); }

private:
    explicit LocationVector(std::vector<double> logits) : logits_(std::move(logits)) {}
    std::vector<double> logits_;
};

/// Location of a two-state variable: alpha = alpha_1 / alpha_2 > 0, stored as log(alpha).
class BinaryLocation {
public:
    static BinaryLocation from_alpha(double alpha);
    static BinaryLocation from_logit(double logit);
    double logit() const noexcept { return logit_; }

private:
    explicit BinaryLocation(double logit) : logit_(logit) {}
    double logit_;
};

struct OneHot {
    std::size_t index = 0;
    std::size_t arity = 1;
    friend bool operator==(const OneHot&, const OneHot&) = default;
};

/// Point of the simplex. Coordinates lie in [0,1] and sum to one within 1e-9;
/// exact zeros can occur when a low-temperature sample underflows, and are
/// rejected by the density.
class SimplexPoint {
public:
    explicit SimplexPoint(std::vector<double> coords);
    std::size_t size() const noexcept { return coords_.size(); }
    std::span<const double> coords() const noexcept { return coords_; }
    double operator[](std::size_t k) const { return coords_.at(k); }

private:
    std::vector<double> coords_;
};

/// Point of the log-simplex: coordinates <= 0 with log-sum-exp 0 within 1e-9.
class LogSimplexPoint {
public:
    explicit LogSimplexPoint(std::vector<double> log_coords);
    std::size_t size() const noexcept { return log_coords_.size(); }
    std::span<const double> log_coords() const noexcept { return log_coords_; }
    double operator[](std::size_t k) const { return log_coords_.at(k); }
    SimplexPoint exp() const;

private:
    std::vector<double> log_coords_;
};

/// Pre-sigmoid value Y of a logit-space binary relaxation.
struct BinaryLogit {
    double y = 0.0;
};

inline constexpr double kSimplexTolerance = 1e-9;

// Discrete ---------------------------------------------------------------------

/// Gumbel-max: argmax_k (log alpha_k + G_k), lowest index on ties.
OneHot discrete_sample(const LocationVector& alpha, RngStream& rng);
OneHot discrete_sample_from_gumbels(const LocationVector& alpha, std::span<const double> gumbels);
double discrete_log_mass(const LocationVector& alpha, const OneHot& d);

// Concrete / ExpConcrete -----------------------------------------------------------

SimplexPoint concrete_sample(const LocationVector& alpha, Temperature lambda, RngStream& rng);
SimplexPoint concrete_sample_from_gumbels(const LocationVector& alpha, Temperature lambda,
                                          std::span<const double> gumbels);
double concrete_log_density(const LocationVector& alpha, Temperature lambda, const SimplexPoint& x);

LogSimplexPoint exp_concrete_sample(const LocationVector& alpha, Temperature lambda, RngStream& rng);
LogSimplexPoint exp_concrete_sample_from_gumbels(const LocationVector& alpha, Temperature lambda,
                                                 std::span<const double> gumbels);
double exp_concrete_log_density(const LocationVector& alpha, Temperature lambda, const LogSimplexPoint& y);

// Binary ---------------------------------------------------------------------------

/// X = sigmoid((log alpha + L) / lambda), X in (0,1).
double binary_concrete_sample(BinaryLocation alpha, Temperature lambda, RngStream& rng);
double binary_concrete_sample_from_logistic(BinaryLocation alpha, Temperature lambda, double logistic);
double binary_concrete_log_density(BinaryLocation alpha, Temperature lambda, double x);

/// Y = (log alpha + log U - log(1 - U)) / lambda.
BinaryLogit binary_logit_sample(BinaryLocation alpha, Temperature lambda, RngStream& rng);
BinaryLogit binary_logit_sample_from_uniform(BinaryLocation alpha, Temperature lambda, double u);
double binary_logit_log_density(BinaryLocation alpha, Temperature lambda, BinaryLogit y);

// Discretization and embedding --------------------------------------------------

/// argmax of the coordinates; ties go to the lowest index.
OneHot round_to_onehot(const SimplexPoint& x);

bool is_power_of_two(std::size_t n) noexcept;
std::size_t log2_exact(std::size_t n);

/// log2(n) x n matrix listing the corners of {-1,1}^log2(n) as columns.
/// Column k is the binary expansion of k, most significant bit in row 0,
/// with bit value 0 mapped to -1 and 1 to +1.
Tensor corner_matrix(std::size_t n);

std::vector<double> hypercube_embed(const OneHot& d);
std::vector<double> hypercube_embed(const SimplexPoint& x);

// Utilities ----------------------------------------------------------------------

double logsumexp(std::span<const double> v);
double sigmoid(double x);
double softplus(double x);

}  // namespace concrete

// The same relaxations recorded on an autodiff tape, batched over rows.
// Logit tensors are (rows, n); noise is injected as constants so every node
// downstream of the noise is reparameterized.
namespace concrete::on_tape {

using ad::NodeRef;

/// ExpConcrete sample: (logits + G) / lambda minus its row log-sum-exp.
NodeRef exp_concrete_sample(NodeRef logits, double lambda, const Tensor& gumbels);
/// (rows, 1) log density of ExpConcrete(logits, lambda) at y.
NodeRef exp_concrete_log_density(NodeRef logits, double lambda, NodeRef y);
/// (rows, 1) log density of Concrete(logits, lambda) at x (rows on the simplex).
NodeRef concrete_log_density(NodeRef logits, double lambda, NodeRef x);

/// (logits + L) / lambda, elementwise.
NodeRef binary_logit_sample(NodeRef logits, double lambda, const Tensor& logistic);
/// Elementwise log density of the logit-space binary relaxation.
NodeRef binary_logit_log_density(NodeRef logits, double lambda, NodeRef y);
/// sigmoid(binary_logit_sample(...)).
NodeRef binary_concrete_sample(NodeRef logits, double lambda, const Tensor& logistic);
/// Elementwise Binary Concrete log density at x in (0,1).
NodeRef binary_concrete_log_density(NodeRef logits, double lambda, NodeRef x);

/// Gumbel-max one-hot rows; recorded as a discrete (non-differentiable) node.
NodeRef discrete_sample(NodeRef logits, const Tensor& gumbels);
/// (rows, 1) log mass of one-hot rows under softmax(logits).
NodeRef discrete_log_mass(NodeRef logits, NodeRef onehot);
/// Bernoulli bits d = H(logits + L); recorded as a discrete node.
NodeRef bernoulli_sample(NodeRef logits, const Tensor& logistic);
/// Elementwise log mass of bits d under sigmoid(logits).
NodeRef bernoulli_log_mass(NodeRef logits, NodeRef bits);

/// x * C^T: rows of n-simplex coordinates to rows of log2(n) hypercube coordinates.
NodeRef hypercube_embed(NodeRef x, std::size_t n);

}  // namespace concrete::on_tape
