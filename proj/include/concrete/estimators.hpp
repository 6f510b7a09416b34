#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "concrete/autodiff.hpp"
#include "concrete/noise.hpp"
#include "concrete/tensor.hpp"

namespace concrete {

using ad::NodeRef;
using ParameterMap = std::map<std::string, Tensor>;
using NodeMap = std::map<std::string, NodeRef>;

/// How the ratio of prior to posterior enters the relaxed objective.
///   RelaxedKl      : log p_{a,l2}(Z) - log q_{alpha,l1}(Z | x), relaxed densities. A lower bound.
///   RelaxedLogMass : sum_i Z_i log(P_a(d_i) / Q_alpha(d_i | x)). Not a bound.
///   AnalyticKl     : sum_i Q_alpha(d_i | x) log(P_a(d_i) / Q_alpha(d_i | x)). Not a bound.
enum class RelaxationMode { RelaxedKl, RelaxedLogMass, AnalyticKl };

std::string to_string(RelaxationMode mode);
RelaxationMode parse_relaxation_mode(std::string_view text);

struct ObjectiveConfig {
    std::size_t m = 1;
    RelaxationMode mode = RelaxationMode::RelaxedKl;
    double posterior_temperature = 2.0 / 3.0;
    double prior_temperature = 0.5;

    /// Throws std::invalid_argument for m = 0 or non-positive temperatures.
    void validate() const;
};

struct GradEstimate {
    ParameterMap grads;
    double value = 0.0;
    std::vector<double> sample_values;  // per-sample objective or log weight
    std::size_t clamp_count = 0;
    double baseline = 0.0;
};

// Generic estimators -------------------------------------------------------------

/// Builds one Monte Carlo sample of a scalar objective on `tape`. All noise
/// must come from `rng` and enter as constants.
using LossBuilder = std::function<NodeRef(ad::Tape& tape, const NodeMap& params, RngStream& rng)>;

/// Reparameterization estimator: the gradient of (1/m) sum_s f(g_phi(eps_s))
/// with sample s drawn from rng.child(s). The parent stream advances by one
/// word per call. Throws ad::NonDifferentiableError if the loss depends on a
/// discrete sample of a trainable parameter.
GradEstimate pathwise_gradient(const LossBuilder& build, const ParameterMap& params, RngStream& rng,
                               std::size_t m);

/// Value of the same Monte Carlo objective with the same noise as
/// pathwise_gradient would use; for common-random-number checks.
double monte_carlo_objective(const LossBuilder& build, const ParameterMap& params, RngStream rng, std::size_t m);

/// Scalar running-mean baseline: b <- rate * b + (1 - rate) * mean(f).
/// The first update sets b to mean(f).
struct BaselineState {
    double value = 0.0;
    double rate = 0.9;
    bool enabled = true;
    bool initialized = false;

    double current() const noexcept { return enabled ? value : 0.0; }
    void update(double batch_mean) noexcept;
};

/// log p_phi(X^s) for an already drawn sample s.
using LogMassBuilder = std::function<NodeRef(ad::Tape& tape, const NodeMap& params, std::size_t s)>;

/// (1/S) sum_s (f_s - b) d/dphi log p_phi(X^s), S = f_values.size(). The
/// baseline is read once before the sum and updated afterwards.
GradEstimate score_function_gradient(const LogMassBuilder& log_mass, std::span<const double> f_values,
                                     const ParameterMap& params, BaselineState& baseline);

// Multi-sample bound ---------------------------------------------------------------

inline constexpr double kLogWeightClamp = 500.0;

/// log-sum-exp(log w) - log m.
double multisample_bound(std::span<const double> log_weights);

/// Row-wise bound of a (B, m) matrix of log weights, each clamped to
/// [-500, 500] first. Returns (B, 1); adds the number of clamped entries to
/// *clamp_count when given.
NodeRef multisample_bound(NodeRef log_weights, std::size_t* clamp_count = nullptr);

/// Score-function surrogate for maximizing E[f]: f + stop_gradient(f - b) * log_q,
/// averaged over rows. f and log_q are (B, 1); the baseline is read, then
/// updated with mean(f).
NodeRef score_function_surrogate(NodeRef f, NodeRef log_q, BaselineState& baseline);

// Stochastic layers ----------------------------------------------------------------

/// One layer of `groups` independent n-state variables for `rows` examples.
/// n = 2 uses the scalar logit path: logits are (rows, groups), the relaxed
/// sample is the pre-sigmoid Y (rows, groups) and the discrete sample is a
/// bit matrix. n > 2 stores logits as (rows, groups * n); the relaxed sample
/// is the ExpConcrete Y as (rows * groups, n) and the discrete sample the
/// matching one-hot rows.
struct StochasticLayer {
    std::size_t arity = 2;
    std::size_t groups = 1;
    NodeRef posterior_logits;
    NodeRef prior_logits;  // same shape, or a single row broadcast over examples
    NodeRef sample;
};

/// Draws a relaxed sample from `logits` at temperature lambda.
NodeRef relaxed_layer_sample(NodeRef logits, std::size_t arity, double lambda, RngStream& rng);
/// Draws a discrete sample from `logits`.
NodeRef discrete_layer_sample(NodeRef logits, std::size_t arity, RngStream& rng);

/// Downstream value of a relaxed sample: 2 sigmoid(Y) - 1 for n = 2, C exp(Y)
/// per group otherwise. Returns (rows, groups * log2 n).
NodeRef embed_relaxed(NodeRef sample, std::size_t arity, std::size_t groups);
/// Downstream value of a discrete sample: corners of {-1, 1}^(log2 n).
NodeRef embed_discrete(NodeRef sample, std::size_t arity, std::size_t groups);

/// (rows, 1) relaxed contribution of the layer to the log weight, per mode.
/// RelaxedLogMass and AnalyticKl print a one-time warning to stderr.
NodeRef relaxed_log_ratio(const StochasticLayer& layer, const ObjectiveConfig& cfg);
/// (rows, 1) log P_a(d) - log Q_alpha(d | x) for a discrete sample.
NodeRef discrete_log_ratio(const StochasticLayer& layer);
/// (rows, 1) log Q_alpha(d | x) for a discrete sample.
NodeRef discrete_log_posterior(const StochasticLayer& layer);
/// (rows, 1) log P_a(d) for a discrete sample.
NodeRef discrete_log_prior(const StochasticLayer& layer);

// Single-latent objective ------------------------------------------------------

/// Posterior logits for each row of x.
using Encoder = std::function<NodeRef(NodeRef x)>;
/// (rows, 1) log p(x | z) given the embedded latent z, rows aligned with x.
using Decoder = std::function<NodeRef(NodeRef z, NodeRef x)>;
/// Prior logits, one row.
using Prior = std::function<NodeRef()>;

struct ObjectiveDiagnostics {
    std::size_t clamp_count = 0;
    Tensor log_weights;  // (B, m)
};

/// Batch mean of the m-sample relaxed bound for a model with one stochastic
/// layer: each example is repeated m times, a relaxed sample is drawn per copy
/// at the posterior temperature, and the per-copy log weights
/// log p(x | z) + relaxed_log_ratio are combined by multisample_bound.
NodeRef relaxed_objective(NodeRef x, const Encoder& encoder, const Decoder& decoder, const Prior& prior,
                          const ObjectiveConfig& cfg, std::size_t arity, std::size_t groups, RngStream& rng,
                          ObjectiveDiagnostics* diagnostics = nullptr);

/// Same bound on the discrete graph (the quantity reported at test time).
NodeRef discrete_objective(NodeRef x, const Encoder& encoder, const Decoder& decoder, const Prior& prior,
                           std::size_t m, std::size_t arity, std::size_t groups, RngStream& rng,
                           ObjectiveDiagnostics* diagnostics = nullptr);

}  // namespace concrete
