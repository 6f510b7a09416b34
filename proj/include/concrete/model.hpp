#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "concrete/estimators.hpp"

// Networks of n-ary stochastic layers.
//
// A model string such as "(200H~200H~784V)" lists layers in sampling order.
// V marks observed and H latent units; '-' is an affine conditioning function
// of the previous layer and '~' two tanh layers (each as wide as the previous
// layer) followed by an affine map. The unicode dash and tilde are accepted.
//
// Density models start with H: the leftmost layer has learnable prior logits
// and an inference network runs the chain backwards from the data, reusing
// the link types. Structured models start with V: the first layer is the
// context, the last the target, and the latent chain in between is both the
// prior and the proposal.
//
// Parameter keys:
//   prior/logits           top-layer prior logits (density only)
//   gen/<i>/{W,b}          linear map from layer i to layer i + 1
//   gen/<i>/{W0,b0,..,b2}  nonlinear map from layer i to layer i + 1
//   inf/<i>/...            inference map from layer i + 1 to layer i (density only)
//   gen/bias/b             factorized output when the model has no latent layer
// Centering means are keyed center/<i> for latent layer i.
namespace concrete {

enum class Role { Observed, Latent };
enum class Link { Linear, Nonlinear };

struct LayerSpec {
    Role role = Role::Latent;
    std::size_t units = 0;
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<Link> links;  // links[i] connects layers[i] and layers[i + 1]
    std::size_t arity = 2;

    /// ASCII notation, e.g. "(200H~784V)".
    std::string to_string() const;
    bool structured() const { return !layers.empty() && layers.front().role == Role::Observed && layers.size() > 1; }
    std::size_t num_layers() const noexcept { return layers.size(); }
    /// Number of n-state groups in latent layer i.
    std::size_t groups(std::size_t i) const;
    /// Logit width of latent layer i: units for n = 2, groups * n otherwise.
    std::size_t logit_width(std::size_t i) const;
    /// Total number of latent state bits.
    std::size_t latent_bits() const;
    /// Context and target widths (context is 0 for density models).
    std::size_t context_units() const;
    std::size_t target_units() const;

    /// Throws std::invalid_argument if the layer roles or unit counts are
    /// inconsistent with the arity.
    void validate() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Parses the notation above. Throws std::invalid_argument for unbalanced
/// parentheses, unknown separators, dangling separators or zero units.
NetworkSpec parse_model_spec(std::string_view text, std::size_t arity = 2);

struct ParameterStore {
    ParameterMap params;
    ParameterMap centering;  // running means, never trained
};

/// Glorot-uniform weights, zero biases, zero prior logits, output bias set to
/// the logit of `base_rates` clamped to [-5, 5]. `base_rates` has one entry per
/// target unit. Throws std::invalid_argument when it is missing or mis-sized.
ParameterStore init_params(const NetworkSpec& spec, std::span<const double> base_rates, RngStream& rng);

/// Keys of every trainable tensor, in creation order.
std::vector<std::string> parameter_keys(const NetworkSpec& spec);

enum class SampleMode { Discrete, Relaxed };

struct ForwardOptions {
    SampleMode mode = SampleMode::Relaxed;
    ObjectiveConfig objective;
    /// Subtract the stored centering means from proposal-network inputs.
    bool centering = true;
    /// When non-empty: one discrete sample per latent layer, used instead of
    /// drawing (for enumeration). Requires mode == Discrete.
    std::vector<Tensor> fixed_samples;
};

struct ForwardResult {
    std::vector<StochasticLayer> layers;  // latent layers in spec order
    std::vector<NodeRef> activity;        // embedded values, (rows, units)
    NodeRef log_likelihood;               // (rows, 1) log p(target | z)
    NodeRef log_ratio;                    // (rows, 1) latent log prior - log proposal; zero for structured
    NodeRef log_proposal;                 // (rows, 1) discrete log proposal mass (discrete mode only)
    NodeRef log_weight;                   // log_likelihood + log_ratio
    ParameterMap activity_means;          // batch means keyed like the centering means
};

/// Records one pass of the model on the tape. `context` is ignored for
/// density models; rows of context and target are examples (already
/// repeated when m samples per example are wanted).
ForwardResult forward(const NetworkSpec& spec, const NodeMap& params, const ParameterMap& centering, NodeRef context,
                      NodeRef target, RngStream& rng, const ForwardOptions& options);

/// mean <- 0.9 mean + 0.1 batch_mean for each running mean.
void centering_update(ParameterStore& store, const ParameterMap& batch_means, double rate = 0.9);

// Checkpoints ------------------------------------------------------------------------

/// Binary layout, little-endian:
///   "CNCRTCKP" u32 version=1
///   u32 len, spec string; u32 arity
///   u32 count, then per tensor: u32 key len, key, u32 rows, u32 cols, f64 data
///   (parameters first, then centering means, keys prefixed "param:" / "center:")
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ParameterStore& store);

struct Checkpoint {
    NetworkSpec spec;
    ParameterStore store;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace concrete
