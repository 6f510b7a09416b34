#include "concrete/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "concrete/relaxations.hpp"

namespace concrete {
namespace {

using ad::Reduce;

void warn_once(RelaxationMode mode) {
    static std::atomic<bool> warned_log_mass{false};
    static std::atomic<bool> warned_analytic{false};
    auto& flag = mode == RelaxationMode::AnalyticKl ? warned_analytic : warned_log_mass;
    if (!flag.exchange(true)) {
        std::cerr << "warning: relaxation mode " << to_string(mode)
                  << " is not a lower bound; its value is not interpretable\n";
    }
}

void require_arity(std::size_t arity) {
    if (arity == 2) return;
    if (!is_power_of_two(arity)) throw std::invalid_argument("stochastic layer arity must be a power of two >= 2");
}

// Sums a (rows * groups, 1) column back to (rows, 1).
NodeRef sum_groups(NodeRef per_group, std::size_t groups) {
    const std::size_t rows = per_group.rows() / groups;
    return ad::sum(ad::reshape(per_group, rows, groups), Reduce::PerRow);
}

NodeRef expand_prior(const StochasticLayer& layer) {
    const NodeRef q = layer.posterior_logits;
    const NodeRef p = layer.prior_logits;
    if (p.cols() != q.cols()) throw std::invalid_argument("stochastic layer: prior and posterior logits differ in width");
    if (p.rows() == q.rows()) return p;
    if (p.rows() != 1) throw std::invalid_argument("stochastic layer: prior logits must have one row or match rows");
    return ad::broadcast_to(p, q.rows(), q.cols());
}

NodeRef grouped(NodeRef logits, std::size_t arity, std::size_t groups) {
    if (logits.cols() != groups * arity) {
        throw std::invalid_argument("stochastic layer: logits width " + std::to_string(logits.cols()) +
                                    " does not equal groups * arity");
    }
    return ad::reshape(logits, logits.rows() * groups, arity);
}

std::size_t layer_groups(NodeRef logits, std::size_t arity) {
    return arity == 2 ? logits.cols() : logits.cols() / arity;
}

}  // namespace

std::string to_string(RelaxationMode mode) {
    switch (mode) {
        case RelaxationMode::RelaxedKl: return "relaxed_kl";
        case RelaxationMode::RelaxedLogMass: return "relaxed_log_mass";
        case RelaxationMode::AnalyticKl: return "analytic_kl";
    }
    return "unknown";
}

RelaxationMode parse_relaxation_mode(std::string_view text) {
    if (text == "relaxed_kl") return RelaxationMode::RelaxedKl;
    if (text == "relaxed_log_mass") return RelaxationMode::RelaxedLogMass;
    if (text == "analytic_kl") return RelaxationMode::AnalyticKl;
    throw std::invalid_argument("unknown relaxation mode: " + std::string(text));
}

void ObjectiveConfig::validate() const {
    if (m == 0) throw std::invalid_argument("ObjectiveConfig: m must be >= 1");
    (void)Temperature{posterior_temperature};
    (void)Temperature{prior_temperature};
}

// Generic estimators -------------------------------------------------------------

namespace {

struct Evaluation {
    double value;
    std::vector<double> samples;
};

Evaluation evaluate(ad::Tape& tape, const LossBuilder& build, const NodeMap& nodes, RngStream& rng, std::size_t m,
                    NodeRef* root) {
    if (m == 0) throw std::invalid_argument("Monte Carlo objective: m must be >= 1");
    const RngStream round = rng.child(rng.next_u64());
    std::vector<NodeRef> terms;
    std::vector<double> samples;
    terms.reserve(m);
    for (std::size_t s = 0; s < m; ++s) {
        RngStream sample_rng = round.child(s);
        NodeRef v = build(tape, nodes, sample_rng);
        if (v.value().size() != 1) throw std::invalid_argument("LossBuilder must return a scalar");
        samples.push_back(v.value().item());
        terms.push_back(v);
    }
    NodeRef total = terms.size() == 1 ? terms[0] : ad::sum(ad::concat(terms, ad::Axis::Cols));
    total = total / static_cast<double>(m);
    if (root) *root = total;
    return {total.value().item(), std::move(samples)};
}

}  // namespace

GradEstimate pathwise_gradient(const LossBuilder& build, const ParameterMap& params, RngStream& rng, std::size_t m) {
    ad::Tape tape;
    NodeMap nodes;
    for (const auto& [k, v] : params) nodes.emplace(k, tape.variable(v));
    NodeRef root;
    auto ev = evaluate(tape, build, nodes, rng, m, &root);
    tape.backward(root, {.reject_discrete = true});
    GradEstimate out;
    for (const auto& [k, n] : nodes) out.grads.emplace(k, n.grad());
    out.value = ev.value;
    out.sample_values = std::move(ev.samples);
    return out;
}

double monte_carlo_objective(const LossBuilder& build, const ParameterMap& params, RngStream rng, std::size_t m) {
    ad::Tape tape;
    NodeMap nodes;
    for (const auto& [k, v] : params) nodes.emplace(k, tape.constant(v));
    return evaluate(tape, build, nodes, rng, m, nullptr).value;
}

void BaselineState::update(double batch_mean) noexcept {
    if (!initialized) {
        value = batch_mean;
        initialized = true;
    } else {
        value = rate * value + (1.0 - rate) * batch_mean;
    }
}

GradEstimate score_function_gradient(const LogMassBuilder& log_mass, std::span<const double> f_values,
                                     const ParameterMap& params, BaselineState& baseline) {
    if (f_values.empty()) throw std::invalid_argument("score_function_gradient: no samples");
    ad::Tape tape;
    NodeMap nodes;
    for (const auto& [k, v] : params) nodes.emplace(k, tape.variable(v));
    const double b = baseline.current();
    const double inv = 1.0 / static_cast<double>(f_values.size());
    std::vector<NodeRef> terms;
    terms.reserve(f_values.size());
    double mean_f = 0.0;
    for (std::size_t s = 0; s < f_values.size(); ++s) {
        NodeRef lm = log_mass(tape, nodes, s);
        if (lm.value().size() != 1) throw std::invalid_argument("LogMassBuilder must return a scalar");
        terms.push_back(lm * ((f_values[s] - b) * inv));
        mean_f += f_values[s] * inv;
    }
    NodeRef root = terms.size() == 1 ? terms[0] : ad::sum(ad::concat(terms, ad::Axis::Cols));
    tape.backward(root);
    GradEstimate out;
    for (const auto& [k, n] : nodes) out.grads.emplace(k, n.grad());
    out.value = mean_f;
    out.sample_values.assign(f_values.begin(), f_values.end());
    out.baseline = b;
    baseline.update(mean_f);
    return out;
}

// Multi-sample bound ---------------------------------------------------------------

double multisample_bound(std::span<const double> log_weights) {
    if (log_weights.empty()) throw std::invalid_argument("multisample_bound: m must be >= 1");
    return logsumexp(log_weights) - std::log(static_cast<double>(log_weights.size()));
}

NodeRef multisample_bound(NodeRef log_weights, std::size_t* clamp_count) {
    if (clamp_count) {
        for (double v : log_weights.value().data()) *clamp_count += (v < -kLogWeightClamp || v > kLogWeightClamp);
    }
    const NodeRef clamped = ad::clamp(log_weights, -kLogWeightClamp, kLogWeightClamp);
    return ad::logsumexp(clamped, Reduce::PerRow) - std::log(static_cast<double>(log_weights.cols()));
}

NodeRef score_function_surrogate(NodeRef f, NodeRef log_q, BaselineState& baseline) {
    const double b = baseline.current();
    const NodeRef advantage = ad::stop_gradient(f) - b;
    const NodeRef surrogate = f + advantage * log_q;
    double mean_f = 0.0;
    for (double v : f.value().data()) mean_f += v;
    baseline.update(mean_f / static_cast<double>(f.value().size()));
    return ad::mean(surrogate);
}

// Stochastic layers ----------------------------------------------------------------

NodeRef relaxed_layer_sample(NodeRef logits, std::size_t arity, double lambda, RngStream& rng) {
    require_arity(arity);
    if (arity == 2) {
        Tensor noise(logits.rows(), logits.cols());
        fill_logistic(rng, noise.data());
        return on_tape::binary_logit_sample(logits, lambda, noise);
    }
    const NodeRef g = grouped(logits, arity, logits.cols() / arity);
    Tensor noise(g.rows(), g.cols());
    fill_gumbel(rng, noise.data());
    return on_tape::exp_concrete_sample(g, lambda, noise);
}

NodeRef discrete_layer_sample(NodeRef logits, std::size_t arity, RngStream& rng) {
    require_arity(arity);
    if (arity == 2) {
        Tensor noise(logits.rows(), logits.cols());
        fill_logistic(rng, noise.data());
        return on_tape::bernoulli_sample(logits, noise);
    }
    const NodeRef g = grouped(logits, arity, logits.cols() / arity);
    Tensor noise(g.rows(), g.cols());
    fill_gumbel(rng, noise.data());
    return on_tape::discrete_sample(g, noise);
}

NodeRef embed_relaxed(NodeRef sample, std::size_t arity, std::size_t groups) {
    require_arity(arity);
    if (arity == 2) return ad::sigmoid(sample) * 2.0 - 1.0;
    const NodeRef e = on_tape::hypercube_embed(ad::exp(sample), arity);
    return ad::reshape(e, sample.rows() / groups, groups * e.cols());
}

NodeRef embed_discrete(NodeRef sample, std::size_t arity, std::size_t groups) {
    require_arity(arity);
    if (arity == 2) return sample * 2.0 - 1.0;
    const NodeRef e = on_tape::hypercube_embed(sample, arity);
    return ad::reshape(e, sample.rows() / groups, groups * e.cols());
}

NodeRef relaxed_log_ratio(const StochasticLayer& layer, const ObjectiveConfig& cfg) {
    cfg.validate();
    require_arity(layer.arity);
    const double l1 = cfg.posterior_temperature;
    const double l2 = cfg.prior_temperature;
    const NodeRef q = layer.posterior_logits;
    const NodeRef p = expand_prior(layer);
    const NodeRef y = layer.sample;
    if (cfg.mode != RelaxationMode::RelaxedKl) warn_once(cfg.mode);

    if (layer.arity == 2) {
        NodeRef term;
        switch (cfg.mode) {
            case RelaxationMode::RelaxedKl:
                term = on_tape::binary_logit_log_density(p, l2, y) - on_tape::binary_logit_log_density(q, l1, y);
                break;
            case RelaxationMode::RelaxedLogMass: {
                const NodeRef z = ad::sigmoid(y);
                term = z * (ad::log_sigmoid(p) - ad::log_sigmoid(q)) +
                       (1.0 - z) * (ad::log_sigmoid(-p) - ad::log_sigmoid(-q));
                break;
            }
            case RelaxationMode::AnalyticKl:
                term = ad::sigmoid(q) * (ad::log_sigmoid(p) - ad::log_sigmoid(q)) +
                       ad::sigmoid(-q) * (ad::log_sigmoid(-p) - ad::log_sigmoid(-q));
                break;
        }
        return ad::sum(term, Reduce::PerRow);
    }

    const std::size_t groups = layer_groups(q, layer.arity);
    const NodeRef qg = grouped(q, layer.arity, groups);
    const NodeRef pg = grouped(p, layer.arity, groups);
    NodeRef per_group;
    switch (cfg.mode) {
        case RelaxationMode::RelaxedKl:
            per_group = on_tape::exp_concrete_log_density(pg, l2, y) - on_tape::exp_concrete_log_density(qg, l1, y);
            break;
        case RelaxationMode::RelaxedLogMass:
            per_group = ad::sum(ad::exp(y) * (ad::log_softmax(pg, Reduce::PerRow) - ad::log_softmax(qg, Reduce::PerRow)),
                                Reduce::PerRow);
            break;
        case RelaxationMode::AnalyticKl:
            per_group = ad::sum(ad::softmax(qg, Reduce::PerRow) *
                                    (ad::log_softmax(pg, Reduce::PerRow) - ad::log_softmax(qg, Reduce::PerRow)),
                                Reduce::PerRow);
            break;
    }
    return sum_groups(per_group, groups);
}

namespace {

NodeRef discrete_log_mass_rows(NodeRef logits, NodeRef sample, std::size_t arity) {
    if (arity == 2) return ad::sum(on_tape::bernoulli_log_mass(logits, sample), Reduce::PerRow);
    const std::size_t groups = layer_groups(logits, arity);
    return sum_groups(on_tape::discrete_log_mass(grouped(logits, arity, groups), sample), groups);
}

}  // namespace

NodeRef discrete_log_posterior(const StochasticLayer& layer) {
    require_arity(layer.arity);
    return discrete_log_mass_rows(layer.posterior_logits, layer.sample, layer.arity);
}

NodeRef discrete_log_prior(const StochasticLayer& layer) {
    require_arity(layer.arity);
    return discrete_log_mass_rows(expand_prior(layer), layer.sample, layer.arity);
}

NodeRef discrete_log_ratio(const StochasticLayer& layer) {
    return discrete_log_prior(layer) - discrete_log_posterior(layer);
}

// Single-latent objective ------------------------------------------------------

namespace {

NodeRef finish_bound(NodeRef log_weight, std::size_t batch, std::size_t m, ObjectiveDiagnostics* diagnostics) {
    const NodeRef lw = ad::reshape(log_weight, batch, m);
    std::size_t clamps = 0;
    const NodeRef bound = multisample_bound(lw, &clamps);
    if (diagnostics) {
        diagnostics->clamp_count += clamps;
        diagnostics->log_weights = lw.value();
    }
    return ad::mean(bound);
}

StochasticLayer single_layer(NodeRef x, const Encoder& encoder, const Prior& prior, std::size_t m,
                             std::size_t arity, std::size_t groups) {
    StochasticLayer layer;
    layer.arity = arity;
    layer.groups = groups;
    layer.posterior_logits = ad::repeat_rows(encoder(x), m);
    layer.prior_logits = prior();
    const std::size_t width = arity == 2 ? groups : groups * arity;
    if (layer.posterior_logits.cols() != width || layer.prior_logits.cols() != width) {
        throw std::invalid_argument("single-latent objective: logits width does not match arity and groups");
    }
    return layer;
}

}  // namespace

NodeRef relaxed_objective(NodeRef x, const Encoder& encoder, const Decoder& decoder, const Prior& prior,
                          const ObjectiveConfig& cfg, std::size_t arity, std::size_t groups, RngStream& rng,
                          ObjectiveDiagnostics* diagnostics) {
    cfg.validate();
    require_arity(arity);
    StochasticLayer layer = single_layer(x, encoder, prior, cfg.m, arity, groups);
    layer.sample = relaxed_layer_sample(layer.posterior_logits, arity, cfg.posterior_temperature, rng);
    const NodeRef xr = ad::repeat_rows(x, cfg.m);
    const NodeRef log_lik = decoder(embed_relaxed(layer.sample, arity, groups), xr);
    return finish_bound(log_lik + relaxed_log_ratio(layer, cfg), x.rows(), cfg.m, diagnostics);
}

NodeRef discrete_objective(NodeRef x, const Encoder& encoder, const Decoder& decoder, const Prior& prior,
                           std::size_t m, std::size_t arity, std::size_t groups, RngStream& rng,
                           ObjectiveDiagnostics* diagnostics) {
    if (m == 0) throw std::invalid_argument("discrete_objective: m must be >= 1");
    require_arity(arity);
    StochasticLayer layer = single_layer(x, encoder, prior, m, arity, groups);
    layer.sample = discrete_layer_sample(layer.posterior_logits, arity, rng);
    const NodeRef xr = ad::repeat_rows(x, m);
    const NodeRef log_lik = decoder(embed_discrete(layer.sample, arity, groups), xr);
    return finish_bound(log_lik + discrete_log_ratio(layer), x.rows(), m, diagnostics);
}

}  // namespace concrete
