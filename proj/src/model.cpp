#include "concrete/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "concrete/relaxations.hpp"

namespace concrete {
namespace {

using ad::Reduce;

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

std::string edge_key(std::string_view net, std::size_t i) { return std::string(net) + "/" + std::to_string(i); }

}  // namespace

// Spec ---------------------------------------------------------------------------

std::string NetworkSpec::to_string() const {
    std::string out = "(";
    for (std::size_t i = 0; i < layers.size(); ++i) {
        out += std::to_string(layers[i].units);
        out += layers[i].role == Role::Observed ? 'V' : 'H';
        if (i < links.size()) out += links[i] == Link::Linear ? '-' : '~';
    }
    return out + ")";
}

std::size_t NetworkSpec::groups(std::size_t i) const {
    const auto& l = layers.at(i);
    if (l.role != Role::Latent) throw std::invalid_argument("NetworkSpec::groups: layer is observed");
    return l.units / log2_exact(arity);
}

std::size_t NetworkSpec::logit_width(std::size_t i) const {
    return arity == 2 ? layers.at(i).units : groups(i) * arity;
}

std::size_t NetworkSpec::latent_bits() const {
    std::size_t bits = 0;
    for (const auto& l : layers)
        if (l.role == Role::Latent) bits += l.units;
    return bits;
}

std::size_t NetworkSpec::context_units() const { return structured() ? layers.front().units : 0; }

std::size_t NetworkSpec::target_units() const { return layers.empty() ? 0 : layers.back().units; }

void NetworkSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("model spec: no layers");
    if (links.size() + 1 != layers.size()) throw std::invalid_argument("model spec: link count mismatch");
    const std::size_t bits = log2_exact(arity);
    if (layers.back().role != Role::Observed) throw std::invalid_argument("model spec: last layer must be observed (V)");
    if (structured() && layers.size() < 3) {
        throw std::invalid_argument("model spec: a structured model needs a latent layer between context and target");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.units == 0) throw std::invalid_argument("model spec: zero units");
        const bool end = i == 0 || i + 1 == layers.size();
        if (l.role == Role::Observed && !end) throw std::invalid_argument("model spec: observed layer inside the chain");
        if (l.role == Role::Latent && l.units % bits != 0) {
            throw std::invalid_argument("model spec: latent units " + std::to_string(l.units) +
                                        " not divisible by log2(arity)");
        }
    }
}

NetworkSpec parse_model_spec(std::string_view text, std::size_t arity) {
    const auto fail = [&](const std::string& why) {
        throw std::invalid_argument("model spec \"" + std::string(text) + "\": " + why);
    };
    std::size_t pos = 0;
    const auto skip_space = [&] {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    };
    skip_space();
    if (pos >= text.size() || text[pos] != '(') fail("expected '('");
    ++pos;
    NetworkSpec spec;
    spec.arity = arity;
    bool closed = false;
    while (pos < text.size()) {
        skip_space();
        if (pos >= text.size()) break;
        if (!std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (text[pos] == ')') fail(spec.layers.empty() ? "empty model" : "dangling separator");
            fail(std::string("expected a unit count at '") + text[pos] + "'");
        }
        std::size_t units = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            units = units * 10 + static_cast<std::size_t>(text[pos] - '0');
            if (units > (std::size_t{1} << 32)) fail("unit count too large");
            ++pos;
        }
        if (units == 0) fail("zero units");
        if (pos >= text.size()) fail("missing layer type");
        const char kind = text[pos];
        if (kind == 'V' || kind == 'v') {
            spec.layers.push_back({Role::Observed, units});
        } else if (kind == 'H' || kind == 'h') {
            spec.layers.push_back({Role::Latent, units});
        } else {
            fail(std::string("unknown layer type '") + kind + "'");
        }
        ++pos;
        skip_space();
        if (pos >= text.size()) break;
        if (text[pos] == ')') {
            closed = true;
            ++pos;
            break;
        }
        const std::string_view rest = text.substr(pos);
        if (rest[0] == '-') {
            spec.links.push_back(Link::Linear);
            ++pos;
        } else if (rest[0] == '~') {
            spec.links.push_back(Link::Nonlinear);
            ++pos;
        } else if (starts_with(rest, "–") || starts_with(rest, "—") || starts_with(rest, "−")) {
            spec.links.push_back(Link::Linear);
            pos += 3;
        } else if (starts_with(rest, "∼")) {
            spec.links.push_back(Link::Nonlinear);
            pos += 3;
        } else {
            fail("unknown separator");
        }
    }
    if (!closed) fail("unbalanced parentheses");
    skip_space();
    if (pos != text.size()) fail("trailing characters after ')'");
    spec.validate();
    return spec;
}

// Parameters -------------------------------------------------------------------------

namespace {

struct ParamShape {
    std::string key;
    std::size_t rows, cols;
    bool weight;
};

void edge_shapes(std::vector<ParamShape>& out, const std::string& prefix, Link link, std::size_t in, std::size_t outw) {
    if (link == Link::Linear) {
        out.push_back({prefix + "/W", in, outw, true});
        out.push_back({prefix + "/b", 1, outw, false});
        return;
    }
    out.push_back({prefix + "/W0", in, in, true});
    out.push_back({prefix + "/b0", 1, in, false});
    out.push_back({prefix + "/W1", in, in, true});
    out.push_back({prefix + "/b1", 1, in, false});
    out.push_back({prefix + "/W2", in, outw, true});
    out.push_back({prefix + "/b2", 1, outw, false});
}

std::size_t edge_output(const NetworkSpec& spec, std::size_t layer) {
    return spec.layers[layer].role == Role::Observed ? spec.layers[layer].units : spec.logit_width(layer);
}

std::vector<ParamShape> param_shapes(const NetworkSpec& spec) {
    spec.validate();
    std::vector<ParamShape> shapes;
    const std::size_t k = spec.layers.size();
    if (k == 1) {
        shapes.push_back({"gen/bias/b", 1, spec.layers[0].units, false});
        return shapes;
    }
    if (!spec.structured()) shapes.push_back({"prior/logits", 1, spec.logit_width(0), false});
    for (std::size_t i = 0; i + 1 < k; ++i) {
        edge_shapes(shapes, edge_key("gen", i), spec.links[i], spec.layers[i].units, edge_output(spec, i + 1));
    }
    if (!spec.structured()) {
        for (std::size_t i = 0; i + 1 < k; ++i) {
            edge_shapes(shapes, edge_key("inf", i), spec.links[i], spec.layers[i + 1].units, spec.logit_width(i));
        }
    }
    return shapes;
}

std::string output_bias_key(const NetworkSpec& spec) {
    const std::size_t k = spec.layers.size();
    if (k == 1) return "gen/bias/b";
    return edge_key("gen", k - 2) + (spec.links[k - 2] == Link::Linear ? "/b" : "/b2");
}

// Latent layers whose activity feeds a proposal-network conditioning function.
std::vector<std::size_t> centered_layers(const NetworkSpec& spec) {
    std::vector<std::size_t> out;
    const std::size_t k = spec.layers.size();
    if (k < 3) return out;
    if (spec.structured()) {
        for (std::size_t i = 1; i + 2 < k; ++i) out.push_back(i);
    } else {
        for (std::size_t i = 1; i + 1 < k; ++i) out.push_back(i);
    }
    return out;
}

std::string center_key(std::size_t i) { return "center/" + std::to_string(i); }

}  // namespace

std::vector<std::string> parameter_keys(const NetworkSpec& spec) {
    std::vector<std::string> keys;
    for (const auto& s : param_shapes(spec)) keys.push_back(s.key);
    return keys;
}

ParameterStore init_params(const NetworkSpec& spec, std::span<const double> base_rates, RngStream& rng) {
    const auto shapes = param_shapes(spec);
    if (base_rates.empty()) throw std::invalid_argument("init_params: dataset base rates are required");
    if (base_rates.size() != spec.target_units()) {
        throw std::invalid_argument("init_params: " + std::to_string(base_rates.size()) +
                                    " base rates for a target layer of " + std::to_string(spec.target_units()));
    }
    ParameterStore store;
    for (const auto& s : shapes) {
        Tensor t(s.rows, s.cols);
        if (s.weight) {
            const double bound = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
            for (auto& v : t.data()) v = bound * (2.0 * sample_uniform(rng) - 1.0);
        }
        store.params.emplace(s.key, std::move(t));
    }
    Tensor& bias = store.params.at(output_bias_key(spec));
    for (std::size_t j = 0; j < base_rates.size(); ++j) {
        const double r = base_rates[j];
        if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("init_params: base rate outside [0, 1]");
        const double logit = std::log(r) - std::log1p(-r);
        bias[j] = std::clamp(logit, -5.0, 5.0);
    }
    for (std::size_t i : centered_layers(spec)) store.centering.emplace(center_key(i), Tensor(1, spec.layers[i].units));
    return store;
}

// Forward ----------------------------------------------------------------------------

namespace {

NodeRef condition(const NodeMap& p, const std::string& prefix, Link link, NodeRef in) {
    if (link == Link::Linear) return ad::affine(in, p.at(prefix + "/W"), p.at(prefix + "/b"));
    NodeRef h = ad::tanh(ad::affine(in, p.at(prefix + "/W0"), p.at(prefix + "/b0")));
    h = ad::tanh(ad::affine(h, p.at(prefix + "/W1"), p.at(prefix + "/b1")));
    return ad::affine(h, p.at(prefix + "/W2"), p.at(prefix + "/b2"));
}

NodeRef bernoulli_log_likelihood(NodeRef logits, NodeRef target) {
    if (logits.cols() != target.cols()) throw std::invalid_argument("forward: target width does not match the model");
    return ad::sum(target * logits - ad::softplus(logits), Reduce::PerRow);
}

Tensor column_mean(const Tensor& a) {
    Tensor m(1, a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) m[c] += a(r, c);
    for (auto& v : m.data()) v /= static_cast<double>(a.rows());
    return m;
}

class LayerSampler {
public:
    LayerSampler(const NetworkSpec& spec, RngStream& rng, const ForwardOptions& o) : spec_(spec), rng_(rng), o_(o) {
        if (!o.fixed_samples.empty() && o.mode != SampleMode::Discrete) {
            throw std::invalid_argument("forward: fixed samples require discrete mode");
        }
    }

    // `slot` counts latent layers in spec order.
    NodeRef sample(NodeRef logits, std::size_t slot) {
        const std::size_t n = spec_.arity;
        if (!o_.fixed_samples.empty()) {
            if (slot >= o_.fixed_samples.size()) throw std::invalid_argument("forward: too few fixed samples");
            return logits.tape().discrete(o_.fixed_samples[slot], logits);
        }
        if (o_.mode == SampleMode::Relaxed) {
            return relaxed_layer_sample(logits, n, o_.objective.posterior_temperature, rng_);
        }
        return discrete_layer_sample(logits, n, rng_);
    }

    NodeRef embed(NodeRef sample, std::size_t groups) const {
        return o_.mode == SampleMode::Relaxed ? embed_relaxed(sample, spec_.arity, groups)
                                              : embed_discrete(sample, spec_.arity, groups);
    }

private:
    const NetworkSpec& spec_;
    RngStream& rng_;
    const ForwardOptions& o_;
};

}  // namespace

ForwardResult forward(const NetworkSpec& spec, const NodeMap& params, const ParameterMap& centering, NodeRef context,
                      NodeRef target, RngStream& rng, const ForwardOptions& options) {
    spec.validate();
    if (options.mode == SampleMode::Relaxed) options.objective.validate();
    ad::Tape& tape = target.tape();
    const std::size_t k = spec.layers.size();
    const std::size_t rows = target.rows();
    if (target.cols() != spec.target_units()) {
        throw std::invalid_argument("forward: target has " + std::to_string(target.cols()) + " columns, model expects " +
                                    std::to_string(spec.target_units()));
    }
    ForwardResult out;
    const NodeRef zero = tape.constant(Tensor(rows, 1));

    if (k == 1) {
        out.log_likelihood =
            bernoulli_log_likelihood(ad::broadcast_to(params.at("gen/bias/b"), rows, target.cols()), target);
        out.log_ratio = zero;
        out.log_proposal = zero;
        out.log_weight = out.log_likelihood;
        return out;
    }

    LayerSampler sampler(spec, rng, options);
    std::vector<NodeRef> act(k);
    std::vector<StochasticLayer> layers(k);
    const auto centered = [&](std::size_t i) {
        const auto it = centering.find(center_key(i));
        if (it == centering.end()) return act[i];
        out.activity_means.emplace(center_key(i), column_mean(act[i].value()));
        if (!options.centering) return act[i];
        return act[i] - ad::stop_gradient(ad::constant_like(act[i], it->second));
    };

    if (spec.structured()) {
        if (!context.valid() || context.cols() != spec.context_units() || context.rows() != rows) {
            throw std::invalid_argument("forward: structured model needs a context of " +
                                        std::to_string(spec.context_units()) + " columns per target row");
        }
        act[0] = context;
        for (std::size_t i = 1; i + 1 < k; ++i) {
            const NodeRef in = i == 1 ? context : centered(i - 1);
            const NodeRef logits = condition(params, edge_key("gen", i - 1), spec.links[i - 1], in);
            StochasticLayer& l = layers[i];
            l.arity = spec.arity;
            l.groups = spec.groups(i);
            l.posterior_logits = logits;
            l.prior_logits = logits;
            l.sample = sampler.sample(logits, i - 1);
            act[i] = sampler.embed(l.sample, l.groups);
        }
    } else {
        for (std::size_t i = k - 1; i-- > 0;) {
            const NodeRef in = i + 2 == k ? target : centered(i + 1);
            const NodeRef logits = condition(params, edge_key("inf", i), spec.links[i], in);
            StochasticLayer& l = layers[i];
            l.arity = spec.arity;
            l.groups = spec.groups(i);
            l.posterior_logits = logits;
            l.sample = sampler.sample(logits, i);
            act[i] = sampler.embed(l.sample, l.groups);
        }
        layers[0].prior_logits = params.at("prior/logits");
        for (std::size_t i = 1; i + 1 < k; ++i) {
            layers[i].prior_logits = condition(params, edge_key("gen", i - 1), spec.links[i - 1], act[i - 1]);
        }
    }

    const NodeRef out_logits = condition(params, edge_key("gen", k - 2), spec.links[k - 2], act[k - 2]);
    out.log_likelihood = bernoulli_log_likelihood(out_logits, target);

    NodeRef ratio = zero;
    NodeRef proposal = zero;
    const std::size_t first_latent = spec.structured() ? 1 : 0;
    for (std::size_t i = first_latent; i + 1 < k; ++i) {
        const StochasticLayer& l = layers[i];
        if (!spec.structured()) {
            ratio = ratio + (options.mode == SampleMode::Relaxed ? relaxed_log_ratio(l, options.objective)
                                                                 : discrete_log_ratio(l));
        }
        if (options.mode == SampleMode::Discrete) proposal = proposal + discrete_log_posterior(l);
        out.layers.push_back(l);
        out.activity.push_back(act[i]);
    }
    out.log_ratio = ratio;
    out.log_proposal = proposal;
    out.log_weight = out.log_likelihood + ratio;
    return out;
}

void centering_update(ParameterStore& store, const ParameterMap& batch_means, double rate) {
    for (const auto& [key, mean] : batch_means) {
        auto it = store.centering.find(key);
        if (it == store.centering.end()) throw std::invalid_argument("centering_update: unknown layer " + key);
        if (!it->second.same_shape(mean)) throw std::invalid_argument("centering_update: shape mismatch for " + key);
        for (std::size_t j = 0; j < mean.size(); ++j) it->second[j] = rate * it->second[j] + (1.0 - rate) * mean[j];
    }
}

// Checkpoints ------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'N', 'C', 'R', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

void put_tensor(std::ostream& os, const std::string& key, const Tensor& t) {
    put_string(os, key);
    put_u32(os, static_cast<std::uint32_t>(t.rows()));
    put_u32(os, static_cast<std::uint32_t>(t.cols()));
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ParameterStore& store) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        os.write(kMagic, sizeof kMagic);
        put_u32(os, kVersion);
        put_string(os, spec.to_string());
        put_u32(os, static_cast<std::uint32_t>(spec.arity));
        put_u32(os, static_cast<std::uint32_t>(store.params.size() + store.centering.size()));
        for (const auto& [k, t] : store.params) put_tensor(os, "param:" + k, t);
        for (const auto& [k, t] : store.centering) put_tensor(os, "center:" + k, t);
        if (!os.flush()) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = get_u32(is);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::string text = get_string(is);
    const std::uint32_t arity = get_u32(is);
    Checkpoint ck{parse_model_spec(text, arity), {}};
    const std::uint32_t count = get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string key = get_string(is);
        const std::uint32_t rows = get_u32(is), cols = get_u32(is);
        if (std::uint64_t{rows} * cols > (1ull << 28)) throw std::runtime_error("checkpoint: implausible tensor size");
        Tensor t(rows, cols);
        if (!is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw std::runtime_error("checkpoint: truncated tensor " + key);
        }
        if (starts_with(key, "param:")) {
            ck.store.params.emplace(key.substr(6), std::move(t));
        } else if (starts_with(key, "center:")) {
            ck.store.centering.emplace(key.substr(7), std::move(t));
        } else {
            throw std::runtime_error("checkpoint: unknown entry " + key);
        }
    }
    for (const auto& k : parameter_keys(ck.spec)) {
        if (!ck.store.params.contains(k)) throw std::runtime_error("checkpoint: missing parameter " + k);
    }
    return ck;
}

}  // namespace concrete
