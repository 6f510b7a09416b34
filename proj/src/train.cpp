#include "concrete/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "concrete/relaxations.hpp"
#include "json.hpp"

namespace concrete {

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kTestNoise = ~std::uint64_t{0};
constexpr std::size_t kSweepReplicates = 10;

NodeMap as_variables(ad::Tape& tape, const ParameterMap& params) {
    NodeMap out;
    for (const auto& [k, t] : params) out.emplace(k, tape.variable(t));
    return out;
}

NodeMap as_constants(ad::Tape& tape, const ParameterMap& params) {
    NodeMap out;
    for (const auto& [k, t] : params) out.emplace(k, tape.constant(t));
    return out;
}

// Epoch-wise shuffled minibatch indices.
class BatchSampler {
public:
    BatchSampler(std::size_t n, RngStream rng) : order_(n), rng_(rng) { reshuffle(); }

    std::vector<std::size_t> next(std::size_t size) {
        std::vector<std::size_t> out;
        out.reserve(size);
        while (out.size() < size) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.next_below(i)]);
        pos_ = 0;
    }

    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    RngStream rng_;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << text;
        if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string s = "step,train_relaxed,train_discrete,eval_discrete,clamp_count,baseline\n";
    for (const auto& r : rows) {
        s += std::to_string(r.step) + "," + fmt(r.train_relaxed) + "," + fmt(r.train_discrete) + "," +
             fmt(r.eval_discrete) + "," + std::to_string(r.clamp_count) + "," + fmt(r.baseline) + "\n";
    }
    return s;
}

std::string timing_csv(const std::vector<MetricsRow>& rows) {
    std::string s = "step,wall_seconds\n";
    for (const auto& r : rows) s += std::to_string(r.step) + "," + fmt(r.wall_seconds) + "\n";
    return s;
}

nlohmann::json config_json(const TrainConfig& c) {
    return {{"model", c.model},
            {"arity", c.arity},
            {"task", to_string(c.task)},
            {"data", c.data},
            {"m_train", c.m_train},
            {"m_eval", c.m_eval},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"batch", c.batch},
            {"steps", c.steps},
            {"lambda_post", c.lambda_post},
            {"lambda_prior", c.lambda_prior},
            {"seed", c.seed},
            {"estimator", to_string(c.estimator)},
            {"relaxation_mode", to_string(c.relaxation)},
            {"centering", c.centering},
            {"eval_every", c.eval_every}};
}

bool all_finite(const ParameterMap& m) {
    for (const auto& [k, t] : m)
        for (double v : t.data())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

std::string to_string(Estimator e) { return e == Estimator::Concrete ? "concrete" : "sfe"; }

Estimator parse_estimator(std::string_view text) {
    if (text == "concrete") return Estimator::Concrete;
    if (text == "sfe") return Estimator::Sfe;
    throw std::invalid_argument("unknown estimator '" + std::string(text) + "' (expected concrete or sfe)");
}

Temperatures default_temperatures(std::size_t arity) {
    if (arity == 2) return {2.0 / 3.0, 0.5};
    if (arity == 4) return {1.0, 2.0 / 3.0};
    return {2.0 / 3.0, 0.4};
}

void TrainConfig::resolve() {
    const Temperatures t = default_temperatures(arity);
    if (std::isnan(lambda_post)) lambda_post = t.posterior;
    if (std::isnan(lambda_prior)) lambda_prior = t.prior;
    const auto positive = [](const char* name, double v) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be positive");
    };
    positive("lr", lr);
    positive("lambda-post", lambda_post);
    positive("lambda-prior", lambda_prior);
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("wd must be non-negative");
    if (m_train == 0 || m_eval == 0) throw std::invalid_argument("m must be positive");
    if (batch == 0) throw std::invalid_argument("batch must be positive");
    if (eval_every == 0) throw std::invalid_argument("eval-every must be positive");
    if (eval_chunk == 0) throw std::invalid_argument("eval chunk must be positive");
    if (!is_power_of_two(arity)) throw std::invalid_argument("arity must be a power of two >= 2");
}

ObjectiveConfig TrainConfig::objective(std::size_t m) const {
    ObjectiveConfig c;
    c.m = m;
    c.mode = relaxation;
    c.posterior_temperature = lambda_post;
    c.prior_temperature = lambda_prior;
    return c;
}

// Adam ----------------------------------------------------------------------------

bool is_weight_key(const std::string& key) {
    const auto slash = key.rfind('/');
    const std::size_t at = slash == std::string::npos ? 0 : slash + 1;
    return at < key.size() && key[at] == 'W';
}

void adam_step(ParameterMap& params, const ParameterMap& grads, AdamState& s, double lr, double weight_decay) {
    for (const auto& [key, g] : grads) {
        const auto it = params.find(key);
        if (it == params.end()) throw std::invalid_argument("adam_step: gradient for unknown parameter " + key);
        if (!it->second.same_shape(g)) throw std::invalid_argument("adam_step: shape mismatch for " + key);
        for (double v : g.data())
            if (!std::isfinite(v)) throw std::runtime_error("adam_step: non-finite gradient for " + key);
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (auto& [key, w] : params) {
        const auto git = grads.find(key);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        Tensor& m = s.m.try_emplace(key, w.rows(), w.cols()).first->second;
        Tensor& v = s.v.try_emplace(key, w.rows(), w.cols()).first->second;
        const double wd = is_weight_key(key) ? weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + wd * w[i];
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
        }
    }
}

// Evaluation ------------------------------------------------------------------------

EvalResult evaluate(const TaskInstance& task, const NetworkSpec& spec, const ParameterStore& store,
                    const Tensor& images, SampleMode mode, const ObjectiveConfig& cfg, RngStream rng,
                    std::size_t chunk) {
    if (images.rows() == 0) throw std::invalid_argument("evaluate: no examples");
    EvalResult out;
    double total = 0;
    for (std::size_t begin = 0, part = 0; begin < images.rows(); begin += chunk, ++part) {
        const std::size_t end = std::min(images.rows(), begin + chunk);
        ad::Tape tape;
        RngStream r = rng.child(part);
        TaskObjectiveOptions o;
        o.mode = mode;
        o.objective = cfg;
        const TaskObjective obj = task_objective(task, spec, as_constants(tape, store.params), store.centering,
                                                 make_batch(task, slice_rows(images, begin, end)), o, r, tape);
        total += obj.value.value().item() * static_cast<double>(end - begin);
        out.clamp_count += obj.clamp_count;
    }
    out.bound = total / static_cast<double>(images.rows());
    return out;
}

EvalResult evaluate_checkpoint(const Checkpoint& ck, const Dataset& data, std::size_t m, std::uint64_t seed) {
    const TaskInstance task{ck.spec.structured() ? TaskKind::Structured : TaskKind::Density, data.dims()};
    ObjectiveConfig cfg;
    cfg.m = m;
    return evaluate(task, ck.spec, ck.store, data.test, SampleMode::Discrete, cfg,
                    RngStream(seed, kEvalStream).child(kTestNoise));
}

// Training ------------------------------------------------------------------------

TrainResult train(TrainConfig cfg, const Dataset* data) {
    cfg.resolve();
    Dataset loaded;
    if (data == nullptr) {
        loaded = load_dataset(cfg.data, cfg.data_dir, cfg.seed, cfg.synth);
        data = &loaded;
    }
    TrainResult res;
    res.spec = parse_model_spec(cfg.model, cfg.arity);
    res.task = {cfg.task, data->dims()};
    res.task.check(res.spec);
    const NetworkSpec& spec = res.spec;
    const TaskInstance& task = res.task;

    RngStream init(cfg.seed, kInitStream);
    ParameterStore& store = res.store;
    store = init_params(spec, target_base_rates(task, *data), init);

    if (!cfg.out.empty()) std::filesystem::create_directories(cfg.out);
    const auto checkpoint_path = cfg.out / "checkpoint.bin";

    const ObjectiveConfig train_obj = cfg.objective(cfg.m_train);
    const ObjectiveConfig eval_obj = cfg.objective(cfg.m_eval);
    const RngStream eval_noise(cfg.seed, kEvalStream);
    const Tensor train_subset = slice_rows(data->train, 0, std::min(cfg.train_eval_rows, data->train.rows()));
    const Tensor& valid = data->valid.rows() > 0 ? data->valid : data->test;

    const auto test_nll = [&](const ParameterStore& s, SampleMode mode) {
        return -evaluate(task, spec, s, data->test, mode, eval_obj, eval_noise.child(kTestNoise), cfg.eval_chunk).bound;
    };
    res.initial_test_nll = test_nll(store, SampleMode::Discrete);

    BatchSampler sampler(data->train.rows(), RngStream(cfg.seed, kShuffleStream));
    const RngStream train_noise(cfg.seed, kTrainStream);
    AdamState adam;
    BaselineState baseline;
    const auto start = std::chrono::steady_clock::now();
    std::size_t clamp_since_row = 0;
    ParameterStore best = store;
    double best_valid = -std::numeric_limits<double>::infinity();
    res.kept_step = 0;

    const auto abort_run = [&](const std::string& why) {
        if (!cfg.out.empty()) {
            save_checkpoint(checkpoint_path, spec, store);
            write_text_atomic(cfg.out / "metrics.csv", metrics_csv(res.metrics));
        }
        throw std::runtime_error(why + "; last good checkpoint kept");
    };

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const auto rows = sampler.next(cfg.batch);
        const Batch batch = make_batch(task, gather_rows(data->train, rows));
        RngStream noise = train_noise.child(step);
        ad::Tape tape;
        const NodeMap vars = as_variables(tape, store.params);
        TaskObjectiveOptions o;
        o.objective = train_obj;
        o.centering = cfg.centering;
        NodeRef loss;
        ParameterMap activity;
        if (cfg.estimator == Estimator::Concrete) {
            o.mode = SampleMode::Relaxed;
            const TaskObjective obj = task_objective(task, spec, vars, store.centering, batch, o, noise, tape);
            loss = -obj.value;
            clamp_since_row += obj.clamp_count;
            activity = obj.activity_means;
            if (!std::isfinite(loss.value().item())) abort_run("non-finite loss at step " + std::to_string(step));
            tape.backward(loss, {.reject_discrete = true});
        } else {
            o.mode = SampleMode::Discrete;
            const TaskObjective obj = task_objective(task, spec, vars, store.centering, batch, o, noise, tape);
            loss = -score_function_surrogate(obj.per_example, obj.log_proposal, baseline);
            clamp_since_row += obj.clamp_count;
            activity = obj.activity_means;
            if (!std::isfinite(loss.value().item())) abort_run("non-finite loss at step " + std::to_string(step));
            tape.backward(loss);
        }
        ParameterMap grads;
        for (const auto& [k, n] : vars) grads.emplace(k, n.grad());
        if (!all_finite(grads)) abort_run("non-finite gradient at step " + std::to_string(step));
        adam_step(store.params, grads, adam, cfg.lr, cfg.weight_decay);
        if (cfg.centering) centering_update(store, activity);

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            MetricsRow row;
            row.step = step;
            row.train_relaxed = evaluate(task, spec, store, train_subset, SampleMode::Relaxed, train_obj,
                                         eval_noise.child(3 * step), cfg.eval_chunk)
                                    .bound;
            row.train_discrete = evaluate(task, spec, store, train_subset, SampleMode::Discrete, train_obj,
                                          eval_noise.child(3 * step + 1), cfg.eval_chunk)
                                     .bound;
            row.eval_discrete = evaluate(task, spec, store, valid, SampleMode::Discrete, eval_obj,
                                         eval_noise.child(3 * step + 2), cfg.eval_chunk)
                                    .bound;
            row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            row.clamp_count = clamp_since_row;
            row.baseline = cfg.estimator == Estimator::Sfe ? baseline.value : 0.0;
            clamp_since_row = 0;
            if (!std::isfinite(row.train_relaxed) || !std::isfinite(row.train_discrete) ||
                !std::isfinite(row.eval_discrete)) {
                abort_run("non-finite evaluation at step " + std::to_string(step));
            }
            res.metrics.push_back(row);
            if (row.eval_discrete > best_valid) {
                best_valid = row.eval_discrete;
                best = store;
                if (cfg.estimator == Estimator::Sfe) res.kept_step = step;
            }
            if (!cfg.out.empty()) {
                save_checkpoint(checkpoint_path, spec, cfg.estimator == Estimator::Sfe ? best : store);
                write_text_atomic(cfg.out / "metrics.csv", metrics_csv(res.metrics));
                write_text_atomic(cfg.out / "timing.csv", timing_csv(res.metrics));
            }
        }
    }
    if (cfg.estimator == Estimator::Sfe) {
        store = best;
    } else {
        res.kept_step = cfg.steps;
    }
    res.final_test_nll = test_nll(store, SampleMode::Discrete);
    res.final_test_relaxed = test_nll(store, SampleMode::Relaxed);

    if (!cfg.out.empty()) {
        save_checkpoint(checkpoint_path, spec, store);
        write_text_atomic(cfg.out / "metrics.csv", metrics_csv(res.metrics));
        write_text_atomic(cfg.out / "timing.csv", timing_csv(res.metrics));
        nlohmann::json summary = {{"config", config_json(cfg)},
                                  {"initial_test_nll", res.initial_test_nll},
                                  {"final_test_nll", res.final_test_nll},
                                  {"final_test_relaxed_nll", res.final_test_relaxed},
                                  {"kept_step", res.kept_step},
                                  {"dataset", data->name}};
        write_text_atomic(cfg.out / "summary.json", summary.dump(2) + "\n");
    }
    return res;
}

std::vector<SweepRow> temperature_sweep(const TrainConfig& cfg, const std::vector<double>& lambdas,
                                        const Dataset* data) {
    if (lambdas.empty()) throw std::invalid_argument("temperature_sweep: no temperatures");
    Dataset loaded;
    if (data == nullptr) {
        loaded = load_dataset(cfg.data, cfg.data_dir, cfg.seed, cfg.synth);
        data = &loaded;
    }
    std::vector<SweepRow> rows;
    std::string csv = "lambda,relaxed,discrete,gap\n";
    for (double lambda : lambdas) {
        TrainConfig c = cfg;
        c.lambda_post = lambda;
        c.lambda_prior = lambda;
        if (!cfg.out.empty()) c.out = cfg.out / ("lambda_" + fmt(lambda));
        const TrainResult r = train(c, data);
        // Both graphs are scored on the objective they were trained with
        // (m = m_train), averaged over independent noise replicates.
        c.resolve();
        const ObjectiveConfig obj = c.objective(c.m_train);
        const RngStream noise = RngStream(c.seed, kEvalStream).child(kTestNoise - 1);
        double relaxed = 0, discrete = 0;
        for (std::size_t k = 0; k < kSweepReplicates; ++k) {
            relaxed -= evaluate(r.task, r.spec, r.store, data->test, SampleMode::Relaxed, obj, noise.child(2 * k),
                                c.eval_chunk)
                           .bound;
            discrete -= evaluate(r.task, r.spec, r.store, data->test, SampleMode::Discrete, obj,
                                 noise.child(2 * k + 1), c.eval_chunk)
                            .bound;
        }
        relaxed /= kSweepReplicates;
        discrete /= kSweepReplicates;
        SweepRow row{lambda, relaxed, discrete, discrete - relaxed};
        rows.push_back(row);
        csv += fmt(row.lambda) + "," + fmt(row.relaxed) + "," + fmt(row.discrete) + "," + fmt(row.gap) + "\n";
    }
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        write_text_atomic(cfg.out / "sweep.csv", csv);
    }
    return rows;
}

}  // namespace concrete
