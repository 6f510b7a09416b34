#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "concrete/data.hpp"
#include "concrete/model.hpp"
#include "concrete/tasks.hpp"

// Training and evaluation. Streams of the run seed:
//   0 parameter init, 1 minibatch shuffling, 2 training noise,
//   3 evaluation noise, 4 binarization, 5 synthetic data.
namespace concrete {

enum class Estimator { Concrete, Sfe };
std::string to_string(Estimator e);
Estimator parse_estimator(std::string_view text);

struct TrainConfig {
    std::string model = "(4H~16V)";
    std::size_t arity = 2;
    TaskKind task = TaskKind::Density;
    std::string data = "synth";
    std::filesystem::path data_dir = "data";
    SynthConfig synth;

    std::size_t m_train = 1;
    std::size_t m_eval = 100;
    double lr = 3e-4;
    double weight_decay = 0.0;
    std::size_t batch = 64;
    std::size_t steps = 5000;
    /// NaN selects the default for the arity (see default_temperatures).
    double lambda_post = std::numeric_limits<double>::quiet_NaN();
    double lambda_prior = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 1;
    Estimator estimator = Estimator::Concrete;
    RelaxationMode relaxation = RelaxationMode::RelaxedKl;
    bool centering = true;

    std::size_t eval_every = 250;
    /// Rows of the training split used for the train_* metric columns.
    std::size_t train_eval_rows = 500;
    /// Examples per evaluation chunk (each is repeated m_eval times).
    std::size_t eval_chunk = 100;
    /// Output directory; empty writes nothing.
    std::filesystem::path out;

    /// Fills NaN temperatures and checks every field.
    void resolve();
    ObjectiveConfig objective(std::size_t m) const;
};

struct Temperatures {
    double posterior, prior;
};
/// n = 2: (2/3, 1/2); n = 4: (1, 2/3); n = 8: (2/3, 2/5). Other arities use the n = 8 pair.
Temperatures default_temperatures(std::size_t arity);

// Adam ----------------------------------------------------------------------------

struct AdamState {
    ParameterMap m, v;
    std::size_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// True for weight matrices (keys whose last component starts with 'W'); only
/// these receive weight decay.
bool is_weight_key(const std::string& key);

/// One bias-corrected Adam step on `params`; `grads` are loss gradients
/// (descent direction). weight_decay * W is added to the gradient of weight
/// matrices (an L2 term of weight_decay / 2 * |W|^2 in the loss). Throws
/// std::runtime_error naming the key on a non-finite gradient.
void adam_step(ParameterMap& params, const ParameterMap& grads, AdamState& state, double lr, double weight_decay);

// Evaluation ------------------------------------------------------------------------

struct EvalResult {
    double bound = 0.0;  // mean m-sample bound, nats per example
    std::size_t clamp_count = 0;
};

/// Mean m-sample bound over the rows of `images`, discrete or relaxed. Never
/// mutates the store.
EvalResult evaluate(const TaskInstance& task, const NetworkSpec& spec, const ParameterStore& store,
                    const Tensor& images, SampleMode mode, const ObjectiveConfig& cfg, RngStream rng,
                    std::size_t chunk = 100);

// Training ------------------------------------------------------------------------

struct MetricsRow {
    std::size_t step = 0;
    double train_relaxed = 0;   // relaxed bound on a fixed training subset, m_train
    double train_discrete = 0;  // discrete bound on the same subset, m_train
    double eval_discrete = 0;   // discrete bound on the validation split, m_eval
    double wall_seconds = 0;    // written to timing.csv, not metrics.csv
    std::size_t clamp_count = 0;  // clamped log weights in training since the last row
    double baseline = 0;          // score-function baseline (0 for concrete)
};

struct TrainResult {
    NetworkSpec spec;
    TaskInstance task;
    ParameterStore store;
    std::vector<MetricsRow> metrics;
    double initial_test_nll = 0;
    double final_test_nll = 0;
    double final_test_relaxed = 0;  // -(relaxed m_eval bound) on the test split
    std::size_t kept_step = 0;      // step of the returned parameters
};

/// Runs the training loop. `data` overrides loading from cfg.data when given.
/// Writes metrics.csv, timing.csv, checkpoint.bin and summary.json to cfg.out
/// when it is set. A non-finite loss aborts after saving the last good
/// checkpoint.
TrainResult train(TrainConfig cfg, const Dataset* data = nullptr);

struct SweepRow {
    double lambda = 0;
    double relaxed = 0;   // -(relaxed bound), lower is better
    double discrete = 0;  // -(discrete bound)
    double gap = 0;       // discrete - relaxed
};

/// One training run per temperature (posterior and prior set to lambda).
/// Both graphs are scored on the test split with the training sample count
/// m_train, averaged over 10 noise replicates. Writes
/// sweep.csv to cfg.out when set, and each run under cfg.out/lambda_<value>.
std::vector<SweepRow> temperature_sweep(const TrainConfig& cfg, const std::vector<double>& lambdas,
                                        const Dataset* data = nullptr);

/// Evaluates a checkpoint on the test split of `data`.
EvalResult evaluate_checkpoint(const Checkpoint& ck, const Dataset& data, std::size_t m, std::uint64_t seed);

}  // namespace concrete
