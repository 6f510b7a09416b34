#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "concrete/data.hpp"
#include "concrete/model.hpp"

// Density estimation scores whole images with the multi-sample bound.
// Structured prediction conditions the latent chain on the top half of each
// image (context) and scores only the bottom half (target); the prior doubles
// as the proposal, so the bound has no ratio term.
namespace concrete {

enum class TaskKind { Density, Structured };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

struct TaskInstance {
    TaskKind kind = TaskKind::Density;
    std::size_t dims = 0;  // full image width

    std::size_t context_dims() const { return kind == TaskKind::Structured ? dims / 2 : 0; }
    std::size_t target_dims() const { return kind == TaskKind::Structured ? dims - dims / 2 : dims; }
    /// Throws std::invalid_argument if the model's observed layers do not fit this task.
    void check(const NetworkSpec& spec) const;
};

struct Batch {
    Tensor context;  // (B, D/2) for structured tasks, empty otherwise
    Tensor target;
};

/// Splits image rows into the task's context and target.
Batch make_batch(const TaskInstance& task, const Tensor& images);

/// Base rates of the target columns, from the training split.
std::vector<double> target_base_rates(const TaskInstance& task, const Dataset& data);

struct TaskObjectiveOptions {
    SampleMode mode = SampleMode::Relaxed;
    ObjectiveConfig objective;  // m and temperatures
    bool centering = true;
};

struct TaskObjective {
    NodeRef value;         // scalar batch mean of the bound
    NodeRef per_example;   // (B, 1)
    NodeRef log_weights;   // (B, m)
    NodeRef log_proposal;  // (B, 1) sum over the m copies; discrete mode only
    std::size_t clamp_count = 0;
    ParameterMap activity_means;
};

/// The m-sample bound of `batch` under `spec`. Relaxed mode gives the training
/// objective; discrete mode the evaluation bound (and, with log_proposal, the
/// ingredients of the score-function surrogate).
TaskObjective task_objective(const TaskInstance& task, const NetworkSpec& spec, const NodeMap& params,
                             const ParameterMap& centering, const Batch& batch, const TaskObjectiveOptions& options,
                             RngStream& rng, ad::Tape& tape);

}  // namespace concrete
