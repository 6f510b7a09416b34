#include "concrete/tasks.hpp"

#include <algorithm>
#include <stdexcept>

namespace concrete {

std::string to_string(TaskKind kind) { return kind == TaskKind::Density ? "density" : "structured"; }

TaskKind parse_task_kind(std::string_view text) {
    if (text == "density") return TaskKind::Density;
    if (text == "structured") return TaskKind::Structured;
    throw std::invalid_argument("unknown task '" + std::string(text) + "' (expected density or structured)");
}

void TaskInstance::check(const NetworkSpec& spec) const {
    spec.validate();
    const auto fail = [&](const std::string& why) {
        throw std::invalid_argument("model " + spec.to_string() + " does not fit the " + to_string(kind) +
                                    " task on " + std::to_string(dims) + " pixels: " + why);
    };
    if (kind == TaskKind::Density) {
        if (spec.structured()) fail("a density model must not start with an observed layer");
        if (spec.target_units() != dims) fail("observed layer has " + std::to_string(spec.target_units()) + " units");
    } else {
        if (dims % 2 != 0) fail("structured prediction needs an even pixel count");
        if (!spec.structured()) fail("a structured model starts with the context layer (V)");
        if (spec.context_units() != context_dims()) fail("context layer must have " + std::to_string(context_dims()));
        if (spec.target_units() != target_dims()) fail("target layer must have " + std::to_string(target_dims()));
    }
}

Batch make_batch(const TaskInstance& task, const Tensor& images) {
    if (images.cols() != task.dims) {
        throw std::invalid_argument("make_batch: images have " + std::to_string(images.cols()) + " pixels, task expects " +
                                    std::to_string(task.dims));
    }
    if (task.kind == TaskKind::Density) return {Tensor(), images};
    const std::size_t c = task.context_dims();
    Batch b{Tensor(images.rows(), c), Tensor(images.rows(), task.dims - c)};
    for (std::size_t i = 0; i < images.rows(); ++i) {
        const auto row = images.row_span(i);
        std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(c), b.context.row_span(i).begin());
        std::copy(row.begin() + static_cast<std::ptrdiff_t>(c), row.end(), b.target.row_span(i).begin());
    }
    return b;
}

std::vector<double> target_base_rates(const TaskInstance& task, const Dataset& data) {
    if (data.base_rates.size() != task.dims) throw std::invalid_argument("target_base_rates: dataset width mismatch");
    return {data.base_rates.begin() + static_cast<std::ptrdiff_t>(task.context_dims()), data.base_rates.end()};
}

TaskObjective task_objective(const TaskInstance& task, const NetworkSpec& spec, const NodeMap& params,
                             const ParameterMap& centering, const Batch& batch, const TaskObjectiveOptions& options,
                             RngStream& rng, ad::Tape& tape) {
    task.check(spec);
    options.objective.validate();
    const std::size_t m = options.objective.m;
    const std::size_t rows = batch.target.rows();
    if (rows == 0) throw std::invalid_argument("task_objective: empty batch");
    if (batch.target.cols() != task.target_dims()) throw std::invalid_argument("task_objective: target width mismatch");

    const NodeRef target = ad::repeat_rows(tape.constant(batch.target), m);
    NodeRef context;
    if (task.kind == TaskKind::Structured) {
        if (batch.context.rows() != rows || batch.context.cols() != task.context_dims()) {
            throw std::invalid_argument("task_objective: context shape mismatch");
        }
        context = ad::repeat_rows(tape.constant(batch.context), m);
    }

    ForwardOptions fo;
    fo.mode = options.mode;
    fo.objective = options.objective;
    fo.centering = options.centering;
    const ForwardResult r = forward(spec, params, centering, context, target, rng, fo);

    TaskObjective out;
    out.log_weights = ad::reshape(r.log_weight, rows, m);
    out.per_example = multisample_bound(out.log_weights, &out.clamp_count);
    out.value = ad::mean(out.per_example, ad::Reduce::All);
    out.log_proposal = ad::sum(ad::reshape(r.log_proposal, rows, m), ad::Reduce::PerRow);
    out.activity_means = r.activity_means;
    return out;
}

}  // namespace concrete
