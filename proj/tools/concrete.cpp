// concrete: train, sweep, evaluate and verify relaxed discrete latent models.
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "concrete/acceptance.hpp"
#include "concrete/train.hpp"

using namespace concrete;

namespace {

struct Flags {
    TrainConfig cfg;
    std::string task = "density";
    std::string estimator = "concrete";
    std::string relaxation = "relaxed_kl";
    bool no_centering = false;
};

void add_train_flags(CLI::App* app, Flags& f) {
    auto& c = f.cfg;
    app->add_option("--model", c.model, "Model string, e.g. \"(200H~784V)\"")->capture_default_str();
    app->add_option("--arity", c.arity, "States per latent variable (power of two)")->capture_default_str();
    app->add_option("--task", f.task, "density or structured")->capture_default_str();
    app->add_option("--data", c.data, "synth, mnist or omniglot")->capture_default_str();
    app->add_option("--data-dir", c.data_dir, "Directory holding dataset files")->capture_default_str();
    app->add_option("--m", c.m_train, "Samples per example in the training bound")->capture_default_str();
    app->add_option("--m-eval", c.m_eval, "Samples per example in evaluation")->capture_default_str();
    app->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--wd", c.weight_decay, "L2 coefficient on weight matrices")->capture_default_str();
    app->add_option("--batch", c.batch, "Minibatch size")->capture_default_str();
    app->add_option("--steps", c.steps, "Optimization steps")->capture_default_str();
    app->add_option("--lambda-post", c.lambda_post, "Posterior temperature (default by arity)");
    app->add_option("--lambda-prior", c.lambda_prior, "Prior temperature (default by arity)");
    app->add_option("--estimator", f.estimator, "concrete or sfe")->capture_default_str();
    app->add_option("--relaxation-mode", f.relaxation, "relaxed_kl, relaxed_log_mass or analytic_kl")
        ->capture_default_str();
    app->add_option("--seed", c.seed, "Run seed")->capture_default_str();
    app->add_option("--eval-every", c.eval_every, "Steps between evaluations")->capture_default_str();
    app->add_flag("--no-centering", f.no_centering, "Disable centering of proposal-network inputs");
    app->add_option("--synth-k", c.synth.prototypes, "Synthetic prototypes")->capture_default_str();
    app->add_option("--synth-d", c.synth.dims, "Synthetic dimensions")->capture_default_str();
    app->add_option("--synth-flip", c.synth.flip, "Synthetic flip probability")->capture_default_str();
    app->add_option("--out", c.out, "Output directory");
}

TrainConfig resolve(Flags& f) {
    f.cfg.task = parse_task_kind(f.task);
    f.cfg.estimator = parse_estimator(f.estimator);
    f.cfg.relaxation = parse_relaxation_mode(f.relaxation);
    f.cfg.centering = !f.no_centering;
    f.cfg.resolve();
    return f.cfg;
}

std::vector<double> parse_lambdas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size() || !(v > 0)) throw std::invalid_argument("bad temperature '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("--lambdas is empty");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concrete relaxations of discrete latent variable models"};
    app.require_subcommand(1);

    Flags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train one model");
    add_train_flags(train_cmd, train_flags);

    Flags sweep_flags;
    std::string lambdas = "0.1,0.5,0.6667,1,2,5";
    auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per temperature and report the integrality gap");
    add_train_flags(sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--lambdas", lambdas, "Comma-separated temperatures")->capture_default_str();

    std::filesystem::path checkpoint;
    std::string eval_data = "synth";
    std::filesystem::path eval_dir = "data";
    std::size_t eval_m = 100;
    std::uint64_t eval_seed = 1;
    auto* eval_cmd = app.add_subcommand("eval", "Discrete test bound of a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
    eval_cmd->add_option("--data", eval_data)->capture_default_str();
    eval_cmd->add_option("--data-dir", eval_dir)->capture_default_str();
    eval_cmd->add_option("--m", eval_m)->capture_default_str();
    eval_cmd->add_option("--seed", eval_seed, "Seed the data was generated and binarized with")->capture_default_str();

    bool quick = false;
    auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance checks");
    verify_cmd->add_flag("--quick", quick, "Skip the two training criteria");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            const TrainConfig cfg = resolve(train_flags);
            const TrainResult r = train(cfg);
            std::printf("initial test NLL %.4f\nfinal test NLL %.4f\nfinal relaxed test NLL %.4f\n",
                        r.initial_test_nll, r.final_test_nll, r.final_test_relaxed);
        } else if (*sweep_cmd) {
            const TrainConfig cfg = resolve(sweep_flags);
            std::printf("lambda,relaxed,discrete,gap\n");
            for (const auto& row : temperature_sweep(cfg, parse_lambdas(lambdas))) {
                std::printf("%g,%.6f,%.6f,%.6f\n", row.lambda, row.relaxed, row.discrete, row.gap);
            }
        } else if (*eval_cmd) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            const Dataset data = load_dataset(eval_data, eval_dir, eval_seed);
            const EvalResult r = evaluate_checkpoint(ck, data, eval_m, eval_seed);
            std::printf("test NLL %.6f (m = %zu, %zu clamped log weights)\n", -r.bound, eval_m, r.clamp_count);
        } else if (*verify_cmd) {
            return run_acceptance(std::cout, {.include_training = !quick}).all_passed() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
