#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "concrete/data.hpp"
#include "concrete/relaxations.hpp"
#include "concrete/tasks.hpp"

using namespace concrete;
using doctest::Approx;

namespace {

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

NodeMap as_variables(ad::Tape& tape, const ParameterMap& params) {
    NodeMap out;
    for (const auto& [k, t] : params) out.emplace(k, tape.variable(t));
    return out;
}

}  // namespace

TEST_CASE("IDX fixture") {
    const IdxArray a = load_idx("data/images-4x2x2-idx3-ubyte");
    CHECK(a.dims == std::vector<std::uint32_t>{4, 2, 2});
    CHECK(a.item_size() == 4);
    CHECK(a.bytes == std::vector<std::uint8_t>{0, 255, 128, 64, 1, 2, 3, 4, 10, 20, 30, 40, 250, 251, 252, 253});

    const IdxArray labels = load_idx("data/labels-4-idx1-ubyte");
    CHECK(labels.dims == std::vector<std::uint32_t>{4});
    CHECK(labels.bytes == std::vector<std::uint8_t>{3, 1, 4, 1});

    const Tensor t = intensities(a);
    CHECK(t.rows() == 4);
    CHECK(t.cols() == 4);
    CHECK(t(0, 1) == 1.0);
    CHECK(t(0, 2) == Approx(128.0 / 255));
}

TEST_CASE("IDX errors name the offset") {
    auto bytes = file_bytes("data/images-4x2x2-idx3-ubyte");
    auto bad = bytes;
    bad[2] = 0x09;
    try {
        parse_idx(bad);
        FAIL("expected IdxError");
    } catch (const IdxError& e) {
        CHECK(e.offset() == 0);
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
        CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    auto truncated = bytes;
    truncated.resize(20);
    try {
        parse_idx(truncated);
        FAIL("expected IdxError");
    } catch (const IdxError& e) {
        CHECK(e.offset() == 20);
    }
    auto header_cut = bytes;
    header_cut.resize(10);
    CHECK_THROWS_AS(parse_idx(header_cut), IdxError);
    CHECK_THROWS_AS(parse_idx(std::vector<std::uint8_t>{0, 0}), IdxError);
}

TEST_CASE("IDX round trip") {
    TempDir dir("concrete_test_idx");
    const IdxArray a = load_idx("data/images-4x2x2-idx3-ubyte");
    save_idx(dir.path / "copy", a);
    CHECK(file_bytes(dir.path / "copy") == file_bytes("data/images-4x2x2-idx3-ubyte"));
}

TEST_CASE("MNIST header when present") {
    const char* env = std::getenv("MNIST_DIR");
    const std::filesystem::path p = std::filesystem::path(env ? env : "data") / "train-images-idx3-ubyte";
    if (!std::filesystem::exists(p)) return;
    const IdxArray a = load_idx(p);
    CHECK(a.dims == std::vector<std::uint32_t>{60000, 28, 28});
}

TEST_CASE("fixed binarization") {
    Tensor p(1000, 3);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        p(i, 0) = 0.0;
        p(i, 1) = 1.0;
        p(i, 2) = 0.3;
    }
    const Tensor b = binarize_fixed(p, 17);
    double mean = 0;
    for (std::size_t i = 0; i < b.rows(); ++i) {
        CHECK(b(i, 0) == 0.0);
        CHECK(b(i, 1) == 1.0);
        mean += b(i, 2);
    }
    mean /= 1000;
    CHECK(std::abs(mean - 0.3) < 3 * std::sqrt(0.3 * 0.7 / 1000));
    CHECK(binarize_fixed(p, 17) == b);
    CHECK_FALSE(binarize_fixed(p, 18) == b);

    TempDir dir("concrete_test_binarize");
    const Tensor c1 = binarize_cached(p, 17, dir.path / "a.idx");
    const Tensor c2 = binarize_cached(p, 17, dir.path / "b.idx");
    CHECK(c1 == b);
    CHECK(file_bytes(dir.path / "a.idx") == file_bytes(dir.path / "b.idx"));
    CHECK(binarize_cached(p, 99, dir.path / "a.idx") == b);
}

TEST_CASE("binarized intensity mean over a dataset") {
    RngStream rng(3, 0);
    Tensor p(400, 25);
    for (auto& v : p.data()) v = sample_uniform(rng);
    const Tensor b = binarize_fixed(p, 5);
    double pm = 0, bm = 0, var = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        pm += p[i];
        bm += b[i];
        var += p[i] * (1 - p[i]);
    }
    const double n = static_cast<double>(p.size());
    CHECK(std::abs(bm - pm) / n < 3 * std::sqrt(var) / n);
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.flip = 0.0;
    cfg.seed = 4;
    const SynthData s = synth_dataset(cfg);
    CHECK(s.data.train.rows() == 2000);
    CHECK(s.data.valid.rows() == 500);
    CHECK(s.data.test.rows() == 500);
    CHECK(s.data.dims() == 16);
    for (std::size_t i = 0; i < s.data.train.rows(); ++i) {
        const std::size_t k = s.labels[i];
        for (std::size_t j = 0; j < 16; ++j) CHECK(s.data.train(i, j) == s.prototypes(k, j));
    }

    SynthConfig d;
    d.seed = 4;
    d.n_train = 20000;
    const SynthData u = synth_dataset(d);
    std::vector<double> counts(4, 0.0);
    for (std::size_t i = 0; i < d.n_train; ++i) counts[u.labels[i]] += 1;
    const double se = std::sqrt(0.25 * 0.75 / d.n_train);
    for (double c : counts) CHECK(std::abs(c / d.n_train - 0.25) < 3 * se);

    CHECK(synth_dataset(d).data.train == u.data.train);
    CHECK_THROWS_AS(synth_dataset({.prototypes = 0}), std::invalid_argument);
    CHECK_THROWS_AS(synth_dataset({.flip = 0.5}), std::invalid_argument);
}

TEST_CASE("synthetic log-likelihood closed form") {
    const Tensor proto(1, 16, 0.0);
    std::vector<double> x(16, 0.0);
    x[0] = x[5] = x[9] = 1.0;
    const double expect = 3 * std::log(0.1) + 13 * std::log(0.9);
    CHECK(synth_log_likelihood(proto, 0.1, x) == Approx(expect).epsilon(1e-14));

    // Two prototypes: average of the two Bernoulli products.
    Tensor two(2, 16, 0.0);
    for (std::size_t j = 0; j < 16; ++j) two(1, j) = 1.0;
    const double a = 3 * std::log(0.1) + 13 * std::log(0.9);
    const double b = 13 * std::log(0.1) + 3 * std::log(0.9);
    CHECK(synth_log_likelihood(two, 0.1, x) == Approx(std::log(0.5 * (std::exp(a) + std::exp(b)))).epsilon(1e-13));
}

TEST_CASE("dataset splits and base rates") {
    const Dataset d = load_dataset("synth", {}, 2);
    CHECK(d.base_rates == column_rates(d.train));
    CHECK(d.train.rows() + d.valid.rows() + d.test.rows() == 3000);
    CHECK_THROWS_AS(load_dataset("cifar", {}, 2), std::invalid_argument);
    CHECK_THROWS_AS(load_dataset("mnist", "/nonexistent", 2), std::runtime_error);

    Dataset bad = d;
    bad.valid(0, 0) = 0.5;
    CHECK_THROWS_AS(bad.finalize(), std::invalid_argument);
}

TEST_CASE("MNIST from IDX fixtures") {
    TempDir dir("concrete_test_mnist");
    IdxArray a;
    a.dims = {12, 2, 2};
    for (std::size_t i = 0; i < 48; ++i) a.bytes.push_back(static_cast<std::uint8_t>((i * 37) % 256));
    save_idx(dir.path / "train-images-idx3-ubyte", a);
    a.dims = {6, 2, 2};
    a.bytes.resize(24);
    save_idx(dir.path / "t10k-images-idx3-ubyte", a);
    const Dataset d = load_dataset("mnist", dir.path, 3);
    CHECK(d.train.rows() == 10);
    CHECK(d.valid.rows() == 2);
    CHECK(d.test.rows() == 6);
    CHECK(d.dims() == 4);
    CHECK(std::filesystem::exists(dir.path / "mnist-train-binarized-3.idx"));
    CHECK(load_dataset("mnist", dir.path, 3).train == d.train);
}

TEST_CASE("structured split reconstitutes the image") {
    const Dataset d = load_dataset("synth", {}, 2);
    const TaskInstance task{TaskKind::Structured, d.dims()};
    const Batch b = make_batch(task, slice_rows(d.train, 0, 10));
    CHECK(b.context.cols() == 8);
    CHECK(b.target.cols() == 8);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 16; ++j) CHECK(d.train(i, j) == (j < 8 ? b.context(i, j) : b.target(i, j - 8)));
    CHECK_THROWS_AS(task.check(parse_model_spec("(4H~16V)")), std::invalid_argument);
    CHECK_NOTHROW(task.check(parse_model_spec("(8V-4H~8V)")));
    CHECK_THROWS_AS(TaskInstance({TaskKind::Density, 16}).check(parse_model_spec("(4H~12V)")), std::invalid_argument);
}

TEST_CASE("structured objective with a z-independent decoder") {
    const Dataset d = load_dataset("synth", {}, 6);
    const TaskInstance task{TaskKind::Structured, d.dims()};
    const NetworkSpec spec = parse_model_spec("(8V-4H-8V)");
    RngStream init(1, 0);
    const auto rates = target_base_rates(task, d);
    ParameterStore store = init_params(spec, rates, init);
    store.params.at("gen/1/W").fill(0.0);
    for (std::size_t j = 0; j < rates.size(); ++j) CHECK(rates[j] == d.base_rates[8 + j]);

    const Batch b = make_batch(task, slice_rows(d.test, 0, 50));
    ad::Tape tape;
    RngStream rng(2, 2);
    const TaskObjective o = task_objective(task, spec, as_variables(tape, store.params), store.centering, b, {}, rng, tape);
    double expect = 0;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const double r = std::clamp(rates[j], sigmoid(-5.0), sigmoid(5.0));
            expect += b.target(i, j) ? std::log(r) : std::log1p(-r);
        }
    CHECK(o.value.value().item() == Approx(expect / 50).epsilon(1e-12));
}

TEST_CASE("density objective without latents is the factorized likelihood") {
    const Dataset d = load_dataset("synth", {}, 6);
    const TaskInstance task{TaskKind::Density, d.dims()};
    const NetworkSpec spec = parse_model_spec("(16V)");
    RngStream init(1, 0);
    const ParameterStore store = init_params(spec, d.base_rates, init);
    const Batch b = make_batch(task, d.test);
    ad::Tape tape;
    RngStream rng(2, 2);
    const TaskObjective o = task_objective(task, spec, as_variables(tape, store.params), store.centering, b, {}, rng, tape);
    double expect = 0;
    for (std::size_t i = 0; i < b.target.rows(); ++i)
        for (std::size_t j = 0; j < 16; ++j) {
            const double r = std::clamp(d.base_rates[j], sigmoid(-5.0), sigmoid(5.0));
            expect += b.target(i, j) ? std::log(r) : std::log1p(-r);
        }
    CHECK(o.value.value().item() == Approx(expect / b.target.rows()).epsilon(1e-12));
}

TEST_CASE("density bound grows with m") {
    const Dataset d = load_dataset("synth", {}, 6);
    const TaskInstance task{TaskKind::Density, d.dims()};
    const NetworkSpec spec = parse_model_spec("(4H~16V)");
    RngStream init(1, 0);
    const ParameterStore store = init_params(spec, d.base_rates, init);
    const Batch b = make_batch(task, slice_rows(d.test, 0, 100));
    RngStream rng(7, 3);
    std::vector<double> diff;
    for (int rep = 0; rep < 100; ++rep) {
        double v[2];
        for (int k = 0; k < 2; ++k) {
            ad::Tape tape;
            TaskObjectiveOptions o;
            o.mode = SampleMode::Discrete;
            o.objective.m = k == 0 ? 1 : 5;
            v[k] = task_objective(task, spec, as_variables(tape, store.params), store.centering, b, o, rng, tape)
                       .value.value()
                       .item();
        }
        diff.push_back(v[1] - v[0]);
    }
    double mean = 0, var = 0;
    for (double x : diff) mean += x;
    mean /= diff.size();
    for (double x : diff) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / (diff.size() - 1) / diff.size());
    CHECK(mean > -3 * se);
    CHECK(mean > 0);
}
