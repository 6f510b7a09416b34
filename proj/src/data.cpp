#include "concrete/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "concrete/noise.hpp"
#include "concrete/relaxations.hpp"

namespace concrete {

namespace {

constexpr std::uint64_t kBinarizeStream = 4;
constexpr std::uint64_t kSynthStream = 5;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void write_be32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    os.write(b, 4);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::filesystem::path first_existing(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (std::filesystem::exists(dir / n)) return dir / n;
    return {};
}

Tensor read_amat(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::size_t c = 0;
        double v;
        while (ls >> v) {
            values.push_back(v);
            ++c;
        }
        if (c == 0) continue;
        if (cols == 0) cols = c;
        if (c != cols) {
            throw std::runtime_error(path.string() + ": row " + std::to_string(rows + 1) + " has " + std::to_string(c) +
                                     " values, expected " + std::to_string(cols));
        }
        ++rows;
    }
    return Tensor(rows, cols, std::move(values));
}

}  // namespace

// IDX -----------------------------------------------------------------------------

std::size_t IdxArray::item_size() const {
    std::size_t s = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) s *= dims[i];
    return s;
}

IdxArray parse_idx(std::span<const std::uint8_t> file) {
    if (file.size() < 4) throw IdxError("IDX: file shorter than the magic number", file.size());
    const std::uint32_t magic = read_be32(file, 0);
    const std::uint32_t rank = magic & 0xffu;
    if ((magic >> 8) != 0x08u || rank < 1 || rank > 3) {
        std::ostringstream os;
        os << "IDX: bad magic 0x" << std::hex << magic << ", expected unsigned-byte 0x00000801 or 0x00000803";
        throw IdxError(os.str(), 0);
    }
    IdxArray out;
    std::size_t at = 4;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d, at += 4) {
        if (file.size() < at + 4) throw IdxError("IDX: truncated header", file.size());
        out.dims.push_back(read_be32(file, at));
        total *= out.dims.back();
    }
    if (file.size() - at < total) {
        throw IdxError("IDX: truncated data, expected " + std::to_string(total) + " bytes", file.size());
    }
    if (file.size() - at > total) throw IdxError("IDX: trailing bytes after data", at + total);
    out.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(at), file.end());
    return out;
}

IdxArray load_idx(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_idx(bytes);
    } catch (const IdxError& e) {
        throw IdxError(path.string() + ": " + e.detail(), e.offset());
    }
}

void save_idx(const std::filesystem::path& path, const IdxArray& array) {
    if (array.dims.empty() || array.dims.size() > 3) throw std::invalid_argument("save_idx: rank must be 1 to 3");
    std::size_t total = 1;
    for (auto d : array.dims) total *= d;
    if (total != array.bytes.size()) throw std::invalid_argument("save_idx: dims do not match the byte count");
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        write_be32(os, 0x0800u | static_cast<std::uint32_t>(array.dims.size()));
        for (auto d : array.dims) write_be32(os, d);
        os.write(reinterpret_cast<const char*>(array.bytes.data()), static_cast<std::streamsize>(array.bytes.size()));
        if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// Datasets ------------------------------------------------------------------------

std::vector<double> column_rates(const Tensor& x) {
    std::vector<double> r(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) r[j] += x(i, j);
    for (auto& v : r) v /= static_cast<double>(std::max<std::size_t>(x.rows(), 1));
    return r;
}

void Dataset::finalize() {
    if (train.rows() == 0) throw std::invalid_argument(name + ": empty training split");
    for (const Tensor* t : {&train, &valid, &test}) {
        if (t->rows() > 0 && t->cols() != train.cols()) throw std::invalid_argument(name + ": split widths differ");
        for (double v : t->data())
            if (v != 0.0 && v != 1.0) throw std::invalid_argument(name + ": values must be exactly 0 or 1");
    }
    base_rates = column_rates(train);
}

Tensor intensities(const IdxArray& raw) {
    Tensor t(raw.count(), raw.item_size());
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) t[i] = raw.bytes[i] / 255.0;
    return t;
}

Tensor binarize_fixed(const Tensor& p, std::uint64_t seed) {
    RngStream rng(seed, kBinarizeStream);
    Tensor out(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw std::invalid_argument("binarize_fixed: intensity outside [0, 1]");
        out[i] = sample_uniform(rng) < p[i] ? 1.0 : 0.0;
    }
    return out;
}

Tensor binarize_cached(const Tensor& p, std::uint64_t seed, const std::filesystem::path& cache) {
    if (std::filesystem::exists(cache)) {
        const IdxArray a = load_idx(cache);
        if (a.dims.size() == 2 && a.dims[0] == p.rows() && a.dims[1] == p.cols()) {
            Tensor out(p.rows(), p.cols());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.bytes[i];
            return out;
        }
    }
    Tensor out = binarize_fixed(p, seed);
    IdxArray a;
    a.dims = {static_cast<std::uint32_t>(p.rows()), static_cast<std::uint32_t>(p.cols())};
    a.bytes.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) a.bytes[i] = static_cast<std::uint8_t>(out[i]);
    save_idx(cache, a);
    return out;
}

SynthData synth_dataset(const SynthConfig& cfg) {
    if (cfg.prototypes < 1) throw std::invalid_argument("synth_dataset: need at least one prototype");
    if (cfg.dims < 1) throw std::invalid_argument("synth_dataset: need at least one dimension");
    if (!(cfg.flip >= 0.0 && cfg.flip < 0.5)) throw std::invalid_argument("synth_dataset: flip must be in [0, 0.5)");
    RngStream rng(cfg.seed, kSynthStream);
    SynthData out;
    out.prototypes = Tensor(cfg.prototypes, cfg.dims);
    for (auto& v : out.prototypes.data()) v = sample_uniform(rng) < 0.5 ? 1.0 : 0.0;

    const auto draw = [&](std::size_t n) {
        Tensor x(n, cfg.dims);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = rng.next_below(cfg.prototypes);
            out.labels.push_back(k);
            for (std::size_t j = 0; j < cfg.dims; ++j) {
                const bool flip = sample_uniform(rng) < cfg.flip;
                x(i, j) = flip ? 1.0 - out.prototypes(k, j) : out.prototypes(k, j);
            }
        }
        return x;
    };
    out.data.name = "synth";
    out.data.train = draw(cfg.n_train);
    out.data.valid = draw(cfg.n_valid);
    out.data.test = draw(cfg.n_test);
    out.data.finalize();
    return out;
}

double synth_log_likelihood(const Tensor& prototypes, double flip, std::span<const double> x) {
    if (x.size() != prototypes.cols()) throw std::invalid_argument("synth_log_likelihood: width mismatch");
    std::vector<double> terms(prototypes.rows());
    for (std::size_t k = 0; k < prototypes.rows(); ++k) {
        std::size_t h = 0;
        for (std::size_t j = 0; j < x.size(); ++j) h += x[j] != prototypes(k, j);
        const double same = static_cast<double>(x.size() - h);
        terms[k] = (h == 0 ? 0.0 : static_cast<double>(h) * std::log(flip)) + same * std::log1p(-flip);
    }
    return logsumexp(terms) - std::log(static_cast<double>(prototypes.rows()));
}

double synth_mean_log_likelihood(const Tensor& prototypes, double flip, const Tensor& x) {
    double s = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += synth_log_likelihood(prototypes, flip, x.row_span(i));
    return s / static_cast<double>(x.rows());
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (begin > end || end > x.rows()) throw std::out_of_range("slice_rows: bad range");
    Tensor out(end - begin, x.cols());
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
              x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols()), out.data().begin());
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    Tensor out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = x.row_span(rows[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

Dataset load_dataset(const std::string& kind, const std::filesystem::path& dir, std::uint64_t seed,
                     const SynthConfig& synth) {
    if (kind == "synth") {
        SynthConfig c = synth;
        c.seed = seed;
        return synth_dataset(c).data;
    }
    Dataset d;
    d.name = kind;
    if (kind == "mnist") {
        const auto amat = dir / "binarized_mnist_train.amat";
        if (std::filesystem::exists(amat)) {
            d.train = read_amat(amat);
            d.valid = read_amat(dir / "binarized_mnist_valid.amat");
            d.test = read_amat(dir / "binarized_mnist_test.amat");
        } else {
            const auto train_path = first_existing(dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"});
            const auto test_path = first_existing(dir, {"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"});
            if (train_path.empty() || test_path.empty()) {
                throw std::runtime_error("mnist: no binarized_mnist_*.amat or IDX image files in " + dir.string());
            }
            const std::string tag = "-binarized-" + std::to_string(seed) + ".idx";
            const Tensor train = binarize_cached(intensities(load_idx(train_path)), seed, dir / ("mnist-train" + tag));
            const Tensor test =
                binarize_cached(intensities(load_idx(test_path)), seed + 1, dir / ("mnist-test" + tag));
            const std::size_t n_valid = std::min<std::size_t>(10000, train.rows() / 6);
            d.train = slice_rows(train, 0, train.rows() - n_valid);
            d.valid = slice_rows(train, train.rows() - n_valid, train.rows());
            d.test = test;
        }
    } else if (kind == "omniglot") {
        const auto train_path = first_existing(dir, {"omniglot-train-images-idx3-ubyte"});
        const auto test_path = first_existing(dir, {"omniglot-test-images-idx3-ubyte"});
        if (train_path.empty() || test_path.empty()) {
            throw std::runtime_error("omniglot: expected omniglot-{train,test}-images-idx3-ubyte in " + dir.string());
        }
        const std::string tag = "-binarized-" + std::to_string(seed) + ".idx";
        const Tensor train = binarize_cached(intensities(load_idx(train_path)), seed, dir / ("omniglot-train" + tag));
        const Tensor test = binarize_cached(intensities(load_idx(test_path)), seed + 1, dir / ("omniglot-test" + tag));
        const std::size_t n_valid = train.rows() / 10;
        d.train = slice_rows(train, 0, train.rows() - n_valid);
        d.valid = slice_rows(train, train.rows() - n_valid, train.rows());
        d.test = test;
    } else {
        throw std::invalid_argument("unknown dataset '" + kind + "' (expected synth, mnist or omniglot)");
    }
    d.finalize();
    return d;
}

}  // namespace concrete
