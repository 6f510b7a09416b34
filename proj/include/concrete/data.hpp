#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "concrete/tensor.hpp"

namespace concrete {

// IDX files ---------------------------------------------------------------------

/// Parse failure; `offset` is the byte position where the file stopped making sense.
class IdxError : public std::runtime_error {
public:
    IdxError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::size_t offset_;
};

/// Unsigned-byte IDX array: magic 0x00000801 (labels, 1 dim) or 0x00000803
/// (images, 3 dims), big-endian u32 sizes, then row-major bytes.
struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> bytes;

    std::size_t count() const { return dims.empty() ? 0 : dims[0]; }
    /// Bytes per item (product of the trailing dims).
    std::size_t item_size() const;
};

IdxArray parse_idx(std::span<const std::uint8_t> file);
IdxArray load_idx(const std::filesystem::path& path);
/// Writes `array` with the magic implied by its rank (1 or 3), or 0x00000802 for rank 2.
void save_idx(const std::filesystem::path& path, const IdxArray& array);

// Datasets ------------------------------------------------------------------------

/// Binary data in {0,1}, one example per row.
struct Dataset {
    std::string name;
    Tensor train, valid, test;
    std::vector<double> base_rates;  // per column, training split only

    std::size_t dims() const noexcept { return train.cols(); }
    /// Checks values and shapes and recomputes the base rates.
    void finalize();
};

/// Column means of a {0,1} matrix.
std::vector<double> column_rates(const Tensor& x);

/// Intensities in [0,1] (N, D) from raw bytes scaled by 1/255.
Tensor intensities(const IdxArray& raw);

/// Each pixel is 1 with probability equal to its intensity. Uses stream 4 of `seed`.
Tensor binarize_fixed(const Tensor& intensities, std::uint64_t seed);

/// binarize_fixed with a disk cache (an IDX file of bits). Reads the cache when
/// it exists with a matching shape, otherwise computes and writes it.
Tensor binarize_cached(const Tensor& intensities, std::uint64_t seed, const std::filesystem::path& cache);

struct SynthConfig {
    std::size_t prototypes = 4;
    std::size_t dims = 16;
    double flip = 0.05;
    std::size_t n_train = 2000, n_valid = 500, n_test = 500;
    std::uint64_t seed = 0;
};

struct SynthData {
    Dataset data;
    Tensor prototypes;  // (K, D)
    std::vector<std::size_t> labels;  // prototype index of each example, train then valid then test
};

/// K random binary prototypes; each example picks one uniformly and flips
/// every bit with probability `flip`. Uses stream 5 of `seed`.
SynthData synth_dataset(const SynthConfig& cfg);

/// Exact log-likelihood of one row under the generator:
/// log (1/K) sum_k flip^h_k (1 - flip)^(D - h_k), h_k the Hamming distance to prototype k.
double synth_log_likelihood(const Tensor& prototypes, double flip, std::span<const double> x);

/// Mean exact log-likelihood over the rows of x.
double synth_mean_log_likelihood(const Tensor& prototypes, double flip, const Tensor& x);

/// Loads "synth", "mnist" or "omniglot". For mnist, binarized_mnist_{train,valid,test}.amat
/// in `dir` are used verbatim; otherwise the IDX files are binarized with `seed`
/// (cached next to them). Omniglot is read from pre-converted IDX files.
Dataset load_dataset(const std::string& kind, const std::filesystem::path& dir, std::uint64_t seed,
                     const SynthConfig& synth = {});

/// Rows [begin, end) of x.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Rows of x picked by index.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

}  // namespace concrete
