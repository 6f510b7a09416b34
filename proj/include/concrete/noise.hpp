#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace concrete {

/// Philox4x64-10 counter-based generator keyed by (seed, stream_id).
///
/// The output sequence of RngStream(seed, id) is identical to
/// numpy.random.Philox(key=[seed, id]).random_raw(): the 256-bit counter
/// starts at zero and is incremented before each block of four words.
/// Distinct keys give independent streams, so a run is replayable from its
/// seed plus the stream assignment in train.hpp.
class RngStream {
public:
    using Block = std::array<std::uint64_t, 4>;
    using Key = std::array<std::uint64_t, 2>;

    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    std::uint64_t seed() const noexcept { return key_[0]; }
    std::uint64_t stream_id() const noexcept { return key_[1]; }

    /// Next raw 64-bit word.
    std::uint64_t next_u64() noexcept;

    /// Pure derivation of an independent child stream; does not advance *this.
    RngStream child(std::uint64_t index) const noexcept;

    /// Uniform integer in [0, bound) by rejection; bound > 0.
    std::uint64_t next_below(std::uint64_t bound) noexcept;

    /// One Philox4x64-10 block; exposed for known-answer tests.
    static Block philox_block(const Block& counter, const Key& key) noexcept;

private:
    Key key_;
    Block counter_{};
    Block buffer_{};
    unsigned buffer_pos_ = 4;
};

/// Maps a raw word to the open interval (0,1): (floor(k / 2^12) + 0.5) / 2^52.
/// Every value is exactly representable, so 0 and 1 are never produced.
double uniform_from_bits(std::uint64_t k) noexcept;

/// U ~ Uniform(0,1), never exactly 0 or 1.
double sample_uniform(RngStream& rng) noexcept;

/// G = -log(-log U).
double sample_gumbel(RngStream& rng) noexcept;
double gumbel_from_uniform(double u) noexcept;

/// L = log U - log(1 - U).
double sample_logistic(RngStream& rng) noexcept;
double logistic_from_uniform(double u) noexcept;

void fill_uniform(RngStream& rng, std::span<double> out) noexcept;
void fill_gumbel(RngStream& rng, std::span<double> out) noexcept;
void fill_logistic(RngStream& rng, std::span<double> out) noexcept;

}  // namespace concrete
