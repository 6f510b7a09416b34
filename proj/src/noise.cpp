#include "concrete/noise.hpp"

#include <cmath>

namespace concrete {
namespace {

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kPhiloxW0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kPhiloxW1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) noexcept {
    const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

// SplitMix64 finalizer, used only to derive child stream ids.
inline std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept : key_{seed, stream_id} {}

RngStream::Block RngStream::philox_block(const Block& counter, const Key& key) noexcept {
    Block ctr = counter;
    Key k = key;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k[0] += kPhiloxW0;
            k[1] += kPhiloxW1;
        }
        std::uint64_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0};
    }
    return ctr;
}

std::uint64_t RngStream::next_u64() noexcept {
    if (buffer_pos_ == 4) {
        for (auto& word : counter_) {
            if (++word != 0) break;
        }
        buffer_ = philox_block(counter_, key_);
        buffer_pos_ = 0;
    }
    return buffer_[buffer_pos_++];
}

RngStream RngStream::child(std::uint64_t index) const noexcept {
    return RngStream(key_[0], mix64(key_[1] ^ mix64(index + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t RngStream::next_below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double uniform_from_bits(std::uint64_t k) noexcept {
    return (static_cast<double>(k >> 12) + 0.5) * 0x1.0p-52;
}

double sample_uniform(RngStream& rng) noexcept { return uniform_from_bits(rng.next_u64()); }

double gumbel_from_uniform(double u) noexcept { return -std::log(-std::log(u)); }

double logistic_from_uniform(double u) noexcept { return std::log(u) - std::log1p(-u); }

double sample_gumbel(RngStream& rng) noexcept { return gumbel_from_uniform(sample_uniform(rng)); }

double sample_logistic(RngStream& rng) noexcept { return logistic_from_uniform(sample_uniform(rng)); }

void fill_uniform(RngStream& rng, std::span<double> out) noexcept {
    for (auto& v : out) v = sample_uniform(rng);
}

void fill_gumbel(RngStream& rng, std::span<double> out) noexcept {
    for (auto& v : out) v = sample_gumbel(rng);
}

void fill_logistic(RngStream& rng, std::span<double> out) noexcept {
    for (auto& v : out) v = sample_logistic(rng);
}

}  // namespace concrete
