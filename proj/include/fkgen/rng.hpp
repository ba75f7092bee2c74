#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace fkgen {

// Philox 4x32-10 counter-based generator (Salmon et al., SC'11).
// Counter-based streams let every (replicate, epoch, particle, purpose)
// tuple own an independent sequence, so parallel schedules cannot change
// which numbers a particle sees.
namespace philox {

inline constexpr uint32_t kMul0 = 0xD2511F53u;
inline constexpr uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr uint32_t kWeyl1 = 0xBB67AE85u;

using Block = std::array<uint32_t, 4>;
using Key = std::array<uint32_t, 2>;

inline void round_once(Block& c, const Key& k) {
    const uint64_t p0 = static_cast<uint64_t>(kMul0) * c[0];
    const uint64_t p1 = static_cast<uint64_t>(kMul1) * c[2];
    const uint32_t lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
    c = Block{hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline Block generate(Block counter, Key key) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        round_once(counter, key);
    }
    return counter;
}

}  // namespace philox

enum class StreamPurpose : uint32_t {
    Init = 0,
    Select = 1,
    Mutate = 2,
    PathSample = 3,
    Probe = 4,
    Generic = 5,
};

// One logical stream. The 64-bit run seed is the Philox key; the stream id
// occupies counter words 1..3 as (particle, epoch|purpose, replicate) and
// word 0 counts blocks within the stream.
class RngStream {
public:
    RngStream(uint64_t seed, uint32_t replicate, uint32_t epoch, uint32_t particle,
              StreamPurpose purpose)
        : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
          base_{0u, particle, (epoch << 3) | static_cast<uint32_t>(purpose), replicate} {}

    uint32_t next_u32() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

    uint64_t next_u64() {
        const uint64_t lo = next_u32();
        const uint64_t hi = next_u32();
        return lo | (hi << 32);
    }

    // Uniform in [0,1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal, Box-Muller (no second-value cache).
    double next_normal() {
        const double u1 = 1.0 - next_double();  // (0,1], keeps log finite
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    void refill() {
        philox::Block c = base_;
        c[0] = block_++;
        buf_ = philox::generate(c, key_);
        pos_ = 0;
    }

    philox::Key key_;
    philox::Block base_;
    uint32_t block_ = 0;
    philox::Block buf_{};
    int pos_ = 4;
};

// Identifies one end-to-end particle run. Operations derive their streams
// from (seed, replicate) plus local coordinates.
struct RunKey {
    uint64_t seed = 0;
    uint32_t replicate = 0;

    RngStream stream(uint32_t epoch, uint32_t particle, StreamPurpose purpose) const {
        return RngStream(seed, replicate, epoch, particle, purpose);
    }
};

// Inverse-CDF pick on a nondecreasing cumulative-weight array. The target is
// u * total with u in [0,1); ties on a cumulative boundary resolve to the
// lower index.
inline int categorical_pick(std::span<const double> cumulative, double u) {
    const double target = u * cumulative.back();
    int lo = 0;
    int hi = static_cast<int>(cumulative.size()) - 1;
    while (lo < hi) {
        const int mid = (lo + hi) / 2;
        if (cumulative[mid] >= target) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return lo;
}

}  // namespace fkgen
