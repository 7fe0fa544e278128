#pragma once

#include <cstdint>
#include <string_view>

namespace spotkit {

// SplitMix64 generator. 64-bit state; independent streams are derived with
// split(stream_id), so per-video or per-parameter draws do not depend on the
// order in which other streams are consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller (the spare value is cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    Rng split(std::uint64_t stream_id) const;
    Rng split(std::string_view stream_name) const;

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

} // namespace spotkit
