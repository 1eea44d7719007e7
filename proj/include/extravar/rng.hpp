#pragma once

#include <cstdint>
#include <string_view>

namespace extravar {

// Counter-style splitmix64 generator.  All randomness in the toolkit flows
// from one 64-bit seed; independent streams are derived by hashing the seed
// together with a stream name ("emb", "wq/0", "pos/0/3/1/2", ...) so that
// adding a consumer never perturbs the draws seen by existing ones.
class Rng {
public:
    explicit Rng(uint64_t state) : state_(state) {}

    uint64_t next_u64();

    // uniform double in [0, 1), 53 bits of the state, portable across libcs
    double next_unit();

    // standard normal via Box-Muller; keeps the spare value
    double next_gaussian();

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull);

// derive an independent stream from (seed, name)
Rng named_stream(uint64_t seed, std::string_view name);

} // namespace extravar
