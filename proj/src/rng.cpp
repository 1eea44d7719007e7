#include "extravar/rng.hpp"

#include <cmath>
#include <numbers>

namespace extravar {

uint64_t Rng::next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u must be in (0, 1] so the log stays finite
    double u = 1.0 - next_unit();
    double v = next_unit();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 2.0 * std::numbers::pi * v;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

uint64_t fnv1a64(std::string_view bytes, uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Rng named_stream(uint64_t seed, std::string_view name) {
    char seed_bytes[8];
    for (int i = 0; i < 8; ++i)
        seed_bytes[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
    uint64_t h = fnv1a64(std::string_view(seed_bytes, 8));
    h = fnv1a64(name, h);
    return Rng(h);
}

} // namespace extravar
