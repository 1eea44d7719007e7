#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace extravar::refstore {

struct Key {
    int layer = 0;
    int head = 0;
    int step = 0;
    auto operator<=>(const Key&) const = default;
};

// Per-(layer, head, step) attention entropies measured at the training
// resolution.  Generation-time calibration looks its targets up here.
struct ReferenceEntropyStore {
    std::string config_hash; // identity of the model the capture ran on
    int train_side = 0;
    uint64_t seed = 0;
    int samples = 1;
    std::map<Key, double> entries;

    std::optional<double> lookup(int layer, int head, int step) const;
};

// Text format, one file per store:
//   extravar-entropy-ref v1
//   config_hash = <16 hex chars>
//   train_side = <int>
//   seed = <uint64>
//   samples = <int>
//   records = <count>
//   layer,head,step,entropy
//   0,0,1,0.97...            (entropy rendered with 17 significant digits)
std::string serialize(const ReferenceEntropyStore& store);
void save(const ReferenceEntropyStore& store, const std::filesystem::path& path);

// Throws std::runtime_error naming the offending line on version mismatch,
// malformed records, duplicates, or truncation.
ReferenceEntropyStore parse(const std::string& text, const std::string& origin);
ReferenceEntropyStore load(const std::filesystem::path& path);

// Bitwise comparison (entropies compared as raw doubles).
bool stores_bit_equal(const ReferenceEntropyStore& a, const ReferenceEntropyStore& b);

} // namespace extravar::refstore
