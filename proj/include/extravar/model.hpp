#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "extravar/attention.hpp"
#include "extravar/intervention.hpp"
#include "extravar/matrix.hpp"
#include "extravar/rope.hpp"

namespace extravar::refstore {
struct ReferenceEntropyStore;
}

namespace extravar::model {

// Strictly increasing square sides from 1 to `side`, exactly `steps` entries
// (near-geometric interpolation, padded apart where rounding collides).
std::vector<std::pair<int, int>> build_scale_schedule(int side, int steps);

// Center-aligned (y, x) coordinates of an h x w map on the finest grid of
// the given side: ((i + 0.5) * side / h - 0.5, ...).  The finest map gets
// integer coordinates, a 1x1 map sits at the grid center.
std::vector<std::pair<double, double>> positions_for_step(int h, int w, int finest_side);

// Toy scale-wise transformer.  Weights are drawn from `seed` (no training);
// per-head query/key gains are spread geometrically so different heads land
// at visibly different attention entropies.
struct ModelConfig {
    int layers = 2;
    int heads = 4;
    int head_dim = 64;
    int vocab_size = 32;
    int train_side = 16; // L
    int steps = 13;      // K
    uint64_t seed = 1;
    double qk_gain = 1.0; // scales every head's logits; 0 gives uniform attention
    bool parallel_heads = false;
    std::vector<std::pair<int, int>> scale_schedule; // filled by validate() when empty

    void validate(); // throws std::invalid_argument
};

// One generation request.  `rope` carries the training/target sides and the
// band definition; `remap` is what the run rotates with.
struct GenerationPlan {
    rope::RopeConfig rope;
    rope::RemapRule remap = rope::RemapRule::identity();
    rope::StageSchedule schedule;
    bool calibrate = false;
    attn::CalibrationPolicy policy;
    const refstore::ReferenceEntropyStore* reference = nullptr;
    std::optional<probe::Intervention> intervention;
    bool retain_attention = false;
    int noise_salt = 0; // varies the positional noise only (capture sampling)
};

struct HeadTrace {
    int layer = 0;
    int head = 0;
    double alpha = 1.0;
    double entropy = 1.0;  // H at alpha = 1
    double variance = 0.0; // V_g
};

struct StepTrace {
    int step = 0;
    int height = 0;
    int width = 0;
    double omega = 0.0;
    int cache_rows_before = 0; // per-layer KV rows present when the step began
    int key_count = 0;         // attendable keys per query at this step
    std::array<double, 4> band_norms{}; // mean query pair norm: high,mid,low,verylow
    std::vector<std::vector<double>> freqs; // per axis, frequencies rotated with
    std::vector<HeadTrace> heads;           // layers * heads entries
    std::vector<int> tokens;                // height * width, row-major
    Matrix logits;                          // tokens x vocab
    std::vector<Matrix> attention;          // layer*heads maps, only when retained
};

struct GenerationTrace {
    std::vector<StepTrace> steps;
};

struct GenerationResult {
    std::vector<std::vector<int>> maps; // token map per step
    GenerationTrace trace;
};

// Hex identity of the model a capture ran on: architecture + seed + rope
// spectrum (band size and target side excluded; they do not change weights).
std::string config_hash_hex(const ModelConfig& cfg, const rope::RopeConfig& rope_cfg);

// True when a store was captured under this exact model identity.
bool reference_matches(const refstore::ReferenceEntropyStore& store,
                       const ModelConfig& cfg, const rope::RopeConfig& rope_cfg);

// Run all scale steps.  use_cache=false replays every step from scratch
// under a block-causal mask instead of appending to KV caches; both paths
// must select identical tokens.
GenerationResult generate(ModelConfig cfg, const GenerationPlan& plan, bool use_cache = true);

// Native-resolution capture of per-(layer, head, step) entropies at
// alpha = 1 under the identity remap; `samples` > 1 averages runs that
// differ only in positional noise.
refstore::ReferenceEntropyStore capture_reference(ModelConfig cfg,
                                                  const rope::RopeConfig& rope_cfg,
                                                  const rope::StageSchedule& sched,
                                                  int samples = 1);

// Band of each of the head's d/2 feature pairs (height pairs then width
// pairs in axial mode).
std::vector<rope::Band> row_pair_bands(const std::vector<rope::FrequencyTable>& banded);

} // namespace extravar::model
