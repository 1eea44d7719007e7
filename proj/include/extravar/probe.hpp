#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "extravar/intervention.hpp"
#include "extravar/model.hpp"

namespace extravar::probe {

// Copy of `plan` carrying the intervention (validated against the plan's
// band layout and step count).
model::GenerationPlan apply_intervention(const model::GenerationPlan& plan,
                                         const Intervention& iv, int total_steps);

// Mean 2-norm of the rotary feature pairs of each band, averaged over pairs
// and rows.  q: N x d rows, pair_bands: band of each of the d/2 pairs.
// Bands with no pairs report 0.
std::array<double, 4> band_query_norms(const Matrix& q,
                                       const std::vector<rope::Band>& pair_bands);

// Write the retained P(alpha) map of (layer, head, step) to a binary matrix
// file.  Throws when the run did not retain attention.
void export_attention_map(const model::GenerationResult& run, int layer, int head,
                          int step, int heads_per_layer,
                          const std::filesystem::path& path);

} // namespace extravar::probe
