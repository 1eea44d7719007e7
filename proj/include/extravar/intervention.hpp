#pragma once

#include <optional>
#include <string>

#include "extravar/rope.hpp"

namespace extravar::probe {

// Diagnostic perturbations applied inside a step range [step_lo, step_hi]:
//   nope_substitute   zero the band's frequencies (rotation disabled)
//   force_wavelength  pin the band's frequencies to 2*pi / wavelength
//   zero_qk_features  zero the band's Q/K feature pairs after rotation
enum class InterventionKind { nope_substitute, force_wavelength, zero_qk_features };

struct Intervention {
    InterventionKind kind = InterventionKind::nope_substitute;
    rope::Band band = rope::Band::very_low;
    int step_lo = 1;
    int step_hi = 1;
    double wavelength = 0.0; // force_wavelength only

    bool covers_step(int step) const { return step >= step_lo && step <= step_hi; }
    // throws std::invalid_argument on a bad range / missing wavelength
    void validate(int total_steps) const;
};

// In-place frequency override for one banded table at one step; no-op when
// the step is outside the range or the kind acts on features instead.
void apply_to_frequencies(const Intervention& iv, const rope::FrequencyTable& banded,
                          int step, std::vector<double>& freqs);

// Spec string "kind:band:lo-hi[:T=...]", e.g. "force:mid:6-9:T=L/6".
// The T term accepts a plain number or L, L/x, L*x (L = train side).
Intervention parse_intervention_spec(const std::string& spec, int train_side, int total_steps);

std::string intervention_to_spec(const Intervention& iv);

} // namespace extravar::probe
