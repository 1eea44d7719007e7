#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "extravar/matrix.hpp"

namespace extravar::rope {

enum class AxisMode { one_d, two_d_axial };

// Which spectrum a frequency table describes.  In two_d_axial mode the head
// dimension is split in half: the first d/4 pairs rotate with the height
// coordinate, the next d/4 with the width coordinate.  Both axes share the
// same spectrum shape.
enum class Axis { one_d, height, width };

// Wavelength bands relative to the training grid side L:
//   High     the m fastest pairs (smallest wavelength); wins on overlap
//   Mid      wavelength < L
//   Low      L <= wavelength <= 4L
//   VeryLow  wavelength > 4L
enum class Band { high, mid, low, very_low };

const char* band_name(Band b);
std::optional<Band> band_from_name(std::string_view s);
const char* axis_name(Axis a);

struct RopeConfig {
    int head_dim = 64;       // d, feature width of one attention head
    double base = 10000.0;   // b in theta_j = b^(-2(j-1)/dim)
    int train_side = 16;     // L, square grid side the bands are classified at
    int target_side = 16;    // L', side used at generation time (>= L)
    int high_band_size = 3;  // m, pair count of the High band per axis
    AxisMode axis_mode = AxisMode::two_d_axial;

    int pairs_per_axis() const;
    // denominator of the spectrum exponent: d for one_d, d/2 for two_d_axial
    int exponent_dim() const;
    double ratio() const { return static_cast<double>(target_side) / train_side; }
    void validate() const; // throws std::invalid_argument
};

struct PairEntry {
    int index = 0;          // 1-based pair index j
    double theta = 0.0;     // base frequency
    double wavelength = 0.0; // 2*pi / theta
    Band band = Band::mid;  // meaningful only once bands_assigned
};

struct FrequencyTable {
    Axis axis = Axis::one_d;
    int exponent_dim = 0;
    bool bands_assigned = false;
    std::vector<PairEntry> pairs;
};

// theta_j = base^(-2(j-1)/exponent_dim) for j = 1..pairs_per_axis
FrequencyTable build_frequency_table(const RopeConfig& cfg, Axis axis);

// Label each pair: the high_band_size smallest wavelengths become High, the
// rest split by wavelength thresholds at train_side.  Pure and idempotent.
FrequencyTable assign_bands(FrequencyTable table, int train_side, int high_band_size);

// CSV rendering (axis,j,theta,wavelength,band), one row per pair per table.
std::string frequency_table_csv(const std::vector<FrequencyTable>& tables);

// --- static remapping rules -------------------------------------------------

// positional interpolation: every frequency divided by the extension ratio
double remap_pi(double theta, double s);

// base rescaling: theta * lambda^(-2(j-1)/dim) with lambda = s^(dim/(dim-2)).
// Leaves j=1 untouched and lands exactly on theta/s at the last pair.
double remap_ntk(double theta, int index, int exponent_dim, double s);

// wavelength ramp weight: 1 below lambda_lo, 0 above lambda_hi, linear in
// between.  Requires lambda_lo < lambda_hi.
double yarn_mix(double wavelength, double lambda_lo, double lambda_hi);

// rho * theta + (1 - rho) * theta / s, exact at rho = 0, rho = 1 and s = 1
double remap_yarn(double theta, double rho, double s);

// --- stage schedule ----------------------------------------------------------

// Scale steps 1..total_steps, split into Layout (k < layout_end), Local
// (layout_end <= k <= local_end) and Detail (k > local_end).
struct StageSchedule {
    int total_steps = 13;
    int layout_end = 6;  // k_l
    int local_end = 9;   // k_h
    void validate() const;
};

enum class Stage { layout, local, detail };

Stage stage_of(int step, const StageSchedule& sched);

// omega_k: 0 for k <= k_l, 1 for k >= k_h, (k - k_l)/(k_h - k_l) between
double stage_weight(int step, const StageSchedule& sched);

// Per-step frequency list for the stage-aware rule: VeryLow pairs drop to 0
// (when nope_very_low), every other pair blends PI and YaRN by omega_k.
// Exact PI at omega = 0, exact YaRN at omega = 1, identity at s = 1.
std::vector<double> stage_remap(const FrequencyTable& table, int step,
                                const StageSchedule& sched, double s,
                                double lambda_lo, double lambda_hi,
                                bool nope_very_low = true);

// --- rule dispatch -----------------------------------------------------------

enum class RemapKind { identity, nope, pi, ntk, yarn, stage_aware };

const char* remap_kind_name(RemapKind k);
std::optional<RemapKind> remap_kind_from_name(std::string_view s);

struct RemapRule {
    RemapKind kind = RemapKind::identity;
    double ratio = 1.0; // s = L'/L
    double lambda_lo = 0.0;
    double lambda_hi = 0.0;
    StageSchedule schedule{};
    bool nope_very_low = true;

    static RemapRule identity();
    static RemapRule nope();
    static RemapRule pi(double s);
    static RemapRule ntk(double s);
    static RemapRule yarn(double s, double lambda_lo, double lambda_hi);
    static RemapRule stage_aware(double s, const StageSchedule& sched,
                                 double lambda_lo, double lambda_hi,
                                 bool nope_very_low = true);
    void validate() const;
};

// YaRN ramp thresholds for a banded table: lambda_lo is the largest High
// wavelength, lambda_hi the Mid/Low boundary (train side L).  When the High
// band already reaches past L the ramp would be empty, so lambda_lo falls
// back to the largest wavelength below L (or L/2 when none exists).
std::pair<double, double> default_yarn_thresholds(const FrequencyTable& banded, int train_side);

// Frequencies a given step actually rotates with under `rule`.
std::vector<double> remap_frequencies(const FrequencyTable& table, const RemapRule& rule, int step);

// Every axis table of the config, bands assigned at the training side.
std::vector<FrequencyTable> banded_tables(const RopeConfig& cfg);

// Rule of the requested kind with ratio and ramp thresholds derived from cfg.
RemapRule make_remap_rule(RemapKind kind, const RopeConfig& cfg,
                          const StageSchedule& sched, bool nope_very_low = true);

// --- rotation ----------------------------------------------------------------

// angle_j = position * freqs[j]; position may be fractional (coarse grids)
std::vector<double> rotation_angles(const std::vector<double>& freqs, double position);

// Rotate consecutive feature pairs of each row by the matching angle.
// rows: N x d, angles: N x d/2.  Zero angle leaves a pair bitwise untouched.
Matrix apply_rope(const Matrix& rows, const Matrix& angles);

} // namespace extravar::rope
