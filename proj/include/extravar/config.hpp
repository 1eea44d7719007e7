#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "extravar/attention.hpp"
#include "extravar/model.hpp"
#include "extravar/rope.hpp"

namespace extravar::cli {

// Flat view of every knob a run can carry.  Files use one `section.key =
// value` assignment per line; '#' starts a comment; unknown keys are
// rejected.  The manifest a command writes is itself a valid config, so a
// run can be reproduced from its manifest alone.
struct RunConfig {
    // model
    int layers = 2;
    int heads = 4;
    int head_dim = 64;
    int vocab_size = 32;
    int train_side = 16;
    int steps = 13;
    double qk_gain = 1.0;
    bool parallel_heads = false;
    // rope
    double base = 10000.0;
    int high_band_size = 3;
    rope::AxisMode axis_mode = rope::AxisMode::two_d_axial;
    // schedule
    int layout_end = 6;
    int local_end = 9;
    // calibration
    double tau_h = 0.3;
    double epsilon = 1e-8;
    double alpha_min = 0.5;
    double alpha_max = 4.0;
    // plan
    int target_side = 16;
    rope::RemapKind remap = rope::RemapKind::identity;
    bool calibrate = false;
    std::string ref_path;
    bool retain_attention = false;
    bool nope_very_low = true;
    // probe
    std::string probe_intervention;
    // run
    uint64_t seed = 1;
    int samples = 1;

    // throws ConfigError on unknown key or malformed value
    void apply(const std::string& key, const std::string& value);
    void validate() const; // cross-field consistency

    model::ModelConfig to_model_config() const;
    rope::RopeConfig to_rope_config() const;
    rope::StageSchedule to_stage_schedule() const;
    attn::CalibrationPolicy to_policy() const;

    // Plan with the remap rule assembled for this config.  The reference
    // store (when any) is attached by the caller.
    model::GenerationPlan to_plan() const;

    std::string manifest_text() const;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config_file(const std::filesystem::path& path);

} // namespace extravar::cli
