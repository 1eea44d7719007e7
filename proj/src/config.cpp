#include "extravar/config.hpp"

#include <cstdlib>
#include <stdexcept>

#include "extravar/errors.hpp"
#include "extravar/io.hpp"

namespace extravar::cli {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size())
        throw ConfigError("malformed integer for " + key + ": '" + v + "'");
    return x;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size())
        throw ConfigError("malformed integer for " + key + ": '" + v + "'");
    return x;
}

double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
        throw ConfigError("malformed number for " + key + ": '" + v + "'");
    return x;
}

bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1")
        return true;
    if (v == "off" || v == "false" || v == "0")
        return false;
    throw ConfigError("malformed flag for " + key + ": '" + v + "' (use on/off)");
}

} // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    if (key == "model.layers") layers = static_cast<int>(parse_int(key, value));
    else if (key == "model.heads") heads = static_cast<int>(parse_int(key, value));
    else if (key == "model.head_dim") head_dim = static_cast<int>(parse_int(key, value));
    else if (key == "model.vocab_size") vocab_size = static_cast<int>(parse_int(key, value));
    else if (key == "model.train_side") train_side = static_cast<int>(parse_int(key, value));
    else if (key == "model.steps") steps = static_cast<int>(parse_int(key, value));
    else if (key == "model.qk_gain") qk_gain = parse_real(key, value);
    else if (key == "model.parallel_heads") parallel_heads = parse_flag(key, value);
    else if (key == "rope.base") base = parse_real(key, value);
    else if (key == "rope.high_band_size") high_band_size = static_cast<int>(parse_int(key, value));
    else if (key == "rope.axis_mode") {
        if (value == "one_d") axis_mode = rope::AxisMode::one_d;
        else if (value == "two_d_axial") axis_mode = rope::AxisMode::two_d_axial;
        else throw ConfigError("unknown axis mode '" + value + "'");
    }
    else if (key == "schedule.layout_end") layout_end = static_cast<int>(parse_int(key, value));
    else if (key == "schedule.local_end") local_end = static_cast<int>(parse_int(key, value));
    else if (key == "calibration.tau_h") tau_h = parse_real(key, value);
    else if (key == "calibration.epsilon") epsilon = parse_real(key, value);
    else if (key == "calibration.alpha_min") alpha_min = parse_real(key, value);
    else if (key == "calibration.alpha_max") alpha_max = parse_real(key, value);
    else if (key == "plan.target_side") target_side = static_cast<int>(parse_int(key, value));
    else if (key == "plan.remap") {
        auto kind = rope::remap_kind_from_name(value);
        if (!kind)
            throw ConfigError("unknown remap '" + value + "'");
        remap = *kind;
    }
    else if (key == "plan.calibrate") calibrate = parse_flag(key, value);
    else if (key == "plan.ref") ref_path = value;
    else if (key == "plan.retain_attention") retain_attention = parse_flag(key, value);
    else if (key == "plan.nope_very_low") nope_very_low = parse_flag(key, value);
    else if (key == "probe.intervention") probe_intervention = value;
    else if (key == "run.seed") seed = parse_u64(key, value);
    else if (key == "run.samples") samples = static_cast<int>(parse_int(key, value));
    else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
    try {
        model::ModelConfig m = to_model_config();
        m.validate();
        rope::RopeConfig r = to_rope_config();
        r.validate();
        to_stage_schedule().validate();
        to_policy().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (samples < 1)
        throw ConfigError("run.samples must be >= 1");
}

model::ModelConfig RunConfig::to_model_config() const {
    model::ModelConfig m;
    m.layers = layers;
    m.heads = heads;
    m.head_dim = head_dim;
    m.vocab_size = vocab_size;
    m.train_side = train_side;
    m.steps = steps;
    m.seed = seed;
    m.qk_gain = qk_gain;
    m.parallel_heads = parallel_heads;
    return m;
}

rope::RopeConfig RunConfig::to_rope_config() const {
    rope::RopeConfig r;
    r.head_dim = head_dim;
    r.base = base;
    r.train_side = train_side;
    r.target_side = target_side;
    r.high_band_size = high_band_size;
    r.axis_mode = axis_mode;
    return r;
}

rope::StageSchedule RunConfig::to_stage_schedule() const {
    rope::StageSchedule s;
    s.total_steps = steps;
    s.layout_end = layout_end;
    s.local_end = local_end;
    return s;
}

attn::CalibrationPolicy RunConfig::to_policy() const {
    attn::CalibrationPolicy p;
    p.tau_h = tau_h;
    p.epsilon = epsilon;
    p.active_after_step = local_end;
    p.alpha_min = alpha_min;
    p.alpha_max = alpha_max;
    return p;
}

model::GenerationPlan RunConfig::to_plan() const {
    validate();
    model::GenerationPlan plan;
    plan.rope = to_rope_config();
    plan.schedule = to_stage_schedule();
    plan.policy = to_policy();
    plan.calibrate = calibrate;
    plan.retain_attention = retain_attention;
    try {
        plan.remap = rope::make_remap_rule(remap, plan.rope, plan.schedule, nope_very_low);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return plan;
}

std::string RunConfig::manifest_text() const {
    std::string out;
    out += "model.layers = " + std::to_string(layers) + '\n';
    out += "model.heads = " + std::to_string(heads) + '\n';
    out += "model.head_dim = " + std::to_string(head_dim) + '\n';
    out += "model.vocab_size = " + std::to_string(vocab_size) + '\n';
    out += "model.train_side = " + std::to_string(train_side) + '\n';
    out += "model.steps = " + std::to_string(steps) + '\n';
    out += "model.qk_gain = " + format_double(qk_gain) + '\n';
    out += std::string("model.parallel_heads = ") + (parallel_heads ? "on" : "off") + '\n';
    out += "rope.base = " + format_double(base) + '\n';
    out += "rope.high_band_size = " + std::to_string(high_band_size) + '\n';
    out += std::string("rope.axis_mode = ") +
           (axis_mode == rope::AxisMode::one_d ? "one_d" : "two_d_axial") + '\n';
    out += "schedule.layout_end = " + std::to_string(layout_end) + '\n';
    out += "schedule.local_end = " + std::to_string(local_end) + '\n';
    out += "calibration.tau_h = " + format_double(tau_h) + '\n';
    out += "calibration.epsilon = " + format_double(epsilon) + '\n';
    out += "calibration.alpha_min = " + format_double(alpha_min) + '\n';
    out += "calibration.alpha_max = " + format_double(alpha_max) + '\n';
    out += "plan.target_side = " + std::to_string(target_side) + '\n';
    out += std::string("plan.remap = ") + rope::remap_kind_name(remap) + '\n';
    out += std::string("plan.calibrate = ") + (calibrate ? "on" : "off") + '\n';
    if (!ref_path.empty())
        out += "plan.ref = " + ref_path + '\n';
    out += std::string("plan.retain_attention = ") + (retain_attention ? "on" : "off") + '\n';
    out += std::string("plan.nope_very_low = ") + (nope_very_low ? "on" : "off") + '\n';
    if (!probe_intervention.empty())
        out += "probe.intervention = " + probe_intervention + '\n';
    out += "run.seed = " + std::to_string(seed) + '\n';
    out += "run.samples = " + std::to_string(samples) + '\n';
    return out;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = nl == std::string::npos ? text.substr(pos)
                                                   : text.substr(pos, nl - pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ": line " + std::to_string(line_no) +
                              ": expected 'section.key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            cfg.apply(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ConfigError("config file not found: " + path.string());
    return parse_config_text(read_file_bytes(path), path.string());
}

} // namespace extravar::cli
