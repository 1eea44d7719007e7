#include "extravar/rope.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "extravar/io.hpp"

namespace extravar::rope {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

const char* band_name(Band b) {
    switch (b) {
    case Band::high: return "high";
    case Band::mid: return "mid";
    case Band::low: return "low";
    case Band::very_low: return "verylow";
    }
    return "?";
}

std::optional<Band> band_from_name(std::string_view s) {
    if (s == "high") return Band::high;
    if (s == "mid") return Band::mid;
    if (s == "low") return Band::low;
    if (s == "verylow") return Band::very_low;
    return std::nullopt;
}

const char* axis_name(Axis a) {
    switch (a) {
    case Axis::one_d: return "one_d";
    case Axis::height: return "height";
    case Axis::width: return "width";
    }
    return "?";
}

int RopeConfig::pairs_per_axis() const {
    return axis_mode == AxisMode::one_d ? head_dim / 2 : head_dim / 4;
}

int RopeConfig::exponent_dim() const {
    return axis_mode == AxisMode::one_d ? head_dim : head_dim / 2;
}

void RopeConfig::validate() const {
    if (head_dim <= 0 || head_dim % 2 != 0)
        throw std::invalid_argument("head_dim must be positive and even");
    if (axis_mode == AxisMode::two_d_axial && head_dim % 4 != 0)
        throw std::invalid_argument("two_d_axial mode needs head_dim divisible by 4");
    if (base <= 0.0)
        throw std::invalid_argument("rope base must be positive");
    if (train_side < 1)
        throw std::invalid_argument("train_side must be >= 1");
    if (target_side < train_side)
        throw std::invalid_argument("target_side must be >= train_side");
    if (high_band_size < 1 || high_band_size > pairs_per_axis())
        throw std::invalid_argument("high_band_size out of range for this head_dim");
}

FrequencyTable build_frequency_table(const RopeConfig& cfg, Axis axis) {
    cfg.validate();
    if ((axis == Axis::one_d) != (cfg.axis_mode == AxisMode::one_d))
        throw std::invalid_argument("axis does not match axis_mode");
    FrequencyTable t;
    t.axis = axis;
    t.exponent_dim = cfg.exponent_dim();
    int n = cfg.pairs_per_axis();
    t.pairs.reserve(n);
    for (int j = 1; j <= n; ++j) {
        PairEntry e;
        e.index = j;
        e.theta = std::pow(cfg.base, -2.0 * (j - 1) / t.exponent_dim);
        e.wavelength = kTwoPi / e.theta;
        t.pairs.push_back(e);
    }
    return t;
}

FrequencyTable assign_bands(FrequencyTable table, int train_side, int high_band_size) {
    if (table.pairs.empty())
        throw std::invalid_argument("cannot band an empty table");
    if (high_band_size < 1 || high_band_size > static_cast<int>(table.pairs.size()))
        throw std::invalid_argument("high_band_size out of range for this table");
    const double low_edge = static_cast<double>(train_side);
    const double very_low_edge = 4.0 * train_side;
    // pair wavelengths grow with j, so the m smallest are simply the first m
    for (size_t i = 0; i < table.pairs.size(); ++i) {
        PairEntry& e = table.pairs[i];
        if (static_cast<int>(i) < high_band_size)
            e.band = Band::high;
        else if (e.wavelength < low_edge)
            e.band = Band::mid;
        else if (e.wavelength <= very_low_edge)
            e.band = Band::low;
        else
            e.band = Band::very_low;
    }
    table.bands_assigned = true;
    return table;
}

std::string frequency_table_csv(const std::vector<FrequencyTable>& tables) {
    std::string out = "axis,j,theta,wavelength,band\n";
    for (const FrequencyTable& t : tables) {
        for (const PairEntry& e : t.pairs) {
            out += axis_name(t.axis);
            out += ',' + std::to_string(e.index);
            out += ',' + format_double(e.theta);
            out += ',' + format_double(e.wavelength);
            out += ',';
            out += t.bands_assigned ? band_name(e.band) : "unassigned";
            out += '\n';
        }
    }
    return out;
}

double remap_pi(double theta, double s) {
    if (s < 1.0)
        throw std::invalid_argument("extension ratio must be >= 1");
    return theta / s;
}

double remap_ntk(double theta, int index, int exponent_dim, double s) {
    if (s < 1.0)
        throw std::invalid_argument("extension ratio must be >= 1");
    if (exponent_dim <= 2)
        throw std::invalid_argument("ntk remap needs exponent_dim > 2");
    double lambda = std::pow(s, static_cast<double>(exponent_dim) / (exponent_dim - 2));
    return std::pow(lambda, -2.0 * (index - 1) / exponent_dim) * theta;
}

double yarn_mix(double wavelength, double lambda_lo, double lambda_hi) {
    if (!(lambda_lo < lambda_hi))
        throw std::invalid_argument("yarn ramp needs lambda_lo < lambda_hi");
    if (wavelength <= lambda_lo)
        return 1.0;
    if (wavelength >= lambda_hi)
        return 0.0;
    return (lambda_hi - wavelength) / (lambda_hi - lambda_lo);
}

double remap_yarn(double theta, double rho, double s) {
    if (s < 1.0)
        throw std::invalid_argument("extension ratio must be >= 1");
    if (rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("rho must lie in [0, 1]");
    if (s == 1.0)
        return theta; // both mix components coincide
    double lo = theta / s;
    // rho*theta + (1-rho)*lo is exact at both endpoints; clamp shields the
    // interior against a final rounding nudging past the hull
    double mixed = rho * theta + (1.0 - rho) * lo;
    return std::clamp(mixed, lo, theta);
}

void StageSchedule::validate() const {
    if (total_steps < 1)
        throw std::invalid_argument("schedule needs at least one step");
    if (layout_end < 1 || layout_end > local_end || local_end > total_steps)
        throw std::invalid_argument("schedule needs 1 <= layout_end <= local_end <= total_steps");
}

Stage stage_of(int step, const StageSchedule& sched) {
    sched.validate();
    if (step < 1 || step > sched.total_steps)
        throw std::invalid_argument("step outside schedule");
    if (step < sched.layout_end)
        return Stage::layout;
    if (step <= sched.local_end)
        return Stage::local;
    return Stage::detail;
}

double stage_weight(int step, const StageSchedule& sched) {
    sched.validate();
    if (step < 1 || step > sched.total_steps)
        throw std::invalid_argument("step outside schedule");
    if (step <= sched.layout_end)
        return 0.0;
    if (step >= sched.local_end)
        return 1.0;
    return static_cast<double>(step - sched.layout_end) /
           (sched.local_end - sched.layout_end);
}

std::vector<double> stage_remap(const FrequencyTable& table, int step,
                                const StageSchedule& sched, double s,
                                double lambda_lo, double lambda_hi,
                                bool nope_very_low) {
    if (!table.bands_assigned)
        throw std::invalid_argument("stage_remap needs a banded table");
    if (s < 1.0)
        throw std::invalid_argument("extension ratio must be >= 1");
    const double omega = stage_weight(step, sched);
    std::vector<double> out(table.pairs.size());
    for (size_t i = 0; i < table.pairs.size(); ++i) {
        const PairEntry& e = table.pairs[i];
        if (nope_very_low && e.band == Band::very_low) {
            out[i] = 0.0;
            continue;
        }
        double pi_f = remap_pi(e.theta, s);
        if (omega == 0.0) {
            out[i] = pi_f;
            continue;
        }
        double rho = yarn_mix(e.wavelength, lambda_lo, lambda_hi);
        double yarn_f = remap_yarn(e.theta, rho, s);
        if (omega == 1.0) {
            out[i] = yarn_f;
            continue;
        }
        double blended = pi_f + omega * (yarn_f - pi_f);
        out[i] = std::clamp(blended, std::min(pi_f, yarn_f), std::max(pi_f, yarn_f));
    }
    return out;
}

const char* remap_kind_name(RemapKind k) {
    switch (k) {
    case RemapKind::identity: return "none";
    case RemapKind::nope: return "nope";
    case RemapKind::pi: return "pi";
    case RemapKind::ntk: return "ntk";
    case RemapKind::yarn: return "yarn";
    case RemapKind::stage_aware: return "stage-aware";
    }
    return "?";
}

std::optional<RemapKind> remap_kind_from_name(std::string_view s) {
    if (s == "none") return RemapKind::identity;
    if (s == "nope") return RemapKind::nope;
    if (s == "pi") return RemapKind::pi;
    if (s == "ntk") return RemapKind::ntk;
    if (s == "yarn") return RemapKind::yarn;
    if (s == "stage-aware") return RemapKind::stage_aware;
    return std::nullopt;
}

RemapRule RemapRule::identity() { return RemapRule{}; }

RemapRule RemapRule::nope() {
    RemapRule r;
    r.kind = RemapKind::nope;
    return r;
}

RemapRule RemapRule::pi(double s) {
    RemapRule r;
    r.kind = RemapKind::pi;
    r.ratio = s;
    r.validate();
    return r;
}

RemapRule RemapRule::ntk(double s) {
    RemapRule r;
    r.kind = RemapKind::ntk;
    r.ratio = s;
    r.validate();
    return r;
}

RemapRule RemapRule::yarn(double s, double lambda_lo, double lambda_hi) {
    RemapRule r;
    r.kind = RemapKind::yarn;
    r.ratio = s;
    r.lambda_lo = lambda_lo;
    r.lambda_hi = lambda_hi;
    r.validate();
    return r;
}

RemapRule RemapRule::stage_aware(double s, const StageSchedule& sched,
                                 double lambda_lo, double lambda_hi,
                                 bool nope_very_low) {
    RemapRule r;
    r.kind = RemapKind::stage_aware;
    r.ratio = s;
    r.schedule = sched;
    r.lambda_lo = lambda_lo;
    r.lambda_hi = lambda_hi;
    r.nope_very_low = nope_very_low;
    r.validate();
    return r;
}

void RemapRule::validate() const {
    if (kind == RemapKind::identity || kind == RemapKind::nope)
        return;
    if (ratio < 1.0)
        throw std::invalid_argument("extension ratio must be >= 1");
    if (kind == RemapKind::yarn || kind == RemapKind::stage_aware) {
        if (!(lambda_lo < lambda_hi))
            throw std::invalid_argument("yarn ramp needs lambda_lo < lambda_hi");
    }
    if (kind == RemapKind::stage_aware)
        schedule.validate();
}

std::pair<double, double> default_yarn_thresholds(const FrequencyTable& banded, int train_side) {
    if (!banded.bands_assigned)
        throw std::invalid_argument("thresholds need a banded table");
    const double hi = static_cast<double>(train_side);
    double lo = 0.0;
    for (const PairEntry& e : banded.pairs)
        if (e.band == Band::high)
            lo = std::max(lo, e.wavelength);
    if (lo >= hi) {
        // High band already spans past L: ramp from the fastest pair below L
        double best = 0.0;
        for (const PairEntry& e : banded.pairs)
            if (e.wavelength < hi)
                best = std::max(best, e.wavelength);
        lo = best > 0.0 ? best : hi / 2.0;
    }
    return {lo, hi};
}

std::vector<double> remap_frequencies(const FrequencyTable& table, const RemapRule& rule, int step) {
    rule.validate();
    std::vector<double> out(table.pairs.size());
    switch (rule.kind) {
    case RemapKind::identity:
        for (size_t i = 0; i < table.pairs.size(); ++i)
            out[i] = table.pairs[i].theta;
        break;
    case RemapKind::nope:
        break; // already zero
    case RemapKind::pi:
        for (size_t i = 0; i < table.pairs.size(); ++i)
            out[i] = remap_pi(table.pairs[i].theta, rule.ratio);
        break;
    case RemapKind::ntk:
        for (size_t i = 0; i < table.pairs.size(); ++i)
            out[i] = remap_ntk(table.pairs[i].theta, table.pairs[i].index,
                               table.exponent_dim, rule.ratio);
        break;
    case RemapKind::yarn:
        for (size_t i = 0; i < table.pairs.size(); ++i) {
            double rho = yarn_mix(table.pairs[i].wavelength, rule.lambda_lo, rule.lambda_hi);
            out[i] = remap_yarn(table.pairs[i].theta, rho, rule.ratio);
        }
        break;
    case RemapKind::stage_aware:
        out = stage_remap(table, step, rule.schedule, rule.ratio,
                          rule.lambda_lo, rule.lambda_hi, rule.nope_very_low);
        break;
    }
    return out;
}

std::vector<FrequencyTable> banded_tables(const RopeConfig& cfg) {
    std::vector<FrequencyTable> tables;
    if (cfg.axis_mode == AxisMode::one_d) {
        tables.push_back(build_frequency_table(cfg, Axis::one_d));
    } else {
        tables.push_back(build_frequency_table(cfg, Axis::height));
        tables.push_back(build_frequency_table(cfg, Axis::width));
    }
    for (FrequencyTable& t : tables)
        t = assign_bands(std::move(t), cfg.train_side, cfg.high_band_size);
    return tables;
}

RemapRule make_remap_rule(RemapKind kind, const RopeConfig& cfg,
                          const StageSchedule& sched, bool nope_very_low) {
    const double s = cfg.ratio();
    switch (kind) {
    case RemapKind::identity:
        return RemapRule::identity();
    case RemapKind::nope:
        return RemapRule::nope();
    case RemapKind::pi:
        return RemapRule::pi(s);
    case RemapKind::ntk:
        return RemapRule::ntk(s);
    case RemapKind::yarn: {
        auto [lo, hi] = default_yarn_thresholds(banded_tables(cfg)[0], cfg.train_side);
        return RemapRule::yarn(s, lo, hi);
    }
    case RemapKind::stage_aware: {
        auto [lo, hi] = default_yarn_thresholds(banded_tables(cfg)[0], cfg.train_side);
        return RemapRule::stage_aware(s, sched, lo, hi, nope_very_low);
    }
    }
    throw std::invalid_argument("unknown remap kind");
}

std::vector<double> rotation_angles(const std::vector<double>& freqs, double position) {
    if (position < 0.0)
        throw std::invalid_argument("position must be non-negative");
    std::vector<double> out(freqs.size());
    for (size_t i = 0; i < freqs.size(); ++i)
        out[i] = position * freqs[i];
    return out;
}

Matrix apply_rope(const Matrix& rows, const Matrix& angles) {
    if (rows.cols % 2 != 0)
        throw std::invalid_argument("apply_rope needs an even feature width");
    if (angles.rows != rows.rows || angles.cols != rows.cols / 2)
        throw std::invalid_argument("angles shape must be rows x d/2");
    Matrix out = rows;
    for (int r = 0; r < rows.rows; ++r) {
        double* v = out.row(r);
        const double* a = angles.row(r);
        for (int p = 0; p < angles.cols; ++p) {
            double ang = a[p];
            if (ang == 0.0)
                continue; // bitwise identity, also the NoPE path
            double c = std::cos(ang), s = std::sin(ang);
            double x = v[2 * p], y = v[2 * p + 1];
            v[2 * p] = x * c - y * s;
            v[2 * p + 1] = x * s + y * c;
        }
    }
    return out;
}

} // namespace extravar::rope
