#include "extravar/probe.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <stdexcept>

#include "extravar/errors.hpp"
#include "extravar/io.hpp"

namespace extravar::probe {

namespace {

const char* kind_name(InterventionKind k) {
    switch (k) {
    case InterventionKind::nope_substitute: return "nope";
    case InterventionKind::force_wavelength: return "force";
    case InterventionKind::zero_qk_features: return "zeroqk";
    }
    return "?";
}

double parse_wavelength_term(const std::string& term, int train_side) {
    // accepts a plain number, or L, L/x, L*x
    if (term.empty())
        throw ConfigError("empty wavelength term");
    if (term[0] == 'L') {
        double l = static_cast<double>(train_side);
        if (term.size() == 1)
            return l;
        char op = term[1];
        std::string rest = term.substr(2);
        char* end = nullptr;
        double v = std::strtod(rest.c_str(), &end);
        if (rest.empty() || end != rest.c_str() + rest.size() || v <= 0.0)
            throw ConfigError("malformed wavelength term '" + term + "'");
        if (op == '/')
            return l / v;
        if (op == '*')
            return l * v;
        throw ConfigError("malformed wavelength term '" + term + "'");
    }
    char* end = nullptr;
    double v = std::strtod(term.c_str(), &end);
    if (end != term.c_str() + term.size() || v <= 0.0)
        throw ConfigError("malformed wavelength term '" + term + "'");
    return v;
}

} // namespace

void Intervention::validate(int total_steps) const {
    if (step_lo < 1 || step_hi < step_lo || step_hi > total_steps)
        throw std::invalid_argument("intervention step range must satisfy 1 <= lo <= hi <= steps");
    if (kind == InterventionKind::force_wavelength && !(wavelength > 0.0))
        throw std::invalid_argument("force_wavelength needs a positive wavelength");
}

void apply_to_frequencies(const Intervention& iv, const rope::FrequencyTable& banded,
                          int step, std::vector<double>& freqs) {
    if (!banded.bands_assigned)
        throw std::invalid_argument("intervention needs a banded table");
    if (freqs.size() != banded.pairs.size())
        throw std::invalid_argument("frequency list does not match the table");
    if (!iv.covers_step(step) || iv.kind == InterventionKind::zero_qk_features)
        return;
    for (size_t i = 0; i < banded.pairs.size(); ++i) {
        if (banded.pairs[i].band != iv.band)
            continue;
        if (iv.kind == InterventionKind::nope_substitute)
            freqs[i] = 0.0;
        else
            freqs[i] = 2.0 * std::numbers::pi / iv.wavelength;
    }
}

Intervention parse_intervention_spec(const std::string& spec, int train_side, int total_steps) {
    std::vector<std::string> parts;
    size_t pos = 0;
    while (pos <= spec.size()) {
        size_t colon = spec.find(':', pos);
        if (colon == std::string::npos) {
            parts.push_back(spec.substr(pos));
            break;
        }
        parts.push_back(spec.substr(pos, colon - pos));
        pos = colon + 1;
    }
    if (parts.size() < 3 || parts.size() > 4)
        throw ConfigError("intervention spec must be kind:band:lo-hi[:T=...]");

    Intervention iv;
    if (parts[0] == "nope")
        iv.kind = InterventionKind::nope_substitute;
    else if (parts[0] == "force")
        iv.kind = InterventionKind::force_wavelength;
    else if (parts[0] == "zeroqk")
        iv.kind = InterventionKind::zero_qk_features;
    else
        throw ConfigError("unknown intervention kind '" + parts[0] + "'");

    auto band = rope::band_from_name(parts[1]);
    if (!band)
        throw ConfigError("unknown band '" + parts[1] + "'");
    iv.band = *band;

    size_t dash = parts[2].find('-');
    if (dash == std::string::npos)
        throw ConfigError("step range must look like lo-hi");
    char* end = nullptr;
    std::string lo_s = parts[2].substr(0, dash), hi_s = parts[2].substr(dash + 1);
    iv.step_lo = static_cast<int>(std::strtol(lo_s.c_str(), &end, 10));
    if (lo_s.empty() || end != lo_s.c_str() + lo_s.size())
        throw ConfigError("malformed step range '" + parts[2] + "'");
    iv.step_hi = static_cast<int>(std::strtol(hi_s.c_str(), &end, 10));
    if (hi_s.empty() || end != hi_s.c_str() + hi_s.size())
        throw ConfigError("malformed step range '" + parts[2] + "'");

    if (parts.size() == 4) {
        if (iv.kind != InterventionKind::force_wavelength)
            throw ConfigError("only force interventions take a wavelength term");
        if (parts[3].rfind("T=", 0) != 0)
            throw ConfigError("wavelength term must look like T=...");
        iv.wavelength = parse_wavelength_term(parts[3].substr(2), train_side);
    } else if (iv.kind == InterventionKind::force_wavelength) {
        throw ConfigError("force interventions need a T=... term");
    }

    try {
        iv.validate(total_steps);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return iv;
}

std::string intervention_to_spec(const Intervention& iv) {
    std::string out = kind_name(iv.kind);
    out += ':';
    out += rope::band_name(iv.band);
    out += ':' + std::to_string(iv.step_lo) + '-' + std::to_string(iv.step_hi);
    if (iv.kind == InterventionKind::force_wavelength)
        out += ":T=" + format_double(iv.wavelength);
    return out;
}

model::GenerationPlan apply_intervention(const model::GenerationPlan& plan,
                                         const Intervention& iv, int total_steps) {
    iv.validate(total_steps);
    model::GenerationPlan out = plan;
    out.intervention = iv;
    return out;
}

std::array<double, 4> band_query_norms(const Matrix& q,
                                       const std::vector<rope::Band>& pair_bands) {
    if (q.cols != static_cast<int>(pair_bands.size()) * 2)
        throw std::invalid_argument("q width must be twice the pair count");
    std::array<double, 4> sums{};
    std::array<long, 4> counts{};
    for (int r = 0; r < q.rows; ++r) {
        const double* v = q.row(r);
        for (size_t p = 0; p < pair_bands.size(); ++p) {
            const int b = static_cast<int>(pair_bands[p]);
            const double x = v[2 * p], y = v[2 * p + 1];
            sums[b] += std::sqrt(x * x + y * y);
            counts[b] += 1;
        }
    }
    std::array<double, 4> means{};
    for (int b = 0; b < 4; ++b)
        means[b] = counts[b] > 0 ? sums[b] / counts[b] : 0.0;
    return means;
}

void export_attention_map(const model::GenerationResult& run, int layer, int head,
                          int step, int heads_per_layer,
                          const std::filesystem::path& path) {
    if (step < 1 || step > static_cast<int>(run.trace.steps.size()))
        throw std::invalid_argument("step outside the run");
    const model::StepTrace& st = run.trace.steps[step - 1];
    const int idx = layer * heads_per_layer + head;
    if (st.attention.empty())
        throw std::runtime_error("run did not retain attention maps");
    if (idx < 0 || idx >= static_cast<int>(st.attention.size()))
        throw std::invalid_argument("layer/head outside the run");
    write_matrix(path, st.attention[idx]);
}

} // namespace extravar::probe
