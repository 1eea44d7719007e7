#include "extravar/commands.hpp"

#include <cstdio>
#include <iostream>
#include <stdexcept>

#include "extravar/entropy_ref.hpp"
#include "extravar/errors.hpp"
#include "extravar/io.hpp"
#include "extravar/model.hpp"
#include "extravar/probe.hpp"

namespace extravar::cli {

namespace {

namespace fs = std::filesystem;

std::string step_tag(int step) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", step);
    return buf;
}

// Loads cfg.ref_path, recording the file-byte hash for the manifest.
refstore::ReferenceEntropyStore load_reference(const RunConfig& cfg, std::string& hash_line) {
    fs::path p = cfg.ref_path;
    if (!fs::exists(p))
        throw MissingArtifactError("reference store not found: " + p.string());
    std::string bytes = read_file_bytes(p);
    hash_line = "# reference_store_hash = " + hash_hex(bytes) + "\n";
    return refstore::parse(bytes, p.string());
}

std::string trace_csv(const model::GenerationResult& run) {
    std::string out = "step,layer,head,alpha,entropy,variance\n";
    for (const auto& st : run.trace.steps)
        for (const auto& ht : st.heads)
            out += std::to_string(st.step) + ',' + std::to_string(ht.layer) + ',' +
                   std::to_string(ht.head) + ',' + format_double(ht.alpha) + ',' +
                   format_double(ht.entropy) + ',' + format_double(ht.variance) + '\n';
    return out;
}

std::string bands_csv(const model::GenerationResult& run) {
    constexpr rope::Band kBands[] = {rope::Band::high, rope::Band::mid, rope::Band::low,
                                     rope::Band::very_low};
    std::string out = "step,omega,band,mean_norm\n";
    for (const auto& st : run.trace.steps)
        for (int b = 0; b < 4; ++b)
            out += std::to_string(st.step) + ',' + format_double(st.omega) + ',' +
                   rope::band_name(kBands[b]) + ',' + format_double(st.band_norms[b]) + '\n';
    return out;
}

std::string token_grid(const model::StepTrace& st) {
    std::string out;
    for (int y = 0; y < st.height; ++y) {
        for (int x = 0; x < st.width; ++x) {
            if (x) out += ' ';
            out += std::to_string(st.tokens[static_cast<size_t>(y) * st.width + x]);
        }
        out += '\n';
    }
    return out;
}

} // namespace

std::vector<fs::path> cmd_freq_table(const RunConfig& cfg, const fs::path& out_dir,
                                     const std::string& axis_filter) {
    rope::RopeConfig rc = cfg.to_rope_config();
    try {
        rc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    std::vector<rope::FrequencyTable> tables = rope::banded_tables(rc);
    if (!axis_filter.empty()) {
        std::vector<rope::FrequencyTable> kept;
        for (const auto& t : tables)
            if (axis_filter == rope::axis_name(t.axis))
                kept.push_back(t);
        if (kept.empty())
            throw ConfigError("axis '" + axis_filter + "' not present in " +
                              (rc.axis_mode == rope::AxisMode::one_d ? std::string("one_d")
                                                                     : std::string("two_d_axial")) +
                              " mode");
        tables = std::move(kept);
    }
    fs::path csv = out_dir / "freq_table.csv";
    write_file_bytes(csv, rope::frequency_table_csv(tables));
    return {csv};
}

std::vector<fs::path> cmd_capture_ref(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (cfg.target_side != cfg.train_side)
        throw ConfigError("capture runs at the training resolution; set plan.target_side = " +
                          std::to_string(cfg.train_side));
    model::ModelConfig mc = cfg.to_model_config();
    rope::RopeConfig rc = cfg.to_rope_config();
    refstore::ReferenceEntropyStore store =
        model::capture_reference(mc, rc, cfg.to_stage_schedule(), cfg.samples);
    fs::path dest = cfg.ref_path.empty()
                        ? out_dir / "refs" / (model::config_hash_hex(mc, rc) + ".entropy")
                        : fs::path(cfg.ref_path);
    refstore::save(store, dest);
    return {dest};
}

std::vector<fs::path> cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    if (cfg.calibrate && cfg.ref_path.empty())
        throw MissingArtifactError(
            "plan.calibrate = on requires plan.ref (capture one with capture-ref)");
    model::ModelConfig mc = cfg.to_model_config();
    model::GenerationPlan plan = cfg.to_plan();
    refstore::ReferenceEntropyStore store;
    std::string ref_hash_line;
    if (!cfg.ref_path.empty()) {
        store = load_reference(cfg, ref_hash_line);
        plan.reference = &store;
    }
    if (!cfg.probe_intervention.empty())
        plan.intervention =
            probe::parse_intervention_spec(cfg.probe_intervention, cfg.train_side, cfg.steps);

    model::GenerationResult run = model::generate(mc, plan);

    std::vector<fs::path> written;
    fs::path manifest = out_dir / "manifest.txt";
    write_file_bytes(manifest, cfg.manifest_text() + ref_hash_line);
    written.push_back(manifest);
    fs::path trace = out_dir / "trace.csv";
    write_file_bytes(trace, trace_csv(run));
    written.push_back(trace);
    fs::path bands = out_dir / "bands.csv";
    write_file_bytes(bands, bands_csv(run));
    written.push_back(bands);
    for (const auto& st : run.trace.steps) {
        fs::path tokens = out_dir / ("tokens_step" + step_tag(st.step) + ".txt");
        write_file_bytes(tokens, token_grid(st));
        written.push_back(tokens);
    }
    if (cfg.retain_attention) {
        for (const auto& st : run.trace.steps)
            for (int l = 0; l < mc.layers; ++l)
                for (int h = 0; h < mc.heads; ++h) {
                    fs::path map = out_dir / "attn" /
                                   ("step" + step_tag(st.step) + "_layer" + std::to_string(l) +
                                    "_head" + std::to_string(h) + ".mat");
                    probe::export_attention_map(run, l, h, st.step, mc.heads, map);
                    written.push_back(map);
                }
    }
    return written;
}

std::vector<fs::path> cmd_probe(const RunConfig& cfg, const fs::path& out_dir) {
    if (cfg.probe_intervention.empty())
        throw ConfigError("probe requires probe.intervention (kind:band:lo-hi[:T=...])");
    cfg.validate();
    probe::Intervention iv =
        probe::parse_intervention_spec(cfg.probe_intervention, cfg.train_side, cfg.steps);

    model::ModelConfig mc = cfg.to_model_config();
    model::GenerationPlan base_plan = cfg.to_plan();
    refstore::ReferenceEntropyStore store;
    std::string ref_hash_line;
    if (!cfg.ref_path.empty()) {
        store = load_reference(cfg, ref_hash_line);
        base_plan.reference = &store;
    }
    if (cfg.calibrate && cfg.ref_path.empty())
        throw MissingArtifactError(
            "plan.calibrate = on requires plan.ref (capture one with capture-ref)");
    model::GenerationPlan probed_plan = probe::apply_intervention(base_plan, iv, cfg.steps);

    model::GenerationResult base = model::generate(mc, base_plan);
    model::GenerationResult probed = model::generate(mc, probed_plan);

    std::vector<rope::FrequencyTable> tables = rope::banded_tables(cfg.to_rope_config());

    std::string freqs = "step,axis,j,theta_base,theta_probe\n";
    for (size_t s = 0; s < base.trace.steps.size(); ++s) {
        const auto& bs = base.trace.steps[s];
        const auto& ps = probed.trace.steps[s];
        for (size_t a = 0; a < bs.freqs.size(); ++a)
            for (size_t j = 0; j < bs.freqs[a].size(); ++j)
                freqs += std::to_string(bs.step) + ',' + rope::axis_name(tables[a].axis) + ',' +
                         std::to_string(j + 1) + ',' + format_double(bs.freqs[a][j]) + ',' +
                         format_double(ps.freqs[a][j]) + '\n';
    }

    constexpr rope::Band kBands[] = {rope::Band::high, rope::Band::mid, rope::Band::low,
                                     rope::Band::very_low};
    std::string norms = "step,band,mean_norm_base,mean_norm_probe\n";
    for (size_t s = 0; s < base.trace.steps.size(); ++s) {
        const auto& bs = base.trace.steps[s];
        const auto& ps = probed.trace.steps[s];
        for (int b = 0; b < 4; ++b)
            norms += std::to_string(bs.step) + ',' + rope::band_name(kBands[b]) + ',' +
                     format_double(bs.band_norms[b]) + ',' +
                     format_double(ps.band_norms[b]) + '\n';
    }

    fs::path manifest = out_dir / "manifest.txt";
    write_file_bytes(manifest, cfg.manifest_text() + ref_hash_line);
    fs::path freqs_path = out_dir / "probe_freqs.csv";
    write_file_bytes(freqs_path, freqs);
    fs::path norms_path = out_dir / "probe_norms.csv";
    write_file_bytes(norms_path, norms);
    return {manifest, freqs_path, norms_path};
}

int exit_code_for(const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (dynamic_cast<const MissingArtifactError*>(&e))
        return 3;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e))
        return 2;
    return 4;
}

} // namespace extravar::cli
