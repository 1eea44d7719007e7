#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "extravar/config.hpp"

namespace extravar::cli {

// Each command writes its artifacts under `out_dir` (created on demand) and
// returns every path it wrote, in a fixed order, so runs can be diffed
// file-by-file.  Errors surface as exceptions; exit_code_for maps them to
// the process exit contract.

// <out>/freq_table.csv: the banded per-axis frequency tables.  A non-empty
// axis filter ("one_d", "height", "width") keeps only that axis.
std::vector<std::filesystem::path> cmd_freq_table(const RunConfig& cfg,
                                                  const std::filesystem::path& out_dir,
                                                  const std::string& axis_filter = "");

// Capture per-(layer, head, step) entropies at the training resolution and
// save the store.  Destination: cfg.ref_path when set, otherwise
// <out>/refs/<config-hash>.entropy.  Refuses extended targets.
std::vector<std::filesystem::path> cmd_capture_ref(const RunConfig& cfg,
                                                   const std::filesystem::path& out_dir);

// Full generation run.  Writes manifest.txt (a valid config reproducing the
// run), trace.csv, bands.csv, one tokens_stepNN.txt grid per step, and
// attn/stepNN_layerL_headH.mat maps when attention is retained.
std::vector<std::filesystem::path> cmd_generate(const RunConfig& cfg,
                                                const std::filesystem::path& out_dir);

// Band intervention probe: one baseline run and one run with
// cfg.probe_intervention applied, same seed.  Writes manifest.txt,
// probe_freqs.csv (per step/axis/pair frequencies of both runs) and
// probe_norms.csv (per step/band mean query norms of both runs).
std::vector<std::filesystem::path> cmd_probe(const RunConfig& cfg,
                                             const std::filesystem::path& out_dir);

// 0 success; 2 bad configuration; 3 missing input artifact; 4 runtime
// failure.  Prints the error to stderr.
int exit_code_for(const std::exception& e);

} // namespace extravar::cli
