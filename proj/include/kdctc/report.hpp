#pragma once

#include <filesystem>

namespace kdctc {

// Renders a results directory into out_dir: a per-method x per-percentage
// accuracy table (plain text + CSV, mean +/- std over seeds) and one raw
// count matrix plus heatmap image per run's confusion matrix. Byte-stable
// for the same inputs.
void write_report(const std::filesystem::path& results_dir, const std::filesystem::path& out_dir);

}  // namespace kdctc
