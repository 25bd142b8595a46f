#pragma once

// File formats: headerless matrix CSV (17 significant digits), binary PGM (P5)
// heatmaps, and flat key=value manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maskpos/experiments.hpp"
#include "maskpos/matrix.hpp"

namespace maskpos::io {

std::string format_csv(const Matrix& m);
Matrix parse_csv(const std::string& text);
void write_csv(const Matrix& m, const std::filesystem::path& path);
Matrix read_csv(const std::filesystem::path& path);

// Grayscale heatmap. Row 0 is the top of the image (query 1), column 0 the left (key 1).
// Range and quantiles come from the valid cells; with `causal` the upper triangle
// is excluded and painted 0. Pixels are round-half-up of (v - min) / (max - min) * 255;
// a degenerate range paints every valid cell 255.
std::vector<std::uint8_t> render_pgm(const Matrix& m, double q_low, double q_high, bool causal);
void write_pgm(const Matrix& m, const std::filesystem::path& path, double q_low, double q_high,
               bool causal);

using Manifest = std::map<std::string, std::string>;

std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
Manifest manifest_for(const experiments::ExperimentSpec& spec);
experiments::ExperimentSpec spec_from_manifest(const Manifest& manifest);

// Runs the experiment and writes its artifacts into `dir`. Refuses to replace
// existing files unless `force`. Returns the paths written.
std::vector<std::filesystem::path> simulate_to_dir(const experiments::ExperimentSpec& spec,
                                                    const std::filesystem::path& dir, bool force,
                                                    unsigned workers = 0);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace maskpos::io
