#pragma once

// Uncertainty-vs-step curves from per-run trace CSVs, rendered as standalone
// SVG: one mean polyline and one shaded std band (a closed path) per planner.

#include <filesystem>
#include <string>
#include <vector>

namespace compass {

struct TraceSeries {
  std::string planner;
  int runs = 0;
  std::vector<double> mean;  ///< per step, across runs
  std::vector<double> std;   ///< population std
};

/// Reads every trace CSV (columns planner,run,seed,step,avg_unc) under `dir`,
/// in file-name order, skipping other files. Series are sorted by planner
/// name. `headers` receives the distinct metadata lines. Throws InputError if
/// nothing usable is found or runs of one planner differ in length.
std::vector<TraceSeries> load_traces(const std::filesystem::path& dir,
                                     std::vector<std::string>* headers = nullptr);

/// `comment` is embedded verbatim as an XML comment on the first line.
std::string render_svg(const std::vector<TraceSeries>& series, const std::string& comment);

}  // namespace compass
