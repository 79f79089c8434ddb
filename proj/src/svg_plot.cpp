#include "compass/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "compass/errors.hpp"
#include "compass/metrics.hpp"

namespace compass {
namespace {

constexpr const char* kTraceColumns = "planner,run,seed,step,avg_unc";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<TraceSeries> load_traces(const std::filesystem::path& dir, std::vector<std::string>* headers) {
  if (!std::filesystem::is_directory(dir)) throw InputError("trace directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  // planner -> run key (file + run id) -> per-step values
  std::map<std::string, std::map<std::string, std::vector<double>>> runs;
  std::vector<std::string> seen_headers;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    std::string meta;
    bool columns = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        meta = line;
        continue;
      }
      if (!columns) {
        if (line != kTraceColumns) break;
        columns = true;
        if (!meta.empty() && std::find(seen_headers.begin(), seen_headers.end(), meta) == seen_headers.end()) {
          seen_headers.push_back(meta);
        }
        continue;
      }
      const auto cells = split(line, ',');
      if (cells.size() != 5) throw InputError(file.string() + ": malformed trace row '" + line + "'");
      auto& values = runs[cells[0]][file.string() + "#" + cells[1]];
      const std::size_t step = std::stoul(cells[3]);
      if (step != values.size() + 1) throw InputError(file.string() + ": steps out of order");
      values.push_back(std::stod(cells[4]));
    }
  }
  if (runs.empty()) throw InputError("no trace CSVs found in " + dir.string());

  std::vector<TraceSeries> out;
  for (const auto& [planner, by_run] : runs) {
    TraceSeries s;
    s.planner = planner;
    s.runs = static_cast<int>(by_run.size());
    const std::size_t steps = by_run.begin()->second.size();
    for (const auto& [key, values] : by_run) {
      if (values.size() != steps) throw InputError("runs of planner " + planner + " differ in length");
    }
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> v;
      for (const auto& [key, values] : by_run) v.push_back(values[t]);
      const auto m = summarize(v);
      s.mean.push_back(m.mean);
      s.std.push_back(m.std);
    }
    out.push_back(std::move(s));
  }
  if (headers) *headers = seen_headers;
  return out;
}

std::string render_svg(const std::vector<TraceSeries>& series, const std::string& comment) {
  const double width = 640, height = 400;
  const double left = 60, right = 150, top = 20, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  std::size_t steps = 1;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    steps = std::max(steps, s.mean.size());
    for (std::size_t t = 0; t < s.mean.size(); ++t) {
      lo = std::min(lo, s.mean[t] - s.std[t]);
      hi = std::max(hi, s.mean[t] + s.std[t]);
    }
  }
  if (!(hi > lo)) {
    lo = (lo > 1e299 ? 0.0 : lo) - 0.5;
    hi = lo + 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto x = [&](std::size_t t) { return left + (steps > 1 ? pw * t / (steps - 1) : pw / 2); };
  auto y = [&](double v) { return top + ph * (hi - v) / (hi - lo); };

  std::ostringstream o;
  o << "<!-- " << comment << " -->\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4;
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(y(v) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
      << num(v) << "</text>\n";
  }
  for (std::size_t t = 0; t < steps; t += std::max<std::size_t>(1, steps / 6)) {
    o << "<text x=\"" << num(x(t)) << "\" y=\"" << top + ph + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
      << t + 1 << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
    << "\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
  o << "<text x=\"14\" y=\"" << top + ph / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << top + ph / 2 << ")\">avg uncertainty</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    if (s.mean.empty()) continue;
    o << "<path class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" d=\"";
    for (std::size_t t = 0; t < s.mean.size(); ++t) {
      o << (t == 0 ? "M" : " L") << num(x(t)) << ',' << num(y(s.mean[t] + s.std[t]));
    }
    for (std::size_t t = s.mean.size(); t-- > 0;) o << " L" << num(x(t)) << ',' << num(y(s.mean[t] - s.std[t]));
    o << " Z\"/>\n";
    o << "<polyline class=\"mean\" data-planner=\"" << escape(s.planner) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    for (std::size_t t = 0; t < s.mean.size(); ++t) o << (t ? " " : "") << num(x(t)) << ',' << num(y(s.mean[t]));
    o << "\"/>\n";
    const double ly = top + 14 + 18 * i;
    o << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"" << color
      << "\"/>\n";
    o << "<text x=\"" << left + pw + 32 << "\" y=\"" << ly << "\" font-size=\"12\">" << escape(s.planner) << " (n="
      << s.runs << ")</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace compass
