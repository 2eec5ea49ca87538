#ifndef SEMSHIFT_CHART_HPP
#define SEMSHIFT_CHART_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace semshift {

struct ChartSeries {
  std::string label;
  std::vector<double> values;  // one per x position; NaN breaks the line
};

struct ChartSpec {
  std::string title;
  std::vector<std::string> x_labels;  // may contain '\n' for two-line labels
  std::vector<ChartSeries> series;
  std::string y_label = "BCD";
};

/// Minimal polyline chart: axes, ticks, legend, one polyline per series.
/// CSV stays the source of truth; this is a convenience rendering.
std::string render_line_chart_svg(const ChartSpec& spec);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws DataError
  bool has_column(const std::string& name) const;
};

/// Reads an unquoted comma-separated file with a header row (the dialect
/// this tool emits).
CsvTable read_csv(const std::filesystem::path& path);

/// Builds the sweep-style chart from a CSV produced by this tool: x axis is
/// tau with retained percentages in parentheses, one series per requested
/// column (default: every column whose name starts with "bcd").
ChartSpec chart_from_csv(const CsvTable& table,
                         const std::vector<std::string>& columns,
                         const std::string& title);

}  // namespace semshift

#endif  // SEMSHIFT_CHART_HPP
