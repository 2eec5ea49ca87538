#include "semshift/chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "semshift/error.hpp"

namespace semshift {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 160.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 60.0;

const char* kPalette[] = {"#e4712d", "#3b6fb6", "#c03434",
                          "#3f9b58", "#8455b0", "#666666"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_line_chart_svg(const ChartSpec& spec) {
  const std::size_t n = spec.x_labels.size();
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const ChartSeries& s : spec.series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!any) {
    lo = 0.0;
    hi = 1.0;
  }
  if (lo > 0.0) lo = 0.0;  // anchor at zero like the reference figures
  if (hi <= lo) hi = lo + 1.0;
  const double span = hi - lo;
  hi += 0.05 * span;

  const double plot_w = kWidth - kMarginLeft - kMarginRight;
  const double plot_h = kHeight - kMarginTop - kMarginBottom;
  auto x_of = [&](std::size_t i) {
    if (n <= 1) return kMarginLeft + plot_w / 2;
    return kMarginLeft + plot_w * static_cast<double>(i) /
                             static_cast<double>(n - 1);
  };
  auto y_of = [&](double v) {
    return kMarginTop + plot_h * (1.0 - (v - lo) / (hi - lo));
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
      << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << escape_xml(spec.title) << "</text>\n";

  // Axes.
  svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h
      << "\" x2=\"" << kMarginLeft + plot_w << "\" y2=\""
      << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop
      << "\" x2=\"" << kMarginLeft << "\" y2=\"" << kMarginTop + plot_h
      << "\" stroke=\"black\"/>\n";

  // Horizontal gridlines and y ticks.
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const double y = y_of(v);
    svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << y << "\" x2=\""
        << kMarginLeft + plot_w << "\" y2=\"" << y
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt(v) << "</text>\n";
  }
  svg << "<text x=\"16\" y=\"" << kMarginTop + plot_h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 "
      << kMarginTop + plot_h / 2 << ")\">" << escape_xml(spec.y_label)
      << "</text>\n";

  // X tick labels, optionally two lines (tau plus retained percentage).
  for (std::size_t i = 0; i < n; ++i) {
    const double x = x_of(i);
    std::istringstream lines(spec.x_labels[i]);
    std::string line;
    int row = 0;
    while (std::getline(lines, line)) {
      svg << "<text x=\"" << x << "\" y=\""
          << kMarginTop + plot_h + 16 + row * 13
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
             "font-size=\"11\">"
          << escape_xml(line) << "</text>\n";
      ++row;
    }
  }

  // Series polylines (split at NaN gaps) and legend.
  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const ChartSeries& series = spec.series[s];
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    std::ostringstream points;
    bool open = false;
    auto flush_line = [&]() {
      if (open) {
        svg << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"" << points.str() << "\"/>\n";
      }
      points.str("");
      open = false;
    };
    for (std::size_t i = 0; i < std::min(n, series.values.size()); ++i) {
      const double v = series.values[i];
      if (!std::isfinite(v)) {
        flush_line();
        continue;
      }
      points << x_of(i) << ',' << y_of(v) << ' ';
      open = true;
      svg << "<circle cx=\"" << x_of(i) << "\" cy=\"" << y_of(v)
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    flush_line();

    const double ly = kMarginTop + 16.0 * static_cast<double>(s);
    svg << "<line x1=\"" << kMarginLeft + plot_w + 12 << "\" y1=\"" << ly
        << "\" x2=\"" << kMarginLeft + plot_w + 36 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kMarginLeft + plot_w + 42 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape_xml(series.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError("CSV has no column named \"" + name + "\"");
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable table;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : s) {
      if (c == ',') {
        fields.push_back(field);
        field.clear();
      } else if (c != '\r') {
        field += c;
      }
    }
    fields.push_back(field);
    return fields;
  };
  if (!std::getline(in, line)) {
    throw DataError("CSV " + path.string() + " is empty");
  }
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != table.header.size()) {
      throw DataError("CSV row has " + std::to_string(fields.size()) +
                      " fields, header has " +
                      std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

ChartSpec chart_from_csv(const CsvTable& table,
                         const std::vector<std::string>& columns,
                         const std::string& title) {
  ChartSpec spec;
  spec.title = title;

  std::vector<std::string> wanted = columns;
  if (wanted.empty()) {
    for (const std::string& name : table.header) {
      if (name.rfind("bcd", 0) == 0) wanted.push_back(name);
    }
  }
  if (wanted.empty()) {
    throw DataError("no chartable columns found");
  }

  const bool has_tau = table.has_column("tau");
  const std::size_t tau_col = has_tau ? table.column("tau") : 0;
  const bool has_retained = table.has_column("retained_fraction");
  const std::size_t retained_col =
      has_retained ? table.column("retained_fraction") : 0;

  for (const auto& row : table.rows) {
    std::string label = has_tau ? row[tau_col] : row[0];
    if (has_retained) {
      char pct[32];
      std::snprintf(pct, sizeof pct, "(%.0f%%)",
                    100.0 * std::strtod(row[retained_col].c_str(), nullptr));
      label += "\n";
      label += pct;
    }
    spec.x_labels.push_back(std::move(label));
  }
  for (const std::string& name : wanted) {
    ChartSeries series;
    series.label = name;
    const std::size_t col = table.column(name);
    for (const auto& row : table.rows) {
      series.values.push_back(std::strtod(row[col].c_str(), nullptr));
    }
    spec.series.push_back(std::move(series));
  }
  return spec;
}

}  // namespace semshift
