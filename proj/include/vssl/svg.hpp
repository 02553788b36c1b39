#pragma once

#include <string>
#include <utility>
#include <vector>

namespace vssl {

struct ChartSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;  // (x, y), pre-sorted by x
};

// Minimal SVG line chart: axes with tick labels, one polyline per series and
// a legend. Textual and dependency-free by design.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<ChartSeries>& series);

}  // namespace vssl
