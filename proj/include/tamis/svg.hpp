#pragma once

#include <string>
#include <vector>

namespace tamis::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Polyline chart with axes, ticks and a legend. Non-finite points are skipped
/// and split the polyline.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series,
                       int width = 720, int height = 440);

}  // namespace tamis::svg
