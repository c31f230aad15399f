#pragma once

#include <string>
#include <vector>

namespace ftattr {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // band half-width; empty for no band
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  int width = 640;
  int height = 400;
};

// Line plot with shaded y +/- err bands and a legend. Non-finite points are skipped.
std::string line_plot_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

}  // namespace ftattr
