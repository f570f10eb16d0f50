#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tapnet/dataio.hpp"

namespace tapnet::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  float r = 0, g = 0, b = 0;
};

/// Line chart with axes and numeric tick labels.
dataio::Image line_chart(const std::vector<Series>& series, int width = 640, int height = 400);

/// (step, total) pairs of a line-delimited loss log. Blank lines are skipped;
/// malformed lines raise DataError naming the line number; an empty log is an error.
Series read_loss_log(const std::filesystem::path& path);

/// Writes loss_vs_step.png for a loss log or f1_vs_threshold.png for a
/// metrics report into `out_dir`; returns the written files.
std::vector<std::filesystem::path> plot_file(const std::filesystem::path& in,
                                             const std::filesystem::path& out_dir);

}  // namespace tapnet::plot
