#pragma once

// Static figures: IoU against sequence length, precision-recall curves
// (SVG + CSV) and per-frame mask overlays (PNG).

#include <filesystem>
#include <string>
#include <vector>

#include "coview/dataset.hpp"
#include "coview/metrics.hpp"

namespace coview {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title, x_label, y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  int width = 480, height = 360;
};

// Self-contained SVG line chart; series get distinct colours in order.
std::string line_chart_svg(const std::vector<Series>& series, const ChartSpec& spec);

// Legend label for a report: "<method>" plus the model id when present.
std::string report_label(const EvalReport& report);

struct PlotFiles {
  std::vector<std::filesystem::path> written;
};

// iou_vs_length.{svg,csv}; pr.{svg,csv} when any report carries matching results.
PlotFiles write_report_plots(const std::vector<EvalReport>& reports,
                             const std::filesystem::path& out_dir);

// Frame with the predicted mask tinted red and the ground-truth outline green.
std::vector<uint8_t> overlay_rgb(const Frame& frame, const Mask& predicted, const Mask* truth);

// For every sequence of the report, reads predictions_dir/seq_<s>_<v>_<id>/mask_<t>.png
// and writes out_dir/seq_<s>_<v>_<id>/overlay_<t>.png. Returns the number of images.
int write_overlays(const Dataset& data, const EvalReport& report,
                   const std::filesystem::path& predictions_dir,
                   const std::filesystem::path& out_dir);

}  // namespace coview
