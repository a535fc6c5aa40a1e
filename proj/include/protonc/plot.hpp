#pragma once

// Static SVG line charts for per-epoch training logs.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "protonc/trainer.hpp"

namespace protonc {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// One SVG 1.1 document with the panels laid out side by side. Every series
/// becomes one <polyline> and one legend entry, even when it has no points.
std::string render_svg(const std::string& title, const std::vector<Panel>& panels);

/// Writes loss_error.svg (error and loss, train vs val) plus collapse_train.svg
/// and collapse_val.svg (NC1 and NC2, support vs query). Returns the paths.
std::vector<std::filesystem::path> write_training_plots(const std::vector<EpochReport>& rows,
                                                        const std::filesystem::path& out_dir);

}  // namespace protonc
