#include "protonc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "protonc/errors.hpp"

namespace protonc {

namespace {

constexpr double kPanelW = 440.0;
constexpr double kPanelH = 320.0;
constexpr double kMarginL = 60.0;
constexpr double kMarginR = 20.0;
constexpr double kMarginT = 60.0;
constexpr double kMarginB = 50.0;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void render_panel(std::ostringstream& svg, const Panel& panel, double x0) {
  double xmin = std::numeric_limits<double>::infinity();
  double xmax = -xmin;
  double ymin = xmin;
  double ymax = -xmin;
  for (const auto& s : panel.series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double left = x0 + kMarginL;
  const double right = x0 + kPanelW - kMarginR;
  const double top = kMarginT;
  const double bottom = kPanelH - kMarginB;
  const auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  const auto sy = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  svg << "  <g>\n";
  svg << "    <text x=\"" << px((left + right) / 2) << "\" y=\"" << px(top - 28)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << escape(panel.title) << "</text>\n";
  svg << "    <rect x=\"" << px(left) << "\" y=\"" << px(top) << "\" width=\"" << px(right - left)
      << "\" height=\"" << px(bottom - top) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  svg << "    <text x=\"" << px(left) << "\" y=\"" << px(bottom + 16) << "\" font-size=\"10\">"
      << num(xmin) << "</text>\n";
  svg << "    <text x=\"" << px(right) << "\" y=\"" << px(bottom + 16)
      << "\" text-anchor=\"end\" font-size=\"10\">" << num(xmax) << "</text>\n";
  svg << "    <text x=\"" << px(left - 4) << "\" y=\"" << px(bottom)
      << "\" text-anchor=\"end\" font-size=\"10\">" << num(ymin) << "</text>\n";
  svg << "    <text x=\"" << px(left - 4) << "\" y=\"" << px(top + 10)
      << "\" text-anchor=\"end\" font-size=\"10\">" << num(ymax) << "</text>\n";
  svg << "    <text x=\"" << px((left + right) / 2) << "\" y=\"" << px(bottom + 34)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(panel.x_label) << "</text>\n";
  svg << "    <text x=\"" << px(x0 + 14) << "\" y=\"" << px((top + bottom) / 2)
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " << px(x0 + 14) << " "
      << px((top + bottom) / 2) << ")\">" << escape(panel.y_label) << "</text>\n";

  for (std::size_t i = 0; i < panel.series.size(); ++i) {
    const auto& s = panel.series[i];
    const char* color = kColors[i % 4];
    svg << "    <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k) {
      if (k) svg << ' ';
      svg << px(sx(s.points[k].first)) << ',' << px(sy(s.points[k].second));
    }
    svg << "\"/>\n";
    const double ly = top - 14 + 0.0;
    const double lx = left + static_cast<double>(i) * 110.0;
    svg << "    <rect x=\"" << px(lx) << "\" y=\"" << px(ly - 8) << "\" width=\"14\" height=\"3\" fill=\""
        << color << "\"/>\n";
    svg << "    <text x=\"" << px(lx + 18) << "\" y=\"" << px(ly - 3) << "\" font-size=\"11\">"
        << escape(s.label) << "</text>\n";
  }
  svg << "  </g>\n";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace

std::string render_svg(const std::string& title, const std::vector<Panel>& panels) {
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << px(width)
      << "\" height=\"" << px(kPanelH) << "\" viewBox=\"0 0 " << px(width) << " " << px(kPanelH)
      << "\">\n";
  svg << "  <title>" << escape(title) << "</title>\n";
  svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    render_panel(svg, panels[i], kPanelW * static_cast<double>(i));
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> write_training_plots(const std::vector<EpochReport>& rows,
                                                        const std::filesystem::path& out_dir) {
  const auto series = [&rows](const std::string& label, RunMode split, double EpochReport::*field) {
    Series s{label, {}};
    for (const auto& r : rows)
      if (r.split == split) s.points.emplace_back(static_cast<double>(r.epoch), r.*field);
    return s;
  };
  const auto collapse = [&](RunMode split) {
    return std::vector<Panel>{
        Panel{"NC1 (within-class variability)", "epoch", "NC1",
              {series("support", split, &EpochReport::nc1_support),
               series("query", split, &EpochReport::nc1_query)}},
        Panel{"NC2 (distance to simplex ETF)", "epoch", "NC2",
              {series("support", split, &EpochReport::nc2_support),
               series("query", split, &EpochReport::nc2_query)}}};
  };

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto emit = [&](const std::string& name, const std::string& title,
                        const std::vector<Panel>& panels) {
    const auto path = out_dir / name;
    write_file(path, render_svg(title, panels));
    written.push_back(path);
  };
  emit("loss_error.svg", "Error and loss",
       {Panel{"Query error", "epoch", "error",
              {series("train", RunMode::train, &EpochReport::error),
               series("val", RunMode::eval, &EpochReport::error)}},
        Panel{"Loss", "epoch", "loss",
              {series("train", RunMode::train, &EpochReport::loss),
               series("val", RunMode::eval, &EpochReport::loss)}}});
  emit("collapse_train.svg", "Collapse metrics (train)", collapse(RunMode::train));
  emit("collapse_val.svg", "Collapse metrics (validation)", collapse(RunMode::eval));
  return written;
}

}  // namespace protonc
