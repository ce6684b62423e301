#include "coview/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "coview/image_io.hpp"

namespace coview {
namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(bool(f), ErrorKind::Io, "cannot write " + path.string());
  f << text;
  require(bool(f), ErrorKind::Io, "write failed: " + path.string());
}

// series,x,y rows for every point.
std::string series_csv(const std::vector<Series>& series, const std::string& x_name,
                       const std::string& y_name) {
  std::ostringstream os;
  os << "series," << x_name << ',' << y_name << '\n';
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) os << s.label << ',' << num(s.x[i]) << ',' << num(s.y[i]) << '\n';
  return os.str();
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const ChartSpec& spec) {
  require(spec.x_max > spec.x_min && spec.y_max > spec.y_min, ErrorKind::Parameter,
          "chart ranges must be non-empty");
  const double left = 60, right = 140, top = 36, bottom = 48;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - spec.x_min) / (spec.x_max - spec.x_min) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - spec.y_min) / (spec.y_max - spec.y_min)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
     << spec.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(spec.title) << "</text>\n";

  // Grid and ticks, 5 divisions per axis.
  for (int i = 0; i <= 5; ++i) {
    const double xv = spec.x_min + (spec.x_max - spec.x_min) * i / 5.0;
    const double yv = spec.y_min + (spec.y_max - spec.y_min) * i / 5.0;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(px(xv))
       << "\" y2=\"" << num(top + ph) << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(left + pw)
       << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + ph + 14)
       << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(yv) + 4)
       << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
     << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << spec.height - 10
     << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << num(top + ph / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label) << "</text>\n";

  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    require(s.x.size() == s.y.size(), ErrorKind::Shape, "series x and y lengths differ");
    const char* color = kPalette[k % std::size(kPalette)];
    if (!s.x.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i)
        os << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      os << "\"/>\n";
    }
    const double ly = top + 12 + 16 * double(k);
    os << "<line x1=\"" << num(left + pw + 10) << "\" y1=\"" << num(ly) << "\" x2=\""
       << num(left + pw + 28) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(left + pw + 32) << "\" y=\"" << num(ly + 4) << "\">"
       << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string report_label(const EvalReport& report) {
  std::string label = report.method.empty() ? "report" : report.method;
  if (!report.model.empty()) label += " (" + fs::path(report.model).filename().string() + ")";
  return label;
}

PlotFiles write_report_plots(const std::vector<EvalReport>& reports, const fs::path& out_dir) {
  require(!reports.empty(), ErrorKind::EmptyData, "no reports to plot");
  fs::create_directories(out_dir);
  PlotFiles files;

  std::vector<Series> iou;
  double max_len = 2;
  for (const auto& r : reports) {
    Series s{report_label(r), {}, {}};
    for (size_t len = 2; len < r.iou_vs_length.size(); ++len) {
      s.x.push_back(double(len));
      s.y.push_back(r.iou_vs_length[len]);
      max_len = std::max(max_len, double(len));
    }
    iou.push_back(std::move(s));
  }
  ChartSpec ic{"IoU vs sequence length", "sequence length (frames)", "mean IoU", 2, max_len, 0, 1};
  if (ic.x_max <= ic.x_min) ic.x_max = ic.x_min + 1;
  write_file(out_dir / "iou_vs_length.svg", line_chart_svg(iou, ic));
  write_file(out_dir / "iou_vs_length.csv", series_csv(iou, "length", "iou"));
  files.written = {out_dir / "iou_vs_length.svg", out_dir / "iou_vs_length.csv"};

  std::vector<Series> pr;
  for (const auto& r : reports) {
    if (!r.has_matching || r.pr.empty()) continue;
    Series s{report_label(r), {}, {}};
    for (const auto& p : r.pr) {
      s.x.push_back(p.recall);
      s.y.push_back(p.precision);
    }
    pr.push_back(std::move(s));
  }
  if (!pr.empty()) {
    const ChartSpec pc{"Precision-recall", "recall", "precision"};
    write_file(out_dir / "pr.svg", line_chart_svg(pr, pc));
    write_file(out_dir / "pr.csv", series_csv(pr, "recall", "precision"));
    files.written.push_back(out_dir / "pr.svg");
    files.written.push_back(out_dir / "pr.csv");
  }
  return files;
}

std::vector<uint8_t> overlay_rgb(const Frame& frame, const Mask& predicted, const Mask* truth) {
  require(frame.same_size(predicted) && (!truth || frame.same_size(*truth)), ErrorKind::Shape,
          "overlay: frame and mask sizes differ");
  const int w = frame.width(), h = frame.height();
  std::vector<uint8_t> rgb(size_t(w) * h * 3);
  auto on_edge = [&](int y, int x) {
    if (!truth || !truth->at(y, x)) return false;
    for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
      const int yy = y + dy, xx = x + dx;
      if (yy < 0 || yy >= h || xx < 0 || xx >= w || !truth->at(yy, xx)) return true;
    }
    return false;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float c[3];
      for (int k = 0; k < 3; ++k) c[k] = frame.at(k, y, x);
      if (predicted.at(y, x)) {
        c[0] = 0.5f * c[0] + 0.5f;
        c[1] *= 0.5f;
        c[2] *= 0.5f;
      }
      if (on_edge(y, x)) {
        c[0] = 0;
        c[1] = 1;
        c[2] = 0;
      }
      for (int k = 0; k < 3; ++k)
        rgb[(size_t(y) * w + x) * 3 + k] = uint8_t(std::lround(std::clamp(c[k], 0.0f, 1.0f) * 255));
    }
  return rgb;
}

int write_overlays(const Dataset& data, const EvalReport& report, const fs::path& predictions_dir,
                   const fs::path& out_dir) {
  int count = 0;
  for (const auto& s : report.sequences) {
    const Sequence& seq = data.view(s.scene, s.view);
    char name[64];
    std::snprintf(name, sizeof name, "seq_%03d_%d_%d", s.scene, s.view, s.identity);
    const fs::path in = predictions_dir / name;
    require(fs::is_directory(in), ErrorKind::Integrity, "missing predictions: " + in.string());
    fs::create_directories(out_dir / name);
    for (int t = 0; t < seq.num_frames(); ++t) {
      char file[32];
      std::snprintf(file, sizeof file, "mask_%03d.png", t);
      const LabelMap raw = read_gray_png(in / file);
      require(seq.frames[t].same_size(raw), ErrorKind::Integrity,
              "prediction size differs from the frame: " + (in / file).string());
      Mask pred(raw.width(), raw.height());
      for (size_t k = 0; k < raw.data().size(); ++k) pred.data()[k] = raw.data()[k] >= 128;
      const PersonInstance* gt = seq.find(t, s.identity);
      const Mask* truth = gt && gt->gt_mask ? &*gt->gt_mask : nullptr;
      std::snprintf(file, sizeof file, "overlay_%03d.png", t);
      write_rgb_png(out_dir / name / file, pred.width(), pred.height(),
                    overlay_rgb(seq.frames[t], pred, truth));
      ++count;
    }
  }
  return count;
}

}  // namespace coview
