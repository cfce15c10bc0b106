#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "streambin/harness.hpp"

namespace streambin::harness {

namespace {

struct Rgb {
  int r, g, b;
};

const Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                        {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};

struct Series {
  std::string name;
  Rgb color;
  bool dashed = false;
  std::vector<std::pair<double, double>> points;
};

struct Chart {
  std::string title;
  std::string ylabel;
  double xmax = 1.0;
  double ymin = 0.0;
  double ymax = 1.0;
  std::vector<Series> series;
};

constexpr int kWidth = 960;
constexpr int kHeight = 540;
constexpr int kLeft = 70;
constexpr int kRight = 180;
constexpr int kTop = 40;
constexpr int kBottom = 50;

double px(const Chart& c, double x) { return kLeft + (kWidth - kLeft - kRight) * x / c.xmax; }
double py(const Chart& c, double y) {
  return kTop + (kHeight - kTop - kBottom) * (1.0 - (y - c.ymin) / (c.ymax - c.ymin));
}

std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9; v += step) out.push_back(std::abs(v) < 1e-12 ? 0 : v);
  return out;
}

std::string label(double v) {
  std::string s = fixed(v, 2);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

Chart build(const std::vector<protocol::MetricsFrame>& frames, PlotKind kind) {
  Chart c;
  for (const auto& f : frames) c.xmax = std::max(c.xmax, f.t);
  std::map<std::string, std::size_t> worker_slot;
  for (const auto& f : frames)
    for (const auto& w : f.per_worker) worker_slot.emplace(w.worker_id, worker_slot.size());

  const auto palette = [](std::size_t i) { return kPalette[i % std::size(kPalette)]; };
  switch (kind) {
    case PlotKind::cpu_per_worker: {
      c.title = "CPU per worker (solid: scheduled, dashed: measured)";
      c.ylabel = "CPU fraction";
      c.ymax = 1.05;
      for (const auto& [id, slot] : worker_slot) {
        Series sched{id + " scheduled", palette(slot), false, {}};
        Series meas{id + " measured", palette(slot), true, {}};
        for (const auto& f : frames) {
          for (const auto& w : f.per_worker) {
            if (w.worker_id != id) continue;
            sched.points.emplace_back(f.t, w.scheduled_cpu);
            meas.points.emplace_back(f.t, w.measured_cpu);
          }
        }
        c.series.push_back(std::move(sched));
        c.series.push_back(std::move(meas));
      }
      break;
    }
    case PlotKind::error: {
      c.title = "Scheduled minus measured CPU";
      c.ylabel = "error (pp)";
      double lim = 10.0;
      for (const auto& [id, slot] : worker_slot) {
        Series s{id, palette(slot), false, {}};
        for (const auto& f : frames) {
          for (const auto& w : f.per_worker) {
            if (w.worker_id != id) continue;
            s.points.emplace_back(f.t, w.error_pp);
            lim = std::max(lim, std::abs(w.error_pp));
          }
        }
        c.series.push_back(std::move(s));
      }
      c.ymin = -lim * 1.05;
      c.ymax = lim * 1.05;
      break;
    }
    case PlotKind::workers: {
      c.title = "Workers";
      c.ylabel = "count";
      Series active{"active", kPalette[0], false, {}};
      Series target{"target", kPalette[1], true, {}};
      Series ideal{"ideal bins", kPalette[2], false, {}};
      double top = 1.0;
      for (const auto& f : frames) {
        active.points.emplace_back(f.t, f.active_workers);
        target.points.emplace_back(f.t, f.target_workers);
        ideal.points.emplace_back(f.t, f.ideal_bins);
        top = std::max({top, double(f.active_workers), double(f.target_workers), double(f.ideal_bins)});
      }
      c.series = {active, target, ideal};
      c.ymax = top + 1.0;
      break;
    }
  }
  return c;
}

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

void write_svg(const Chart& c, const std::filesystem::path& out) {
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(c.title)
    << "</text>\n";
  for (double v : ticks(c.ymin, c.ymax)) {
    f << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << fixed(py(c, v), 1) << "\" y2=\""
      << fixed(py(c, v), 1) << "\" stroke=\"#dddddd\"/>\n";
    f << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(c, v) + 4, 1) << "\" text-anchor=\"end\">" << label(v)
      << "</text>\n";
  }
  for (double v : ticks(0, c.xmax)) {
    f << "<text x=\"" << fixed(px(c, v), 1) << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">"
      << label(v) << "</text>\n";
  }
  f << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
    << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
    << "\" text-anchor=\"middle\">time (s)</text>\n";
  f << "<text transform=\"translate(18," << kHeight / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(c.ylabel) << "</text>\n";
  int legend_y = kTop + 10;
  for (const auto& s : c.series) {
    if (!s.points.empty()) {
      f << "<polyline fill=\"none\" stroke=\"" << hex(s.color) << "\" stroke-width=\"1.5\"";
      if (s.dashed) f << " stroke-dasharray=\"5,3\"";
      f << " points=\"";
      for (const auto& [x, y] : s.points) f << fixed(px(c, x), 1) << ',' << fixed(py(c, y), 1) << ' ';
      f << "\"/>\n";
    }
    const int lx = kWidth - kRight + 12;
    f << "<line x1=\"" << lx << "\" x2=\"" << lx + 20 << "\" y1=\"" << legend_y << "\" y2=\"" << legend_y
      << "\" stroke=\"" << hex(s.color) << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"5,3\"" : "")
      << "/>\n";
    f << "<text x=\"" << lx + 26 << "\" y=\"" << legend_y + 4 << "\">" << escape(s.name) << "</text>\n";
    legend_y += 16;
  }
  f << "</svg>\n";
}

void write_png(const Chart& c, const std::filesystem::path& out) {
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  const auto bgr = [](Rgb c) { return cv::Scalar(c.b, c.g, c.r); };
  const auto pt = [&](double x, double y) { return cv::Point(int(std::lround(px(c, x))), int(std::lround(py(c, y)))); };
  const auto text = [&](const std::string& s, cv::Point at, double scale = 0.4) {
    cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  };
  text(c.title, {kLeft, 26}, 0.55);
  for (double v : ticks(c.ymin, c.ymax)) {
    const int y = int(std::lround(py(c, v)));
    cv::line(img, {kLeft, y}, {kWidth - kRight, y}, cv::Scalar(221, 221, 221), 1);
    text(label(v), {8, y + 4});
  }
  for (double v : ticks(0, c.xmax)) text(label(v), {int(px(c, v)) - 8, kHeight - kBottom + 18});
  cv::rectangle(img, {kLeft, kTop}, {kWidth - kRight, kHeight - kBottom}, cv::Scalar(0, 0, 0), 1);
  text("time (s)   y: " + c.ylabel, {(kLeft + kWidth - kRight) / 2 - 60, kHeight - 12});
  int legend_y = kTop + 10;
  for (const auto& s : c.series) {
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      if (s.dashed && i % 2 == 0) continue;
      cv::line(img, pt(s.points[i - 1].first, s.points[i - 1].second), pt(s.points[i].first, s.points[i].second),
               bgr(s.color), 1, cv::LINE_AA);
    }
    const int lx = kWidth - kRight + 12;
    cv::line(img, {lx, legend_y}, {lx + (s.dashed ? 10 : 20), legend_y}, bgr(s.color), 2);
    text(s.name, {lx + 26, legend_y + 4});
    legend_y += 16;
  }
  if (!cv::imwrite(out.string(), img)) throw std::runtime_error("cannot write " + out.string());
}

}  // namespace

PlotKind plot_kind_from_string(std::string_view s) {
  if (s == "cpu_per_worker" || s == "cpu") return PlotKind::cpu_per_worker;
  if (s == "error") return PlotKind::error;
  if (s == "workers") return PlotKind::workers;
  throw std::invalid_argument("unknown plot kind '" + std::string(s) + "' (cpu_per_worker, error, workers)");
}

void plot(const std::filesystem::path& metrics_csv, PlotKind kind, const std::filesystem::path& out) {
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error("cannot open " + metrics_csv.string());
  const Chart c = build(read_metrics_csv(in), kind);
  const auto ext = out.extension().string();
  if (ext == ".svg") {
    write_svg(c, out);
  } else if (ext == ".png") {
    write_png(c, out);
  } else {
    throw std::invalid_argument("plot output must end in .png or .svg");
  }
}

}  // namespace streambin::harness
