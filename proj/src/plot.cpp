#include "nbscreen/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace nbscreen::plot {

namespace {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        return static_cast<int>(i);
      }
    }
    throw std::runtime_error("csv: missing column '" + name + "'");
  }
};

Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("csv: cannot open " + path);
  }
  Csv out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      fields.push_back(field);
    }
    if (line.back() == ',') {
      fields.emplace_back();
    }
    if (first) {
      out.header = fields;
      first = false;
    } else {
      out.rows.push_back(fields);
    }
  }
  if (first) {
    throw std::runtime_error("csv: empty file " + path);
  }
  if (out.rows.empty()) {
    throw std::runtime_error("csv: no data rows in " + path);
  }
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

std::string color_for(const std::string& method) {
  if (method == "mom") return "#1f77b4";
  if (method == "mle") return "#d62728";
  if (method == "transformer") return "#2ca02c";
  return "#7f7f7f";
}

// Minimal deterministic SVG builder with one linear plot area.
struct Panel {
  double x0, y0, w, h;  // pixel rect of the plot area
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

void draw_frame(std::ostringstream& svg, const Panel& p,
                const std::string& xlabel, const std::string& ylabel,
                const std::string& title, int ticks = 5) {
  svg << "<rect x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0) << "\" width=\""
      << fmt(p.w) << "\" height=\"" << fmt(p.h)
      << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= ticks; ++i) {
    const double fx = p.xmin + (p.xmax - p.xmin) * i / ticks;
    const double fy = p.ymin + (p.ymax - p.ymin) * i / ticks;
    const double xx = p.px(fx);
    const double yy = p.py(fy);
    svg << "<line x1=\"" << fmt(xx) << "\" y1=\"" << fmt(p.y0 + p.h)
        << "\" x2=\"" << fmt(xx) << "\" y2=\"" << fmt(p.y0 + p.h + 4)
        << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << fmt(xx) << "\" y=\"" << fmt(p.y0 + p.h + 16)
        << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(fx)
        << "</text>\n";
    svg << "<line x1=\"" << fmt(p.x0 - 4) << "\" y1=\"" << fmt(yy)
        << "\" x2=\"" << fmt(p.x0) << "\" y2=\"" << fmt(yy)
        << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << fmt(p.x0 - 6) << "\" y=\"" << fmt(yy + 3)
        << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(fy)
        << "</text>\n";
  }
  svg << "<text x=\"" << fmt(p.x0 + p.w / 2) << "\" y=\""
      << fmt(p.y0 + p.h + 32)
      << "\" font-size=\"12\" text-anchor=\"middle\">" << xlabel
      << "</text>\n";
  svg << "<text x=\"" << fmt(p.x0 - 40) << "\" y=\"" << fmt(p.y0 + p.h / 2)
      << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 "
      << fmt(p.x0 - 40) << " " << fmt(p.y0 + p.h / 2) << ")\">" << ylabel
      << "</text>\n";
  svg << "<text x=\"" << fmt(p.x0 + p.w / 2) << "\" y=\"" << fmt(p.y0 - 8)
      << "\" font-size=\"13\" text-anchor=\"middle\" font-weight=\"bold\">"
      << title << "</text>\n";
}

void write_svg(const std::string& path, int width, int height,
               const std::string& summary, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("svg: cannot write " + path);
  }
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<!-- " << summary << " -->\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n"
      << body << "</svg>\n";
}

}  // namespace

void plot_accuracy(const std::string& csv_path, const std::string& svg_path) {
  const Csv csv = read_csv(csv_path);
  const int c_method = csv.column("method");
  const int c_mu_true = csv.column("mu_true");
  const int c_beta_true = csv.column("beta_true");
  const int c_alpha_true = csv.column("alpha_true");
  const int c_mu_hat = csv.column("mu_hat");
  const int c_beta_hat = csv.column("beta_hat");
  const int c_alpha_hat = csv.column("alpha_hat");
  const int c_runtime = csv.column("runtime_ns");

  struct Acc {
    double se[3] = {0, 0, 0};
    double runtime = 0;
    double n = 0;
  };
  std::map<std::string, Acc> by_method;
  for (const auto& row : csv.rows) {
    Acc& a = by_method[row[static_cast<std::size_t>(c_method)]];
    const double dmu = std::stod(row[static_cast<std::size_t>(c_mu_hat)]) -
                       std::stod(row[static_cast<std::size_t>(c_mu_true)]);
    const double dbeta = std::stod(row[static_cast<std::size_t>(c_beta_hat)]) -
                         std::stod(row[static_cast<std::size_t>(c_beta_true)]);
    const double dalpha =
        std::stod(row[static_cast<std::size_t>(c_alpha_hat)]) -
        std::stod(row[static_cast<std::size_t>(c_alpha_true)]);
    a.se[0] += dmu * dmu;
    a.se[1] += dbeta * dbeta;
    a.se[2] += dalpha * dalpha;
    a.runtime += std::stod(row[static_cast<std::size_t>(c_runtime)]);
    a.n += 1.0;
  }

  double xmin = 1e300, xmax = -1e300, ymax = 0;
  struct Point {
    std::string method;
    int param;
    double log_runtime;
    double rmse;
  };
  std::vector<Point> points;
  for (const auto& [method, a] : by_method) {
    const double lr = std::log10(a.runtime / a.n);
    for (int k = 0; k < 3; ++k) {
      const double rmse = std::sqrt(a.se[k] / a.n);
      points.push_back({method, k, lr, rmse});
      ymax = std::max(ymax, rmse);
    }
    xmin = std::min(xmin, lr);
    xmax = std::max(xmax, lr);
  }
  if (xmax - xmin < 0.5) {
    const double mid = 0.5 * (xmax + xmin);
    xmin = mid - 0.25;
    xmax = mid + 0.25;
  }
  Panel panel{70, 40, 480, 360, xmin - 0.3, xmax + 0.3, 0.0, ymax * 1.1 + 1e-9};

  std::ostringstream body;
  draw_frame(body, panel, "log10 mean runtime (ns)", "RMSE",
             "Estimation accuracy vs runtime");
  const char* param_names[3] = {"mu", "beta", "alpha"};
  for (const auto& pt : points) {
    const double x = panel.px(pt.log_runtime);
    const double y = panel.py(pt.rmse);
    const std::string col = color_for(pt.method);
    if (pt.param == 0) {
      body << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
           << "\" r=\"5\" fill=\"" << col << "\"/>\n";
    } else if (pt.param == 1) {
      body << "<rect x=\"" << fmt(x - 4) << "\" y=\"" << fmt(y - 4)
           << "\" width=\"8\" height=\"8\" fill=\"" << col << "\"/>\n";
    } else {
      body << "<polygon points=\"" << fmt(x) << "," << fmt(y - 5) << " "
           << fmt(x - 5) << "," << fmt(y + 4) << " " << fmt(x + 5) << ","
           << fmt(y + 4) << "\" fill=\"" << col << "\"/>\n";
    }
    body << "<text x=\"" << fmt(x + 7) << "\" y=\"" << fmt(y + 3)
         << "\" font-size=\"9\">" << pt.method << ":" << param_names[pt.param]
         << "</text>\n";
  }

  std::string methods;
  for (const auto& [m, a] : by_method) {
    if (!methods.empty()) methods += ",";
    methods += m;
    static_cast<void>(a);
  }
  write_svg(svg_path, 620, 460,
            "nbscreen plot: experiment=accuracy rows=" +
                std::to_string(csv.rows.size()) + " methods=" + methods,
            body.str());
}

void plot_calibration(const std::string& csv_path,
                      const std::string& svg_path) {
  const Csv csv = read_csv(csv_path);
  const int c_method = csv.column("method");
  const int c_p = csv.column("p_value");
  const int c_q = csv.column("expected_quantile");

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& row : csv.rows) {
    series[row[static_cast<std::size_t>(c_method)]].emplace_back(
        std::stod(row[static_cast<std::size_t>(c_q)]),
        std::stod(row[static_cast<std::size_t>(c_p)]));
  }
  Panel panel{70, 40, 420, 420, 0.0, 1.0, 0.0, 1.0};
  std::ostringstream body;
  draw_frame(body, panel, "expected quantile", "observed p-value",
             "Null p-value calibration");
  body << "<line x1=\"" << fmt(panel.px(0)) << "\" y1=\"" << fmt(panel.py(0))
       << "\" x2=\"" << fmt(panel.px(1)) << "\" y2=\"" << fmt(panel.py(1))
       << "\" stroke=\"#999999\" stroke-dasharray=\"4,3\"/>\n";
  double legend_y = 56;
  for (auto& [method, pts] : series) {
    std::sort(pts.begin(), pts.end());
    body << "<polyline fill=\"none\" stroke=\"" << color_for(method)
         << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) {
      body << fmt(panel.px(x)) << "," << fmt(panel.py(y)) << " ";
    }
    body << "\"/>\n";
    body << "<text x=\"" << fmt(panel.x0 + panel.w - 110) << "\" y=\""
         << fmt(legend_y) << "\" font-size=\"11\" fill=\""
         << color_for(method) << "\">" << method << "</text>\n";
    legend_y += 14;
  }
  std::string methods;
  for (const auto& [m, pts] : series) {
    if (!methods.empty()) methods += ",";
    methods += m;
    static_cast<void>(pts);
  }
  write_svg(svg_path, 560, 520,
            "nbscreen plot: experiment=calibration rows=" +
                std::to_string(csv.rows.size()) + " methods=" + methods,
            body.str());
}

void plot_power(const std::string& csv_path, const std::string& svg_path) {
  const Csv csv = read_csv(csv_path);
  const int c_method = csv.column("method");
  const int c_design = csv.column("design");
  const int c_beta = csv.column("beta");
  const int c_power = csv.column("power");

  std::set<std::string> designs;
  std::map<std::pair<std::string, std::string>,
           std::vector<std::pair<double, double>>>
      series;  // (design, method) -> curve
  double beta_max = 0;
  for (const auto& row : csv.rows) {
    const std::string design = row[static_cast<std::size_t>(c_design)];
    const std::string method = row[static_cast<std::size_t>(c_method)];
    designs.insert(design);
    const double beta = std::stod(row[static_cast<std::size_t>(c_beta)]);
    beta_max = std::max(beta_max, beta);
    series[{design, method}].emplace_back(
        beta, std::stod(row[static_cast<std::size_t>(c_power)]));
  }
  if (beta_max <= 0) {
    beta_max = 1.0;
  }

  const int panel_w = 260;
  const int width = 70 + static_cast<int>(designs.size()) * (panel_w + 30);
  std::ostringstream body;
  int idx = 0;
  std::string methods_seen;
  std::set<std::string> method_set;
  for (const auto& design : designs) {
    Panel panel{70.0 + idx * (panel_w + 30.0), 40, static_cast<double>(panel_w),
                300, 0.0, beta_max, 0.0, 1.0};
    draw_frame(body, panel, "beta", idx == 0 ? "power" : "",
               "design " + design, 4);
    for (auto& [key, pts] : series) {
      if (key.first != design) {
        continue;
      }
      method_set.insert(key.second);
      std::sort(pts.begin(), pts.end());
      body << "<polyline fill=\"none\" stroke=\"" << color_for(key.second)
           << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : pts) {
        body << fmt(panel.px(x)) << "," << fmt(panel.py(y)) << " ";
      }
      body << "\"/>\n";
      for (const auto& [x, y] : pts) {
        body << "<circle cx=\"" << fmt(panel.px(x)) << "\" cy=\""
             << fmt(panel.py(y)) << "\" r=\"2.5\" fill=\""
             << color_for(key.second) << "\"/>\n";
      }
    }
    ++idx;
  }
  double legend_y = 20;
  for (const auto& m : method_set) {
    body << "<text x=\"10\" y=\"" << fmt(legend_y) << "\" font-size=\"11\" fill=\""
         << color_for(m) << "\">" << m << "</text>\n";
    legend_y += 13;
    if (!methods_seen.empty()) methods_seen += ",";
    methods_seen += m;
  }
  write_svg(svg_path, width, 400,
            "nbscreen plot: experiment=power rows=" +
                std::to_string(csv.rows.size()) + " methods=" + methods_seen,
            body.str());
}

}  // namespace nbscreen::plot
