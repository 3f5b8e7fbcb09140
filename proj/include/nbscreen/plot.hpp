#pragma once

#include <string>

namespace nbscreen::plot {

// Static SVG renderings of the benchmark CSVs. Schema violations throw
// std::runtime_error naming the missing column; an empty CSV (header only)
// is an error and no output file is written.
void plot_accuracy(const std::string& csv_path, const std::string& svg_path);
void plot_calibration(const std::string& csv_path, const std::string& svg_path);
void plot_power(const std::string& csv_path, const std::string& svg_path);

}  // namespace nbscreen::plot
