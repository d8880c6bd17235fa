#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "desco/trainer.hpp"

namespace desco::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Line chart as a standalone SVG document. Non-finite points are skipped.
std::string line_chart(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                       int width = 720, int height = 400);

struct Bar {
    std::string label;
    double value = 0;
    double error = 0; ///< half-length of the error bar
};

std::string bar_chart(const std::string& title, const std::vector<Bar>& bars, int width = 720, int height = 400);

/// Loss, schedule and validation-Dice charts; returns the files written.
std::vector<std::filesystem::path> plot_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& out_dir,
                                                const std::string& prefix = "history");

} // namespace desco::plot
