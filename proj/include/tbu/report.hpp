#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tbu/harness.hpp"

namespace tbu {

/// Per-round accuracy curve of one experiment, read back from summary.json.
struct AccuracyCurve {
    std::string name;
    std::string method;
    std::string acquisition;
    std::vector<std::size_t> rounds;
    std::vector<MeanStd> accuracy;
    std::vector<std::size_t> n_seeds;
};

/// Collects `summary.json` from `runs` itself or from its immediate
/// subdirectories (sorted by name). Malformed or missing summaries raise
/// ConfigError.
std::vector<AccuracyCurve> load_curves(const std::filesystem::path& runs);

/// `experiment,method,acquisition,round,n_seeds,accuracy_mean,accuracy_std`,
/// one row per experiment and round.
std::string curves_csv(const std::vector<AccuracyCurve>& curves);

/// Line chart: mean accuracy per round with a shaded +-1 std band.
std::string curves_svg(const std::vector<AccuracyCurve>& curves);

/// Writes `<prefix>.csv` and `<prefix>.svg`.
void write_report(const std::vector<AccuracyCurve>& curves, const std::filesystem::path& prefix);

}  // namespace tbu
