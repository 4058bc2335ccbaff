#include "tbu/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace tbu {

namespace {

AccuracyCurve parse_summary(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(fmt::format("cannot read '{}'", file.string()));
    AccuracyCurve curve;
    try {
        const auto doc = nlohmann::json::parse(in);
        curve.name = doc.at("name").get<std::string>();
        curve.method = doc.at("method").get<std::string>();
        curve.acquisition = doc.at("acquisition").get<std::string>();
        for (const auto& r : doc.at("rounds")) {
            curve.rounds.push_back(r.at("round").get<std::size_t>());
            curve.n_seeds.push_back(r.at("n_seeds").get<std::size_t>());
            curve.accuracy.push_back({r.at("accuracy").at("mean").get<double>(), r.at("accuracy").at("std").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("malformed summary '{}': {}", file.string(), e.what()));
    }
    if (curve.rounds.empty()) throw ConfigError(fmt::format("summary '{}' has no rounds", file.string()));
    return curve;
}

}  // namespace

std::vector<AccuracyCurve> load_curves(const std::filesystem::path& runs) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(runs)) throw ConfigError(fmt::format("runs directory '{}' does not exist", runs.string()));
    std::vector<AccuracyCurve> curves;
    if (fs::exists(runs / "summary.json")) {
        curves.push_back(parse_summary(runs / "summary.json"));
        return curves;
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(runs)) {
        if (entry.is_directory() && fs::exists(entry.path() / "summary.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) curves.push_back(parse_summary(d / "summary.json"));
    if (curves.empty()) throw ConfigError(fmt::format("no summary.json found under '{}'", runs.string()));
    return curves;
}

std::string curves_csv(const std::vector<AccuracyCurve>& curves) {
    std::ostringstream out;
    out << "experiment,method,acquisition,round,n_seeds,accuracy_mean,accuracy_std\n";
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.rounds.size(); ++i) {
            out << c.name << ',' << c.method << ',' << c.acquisition << ',' << c.rounds[i] << ',' << c.n_seeds[i] << ','
                << format_double(c.accuracy[i].mean) << ',' << format_double(c.accuracy[i].std) << '\n';
        }
    }
    return out.str();
}

std::string curves_svg(const std::vector<AccuracyCurve>& curves) {
    constexpr double width = 720, height = 440, left = 60, right = 180, top = 20, bottom = 50;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};

    std::size_t min_round = std::numeric_limits<std::size_t>::max(), max_round = 0;
    double lo = 1.0, hi = 0.0;
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.rounds.size(); ++i) {
            min_round = std::min(min_round, c.rounds[i]);
            max_round = std::max(max_round, c.rounds[i]);
            lo = std::min(lo, c.accuracy[i].mean - c.accuracy[i].std);
            hi = std::max(hi, c.accuracy[i].mean + c.accuracy[i].std);
        }
    }
    if (curves.empty()) min_round = max_round = 1;
    if (max_round == min_round) max_round = min_round + 1;
    lo = std::max(0.0, std::floor(lo * 20.0) / 20.0);
    hi = std::min(1.0, std::ceil(hi * 20.0) / 20.0);
    if (hi <= lo) hi = std::min(1.0, lo + 0.05), lo = hi - 0.05;

    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double r) { return left + pw * (r - double(min_round)) / double(max_round - min_round); };
    auto sy = [&](double a) { return top + ph * (1.0 - (a - lo) / (hi - lo)); };

    std::ostringstream out;
    out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)", width, height) << '\n';
    out << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>)", left, top, pw, ph) << '\n';
    for (std::size_t r = min_round; r <= max_round; ++r) {
        out << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="middle">{}</text>)", sx(double(r)), top + ph + 18, r) << '\n';
    }
    for (int t = 0; t <= 4; ++t) {
        const double a = lo + (hi - lo) * t / 4.0;
        out << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="end">{:.3f}</text>)", left - 6, sy(a) + 4, a) << '\n';
        out << fmt::format(R"(<line x1="{}" x2="{}" y1="{:.1f}" y2="{:.1f}" stroke="#ddd"/>)", left, left + pw, sy(a), sy(a)) << '\n';
    }
    out << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="middle">round</text>)", left + pw / 2, height - 10) << '\n';
    out << fmt::format(R"X(<text x="15" y="{:.1f}" text-anchor="middle" transform="rotate(-90 15 {:.1f})">test accuracy</text>)X",
                       top + ph / 2, top + ph / 2)
        << '\n';

    for (std::size_t k = 0; k < curves.size(); ++k) {
        const auto& c = curves[k];
        const char* colour = palette[k % std::size(palette)];
        std::string band, line;
        for (std::size_t i = 0; i < c.rounds.size(); ++i) {
            band += fmt::format("{:.2f},{:.2f} ", sx(double(c.rounds[i])), sy(c.accuracy[i].mean + c.accuracy[i].std));
            line += fmt::format("{:.2f},{:.2f} ", sx(double(c.rounds[i])), sy(c.accuracy[i].mean));
        }
        for (std::size_t i = c.rounds.size(); i-- > 0;) {
            band += fmt::format("{:.2f},{:.2f} ", sx(double(c.rounds[i])), sy(c.accuracy[i].mean - c.accuracy[i].std));
        }
        out << fmt::format(R"(<polygon class="band" points="{}" fill="{}" fill-opacity="0.18" stroke="none"/>)", band, colour) << '\n';
        out << fmt::format(R"(<polyline class="mean" points="{}" fill="none" stroke="{}" stroke-width="2"/>)", line, colour) << '\n';
        const double ly = top + 16.0 * double(k) + 10;
        out << fmt::format(R"(<line x1="{}" x2="{}" y1="{:.1f}" y2="{:.1f}" stroke="{}" stroke-width="2"/>)", left + pw + 12,
                           left + pw + 32, ly, ly, colour)
            << '\n';
        out << fmt::format(R"(<text x="{}" y="{:.1f}">{}</text>)", left + pw + 38, ly + 4, c.name) << '\n';
    }
    out << "</svg>\n";
    return out.str();
}

void write_report(const std::vector<AccuracyCurve>& curves, const std::filesystem::path& prefix) {
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    for (const auto& [ext, text] : {std::pair{".csv", curves_csv(curves)}, std::pair{".svg", curves_svg(curves)}}) {
        std::filesystem::path file = prefix;
        file += ext;
        std::ofstream out(file, std::ios::binary);
        if (!out) throw ConfigError(fmt::format("cannot write '{}'", file.string()));
        out << text;
    }
}

}  // namespace tbu
