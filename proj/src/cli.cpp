#include "tbu/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tbu/config.hpp"
#include "tbu/harness.hpp"
#include "tbu/report.hpp"

namespace tbu {

namespace fs = std::filesystem;

namespace {

void setup_logging(int verbose, bool quiet) {
    auto logger = spdlog::get("tbu");
    if (!logger) logger = spdlog::stderr_color_mt("tbu");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    if (quiet) {
        spdlog::set_level(spdlog::level::warn);
    } else {
        spdlog::set_level(verbose > 0 ? spdlog::level::debug : spdlog::level::info);
    }
}

void check_output_dir(const fs::path& out, bool force) {
    if (fs::exists(out)) {
        if (!fs::is_directory(out)) throw ConfigError(fmt::format("output '{}' exists and is not a directory", out.string()));
        if (!fs::is_empty(out) && !force) {
            throw ConfigError(fmt::format("output directory '{}' is not empty (pass --force to overwrite)", out.string()));
        }
    }
    fs::create_directories(out);
}

void check_output_file(const fs::path& file, bool force) {
    if (fs::exists(file) && !force) {
        throw ConfigError(fmt::format("output '{}' already exists (pass --force to overwrite)", file.string()));
    }
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

int cmd_run(const fs::path& config_path, std::optional<fs::path> out, bool force) {
    RunConfig run = load_run_config(config_path);
    if (!out) out = run.out;
    if (!out) throw ConfigError("no output directory: pass --out or set \"out\" in the config");
    check_output_dir(*out, force);

    nlohmann::json resolved = {{"name", run.name}, {"experiments", nlohmann::json::array()}};
    for (const auto& e : run.experiments) resolved["experiments"].push_back(to_json(e));
    write_file(*out / "config.json", resolved.dump(2) + "\n");

    const LoadedData data = load_data(run.experiments.front().data);
    std::vector<ExperimentReport> reports;
    std::vector<ExperimentReport> tbu_reports;
    bool partial = false;
    for (const auto& experiment : run.experiments) {
        spdlog::info("running {} ({} seeds x {} rounds)", experiment.name, experiment.seeds.size(), experiment.rounds);
        auto report = run_experiment(experiment, data, *out / experiment.name);
        for (const auto& agg : report.aggregates) {
            spdlog::info("  {} round {}: accuracy {:.4f} +- {:.4f}", experiment.name, agg.round, agg.accuracy.mean, agg.accuracy.std);
        }
        partial = partial || report.partial;
        if (report.method == Method::tbu) tbu_reports.push_back(report);
        reports.push_back(std::move(report));
    }
    if (!tbu_reports.empty()) write_file(*out / "scheduling.md", summarize_scheduling(tbu_reports).format());
    if (partial) {
        spdlog::error("at least one seed failed; summaries are marked partial");
        return 3;
    }
    return 0;
}

int cmd_filter(const fs::path& data_path, const fs::path& labeled_path, double q, const fs::path& out, std::uint64_t seed,
               std::optional<int> num_classes, double validation_fraction, bool force) {
    FilterConfig filter;
    filter.q = q;
    filter.validate();
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("--validation-fraction must lie in (0, 1)");
    const Dataset raw = load_csv(data_path, num_classes);
    IndexList labeled = load_index_list(labeled_path);

    PoolState pool;
    std::vector<char> is_labeled(raw.size(), 0);
    for (auto i : labeled) {
        if (i >= raw.size()) throw ConfigError(fmt::format("labeled index {} outside the {} dataset rows", i, raw.size()));
        if (is_labeled[i]) throw ConfigError(fmt::format("labeled index {} listed twice", i));
        is_labeled[i] = 1;
    }
    for (RowIndex i = 0; i < raw.size(); ++i) {
        if (!is_labeled[i]) pool.unlabeled.push_back(i);
    }
    if (pool.unlabeled.empty()) throw ConfigError("every row is labeled; there is no unlabeled pool to filter");
    if (labeled.size() < 2) throw ConfigError("at least two labeled rows are needed (one for training, one for calibration)");

    // A held-out slice of the labeled rows calibrates lambda.
    std::sort(labeled.begin(), labeled.end());
    std::mt19937_64 rng(derive_seed(seed, 21));
    std::shuffle(labeled.begin(), labeled.end(), rng);
    auto n_val = static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(labeled.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, labeled.size() - 1);
    pool.validation.assign(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n_val));
    pool.labeled.assign(labeled.begin() + static_cast<std::ptrdiff_t>(n_val), labeled.end());
    std::sort(pool.validation.begin(), pool.validation.end());
    std::sort(pool.labeled.begin(), pool.labeled.end());
    pool.validate(raw.size());

    check_output_file(out, force);
    const Standardizer scaler = Standardizer::fit(raw.features, pool.labeled);
    Dataset working = raw;
    working.features = scaler.apply(raw.features);
    const FilterResult result = run_tbu_filter(working, pool, default_proxy(), filter, derive_seed(seed, 22));
    save_partition(out, result.partition);
    spdlog::info("LE {} / HA {} / candidates {} of {} unlabeled rows (lambda {:.4g})", result.partition.low_epistemic.size(),
                 result.partition.high_aleatoric.size(), result.partition.candidates.size(), pool.unlabeled.size(),
                 result.posterior.lambda);
    return 0;
}

int cmd_gen_data(const std::optional<fs::path>& spec_path, const fs::path& out, bool force) {
    PlantedPoolSpec spec;
    if (spec_path) spec = parse_planted_spec(read_json_file(*spec_path));
    fs::path annotations = out;
    annotations.replace_filename(out.stem().string() + ".annotations.csv");
    check_output_file(out, force);
    check_output_file(annotations, force);
    const PlantedPool pool = generate_planted_pool(spec);
    save_csv(out, pool.dataset);
    save_annotations(annotations, pool);
    spdlog::info("wrote {} rows to {} and {}", pool.dataset.size(), out.string(), annotations.string());
    return 0;
}

int cmd_report(const fs::path& runs, fs::path prefix, bool force) {
    if (prefix.extension() == ".csv" || prefix.extension() == ".svg") prefix.replace_extension();
    const auto curves = load_curves(runs);
    for (const char* ext : {".csv", ".svg"}) {
        fs::path file = prefix;
        file += ext;
        check_output_file(file, force);
    }
    write_report(curves, prefix);
    spdlog::info("wrote {}.csv and {}.svg ({} experiments)", prefix.string(), prefix.string(), curves.size());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Active-learning engine with transferable candidate proposal and bounded uncertainty"};
    app.require_subcommand(1);
    int verbose = 0;
    bool quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("--quiet", quiet, "Only warnings and errors");

    auto* run = app.add_subcommand("run", "Run experiments described by a JSON config");
    std::string config_path, run_out;
    bool run_force = false;
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", run_out, "Output directory (overrides \"out\" in the config)");
    run->add_flag("--force", run_force, "Write into a non-empty output directory");
    run->footer("Config keys and defaults (method and acquisition also accept lists;\n"
                "\"data\" takes {\"planted\": {...}} or {\"csv\": {\"path\", \"num_classes\", \"validation\", \"test\"}};\n"
                "\"out\" and \"verbosity\" are optional):\n" +
                default_config_json().dump(2));

    auto* filter = app.add_subcommand("filter", "Split the unlabeled rows of a CSV into LE / HA / candidates");
    std::string data_path, labeled_path, filter_out;
    double q = 10.0;
    std::uint64_t filter_seed = 0;
    int filter_classes = 0;
    double validation_fraction = 0.2;
    bool filter_force = false;
    filter->add_option("--data", data_path, "Dataset CSV (f0,...,label)")->required();
    filter->add_option("--labeled", labeled_path, "Labeled row indices, one per line")->required();
    filter->add_option("--q", q, "LE entropy percentile")->capture_default_str();
    filter->add_option("--out", filter_out, "Partition CSV to write")->required();
    filter->add_option("--seed", filter_seed, "Seed for the proxy and the calibration split")->capture_default_str();
    filter->add_option("--num-classes", filter_classes, "Number of classes (default: max label + 1)");
    filter->add_option("--validation-fraction", validation_fraction, "Share of labeled rows held out to calibrate lambda")
        ->capture_default_str();
    filter->add_flag("--force", filter_force, "Overwrite an existing output file");

    auto* gen = app.add_subcommand("gen-data", "Generate a planted benchmark pool");
    std::string spec_path, gen_out;
    bool gen_force = false;
    gen->add_option("--spec", spec_path, "Planted pool spec (JSON); defaults when omitted");
    gen->add_option("--out", gen_out, "Dataset CSV; annotations go to <stem>.annotations.csv")->required();
    gen->add_flag("--force", gen_force, "Overwrite existing files");
    gen->footer("Spec keys and defaults:\n" + to_json(PlantedPoolSpec{}).dump(2));

    auto* report = app.add_subcommand("report", "Per-round accuracy CSV and SVG chart from run outputs");
    std::string runs_dir, report_out;
    bool report_force = false;
    report->add_option("--runs", runs_dir, "Run output directory")->required();
    report->add_option("--out", report_out, "Output prefix; writes <prefix>.csv and <prefix>.svg")->required();
    report->add_flag("--force", report_force, "Overwrite existing files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    setup_logging(verbose, quiet);
    try {
        if (*run) return cmd_run(config_path, run_out.empty() ? std::nullopt : std::optional<fs::path>(run_out), run_force);
        if (*filter) {
            return cmd_filter(data_path, labeled_path, q, filter_out, filter_seed,
                              filter_classes > 0 ? std::optional<int>(filter_classes) : std::nullopt, validation_fraction,
                              filter_force);
        }
        if (*gen) return cmd_gen_data(spec_path.empty() ? std::nullopt : std::optional<fs::path>(spec_path), gen_out, gen_force);
        if (*report) return cmd_report(runs_dir, report_out, report_force);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const ParseError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 3;
    }
    return 2;
}

}  // namespace tbu
