#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbu/acquisition.hpp"
#include "tbu/bounding.hpp"
#include "tbu/datapool.hpp"
#include "tbu/laplace.hpp"
#include "tbu/model.hpp"

namespace tbu {

enum class Method { same, diff, semi, tbu };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct ModelConfig {
    MlpSpec spec;
    TrainConfig train;
};

struct CsvSource {
    std::filesystem::path path;
    std::optional<int> num_classes;
    std::size_t validation = 0;
    std::size_t test = 0;
};

using DataSource = std::variant<PlantedPoolSpec, CsvSource>;

struct ExperimentConfig {
    std::string name = "experiment";
    DataSource data = PlantedPoolSpec{};
    Method method = Method::tbu;
    AcquisitionKind acquisition = AcquisitionKind::entropy;
    std::size_t rounds = 4;
    std::size_t initial = 100;
    std::size_t budget = 100;
    FilterConfig filter;
    ModelConfig proxy;
    ModelConfig target;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    bool backfill = false;
    std::vector<CorruptionKind> robustness{CorruptionKind::additive_noise, CorruptionKind::scaling, CorruptionKind::offset};
    // wall_ms is written as 0 unless this is set, keeping reruns byte-identical.
    bool record_timing = false;

    void validate() const;
};

/// Desk-scale defaults: planted pool of 5000 (+500 validation, +1000 test),
/// I = K = 100, four rounds, three seeds, proxy MLP (64) vs target MLP (32, 32).
ExperimentConfig default_experiment();
ModelConfig default_proxy();
ModelConfig default_target();

struct LoadedData {
    Dataset dataset;
    std::optional<PlantedPool> planted;  // ground-truth annotations when generated
    std::size_t validation = 0;
    std::size_t test = 0;
};

LoadedData load_data(const DataSource& source);

/// A trained model together with the standardization it was trained under.
struct TrainedModel {
    ModelParams params;
    Standardizer scaler;
};

/// Robustness table: accuracy per corruption kind and severity 0..5.
using RobustnessTable = std::map<CorruptionKind, std::array<double, 6>>;

RobustnessTable evaluate_robustness(const TrainedModel& model,
                                    const Dataset& raw,
                                    const IndexList& test_idx,
                                    const std::vector<CorruptionKind>& corruptions,
                                    std::uint64_t seed);
RobustnessTable evaluate_robustness(const TrainedModel& model,
                                    const Dataset& raw,
                                    const IndexList& test_idx,
                                    const std::vector<std::string>& corruption_names,
                                    std::uint64_t seed);

struct RoundMetrics {
    std::size_t round = 0;
    double accuracy = 0.0;
    RobustnessTable robustness;
    std::size_t n_le = 0;
    std::size_t n_ha = 0;
    std::size_t n_cand = 0;
    double pct_le = 0.0;
    double pct_ha = 0.0;
    std::optional<double> lambda_star;
    std::vector<double> tau;
    std::size_t backfilled = 0;
    std::size_t labeled_after = 0;
    double wall_ms = 0.0;

    nlohmann::json to_json() const;
};

struct RoundRecord {
    RoundMetrics metrics;
    IndexList selected;
    UncertaintyPartition partition;
};

/// Everything TBU derives from the proxy before the target picks its batch.
struct FilterResult {
    UncertaintyPartition partition;
    PosteriorLinearClassifier posterior;
    ThresholdState thresholds;
    ModelParams proxy;
};

/// Semi-supervised proxy, shared covariance on L, lambda on V, LE/HA
/// detection and candidate proposal. `working` is in standardized space.
FilterResult run_tbu_filter(const Dataset& working,
                            const PoolState& pool,
                            const ModelConfig& proxy,
                            const FilterConfig& filter,
                            std::uint64_t seed);

/// Per-seed state carried across rounds. The target trained at the end of a
/// round is the one that selects in the next round.
struct SeedState {
    std::uint64_t seed = 0;
    PoolState pool;
    std::optional<TrainedModel> target;
};

/// One acquisition round (1-based). Mutates state.pool.
RoundRecord run_round(const ExperimentConfig& config, const Dataset& raw, SeedState& state, std::size_t round);

struct SeedReport {
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    std::vector<RoundRecord> rounds;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Sample standard deviation (n - 1); zero for a single value.
MeanStd mean_std(const std::vector<double>& values);

struct RoundAggregate {
    std::size_t round = 0;
    std::size_t n_seeds = 0;
    MeanStd accuracy;
    MeanStd pct_le;
    MeanStd pct_ha;
    std::map<CorruptionKind, std::array<MeanStd, 6>> robustness;
};

struct ExperimentReport {
    std::string name;
    Method method = Method::tbu;
    AcquisitionKind acquisition = AcquisitionKind::entropy;
    std::vector<SeedReport> seeds;
    std::vector<RoundAggregate> aggregates;
    bool partial = false;

    nlohmann::json summary_json() const;
};

std::vector<RoundAggregate> aggregate_rounds(const std::vector<SeedReport>& seeds);

/// Runs every seed (in parallel up to `threads`, 0 = TBU_THREADS or hardware
/// concurrency). When `out_dir` is set, writes
/// seed_<s>/round_<r>/{metrics.json,selected_indices.csv,partition.csv} and summary.json.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir = {},
                                std::size_t threads = 0);

/// Same, reusing already loaded data.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const LoadedData& data,
                                const std::optional<std::filesystem::path>& out_dir = {},
                                std::size_t threads = 0);

std::size_t worker_threads();

struct SchedulingRow {
    std::size_t round = 0;
    // One entry per report, in input order.
    std::vector<MeanStd> le;
    std::vector<MeanStd> ha;
};

struct SchedulingTable {
    std::vector<std::string> columns;  // acquisition names
    std::vector<SchedulingRow> rows;

    std::string format() const;
};

/// Per-round LE% / HA% across seeds, one column pair per report.
SchedulingTable summarize_scheduling(const std::vector<ExperimentReport>& reports);

}  // namespace tbu
