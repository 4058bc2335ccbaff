#include "tbu/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace tbu {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::same: return "same";
        case Method::diff: return "diff";
        case Method::semi: return "semi";
        case Method::tbu: return "tbu";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    if (name == "same") return Method::same;
    if (name == "diff") return Method::diff;
    if (name == "semi") return Method::semi;
    if (name == "tbu") return Method::tbu;
    throw ConfigError(fmt::format("unknown method '{}'", name));
}

ModelConfig default_proxy() {
    ModelConfig m;
    m.spec.hidden_widths = {64};
    m.spec.activation = Activation::relu;
    m.train.epochs = 24;
    m.train.batch_size = 32;
    m.train.learning_rate = 0.05;
    m.train.weight_decay = 5e-4;
    m.train.ema_eta = 0.99;
    m.train.unlabeled_weight = 1.0;
    m.train.unlabeled_ratio = 4;
    return m;
}

ModelConfig default_target() {
    ModelConfig m;
    m.spec.hidden_widths = {32, 32};
    m.spec.activation = Activation::relu;
    m.train.epochs = 60;
    m.train.batch_size = 32;
    m.train.learning_rate = 0.05;
    m.train.weight_decay = 5e-4;
    return m;
}

ExperimentConfig default_experiment() {
    ExperimentConfig c;
    c.name = "planted";
    c.proxy = default_proxy();
    c.target = default_target();
    return c;
}

void ExperimentConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (budget < 1) throw ConfigError("budget must be >= 1");
    if (initial < 1) throw ConfigError("initial labeled count must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    std::unordered_set<std::uint64_t> distinct(seeds.begin(), seeds.end());
    if (distinct.size() != seeds.size()) throw ConfigError("seeds must be distinct");
    if (method == Method::same && !(proxy.spec == target.spec)) {
        throw ConfigError("method 'same' requires identical proxy and target architectures");
    }
    filter.validate();
    proxy.spec.validate();
    target.spec.validate();
    proxy.train.validate();
    target.train.validate();
    if (const auto* planted = std::get_if<PlantedPoolSpec>(&data)) {
        planted->validate();
        if (planted->test_size == 0) throw ConfigError("planted pool needs test_size >= 1");
        if ((method == Method::tbu) && planted->validation_size == 0) throw ConfigError("tbu needs a validation set");
    } else {
        const auto& csv = std::get<CsvSource>(data);
        if (csv.test == 0) throw ConfigError("csv source needs test >= 1");
        if (method == Method::tbu && csv.validation == 0) throw ConfigError("tbu needs a validation set");
    }
}

LoadedData load_data(const DataSource& source) {
    LoadedData out;
    if (const auto* planted = std::get_if<PlantedPoolSpec>(&source)) {
        out.planted = generate_planted_pool(*planted);
        out.dataset = out.planted->dataset;
        out.validation = planted->validation_size;
        out.test = planted->test_size;
    } else {
        const auto& csv = std::get<CsvSource>(source);
        out.dataset = load_csv(csv.path, csv.num_classes);
        out.validation = csv.validation;
        out.test = csv.test;
    }
    out.dataset.validate();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

enum SeedTag : std::uint64_t { kSplit = 11, kProxy = 12, kTarget = 13, kAcquire = 14, kRobust = 15 };

std::uint64_t robustness_seed(std::uint64_t seed, CorruptionKind kind, int level) {
    return derive_seed(seed, static_cast<std::uint64_t>(kind) + 1, static_cast<std::uint64_t>(level));
}

}  // namespace

RobustnessTable evaluate_robustness(const TrainedModel& model,
                                    const Dataset& raw,
                                    const IndexList& test_idx,
                                    const std::vector<CorruptionKind>& corruptions,
                                    std::uint64_t seed) {
    if (test_idx.empty()) throw ConfigError("robustness evaluation needs a non-empty test set");
    RobustnessTable table;
    const PerturbationSpec unused;
    for (auto kind : corruptions) {
        auto& row = table[kind];
        for (int level = 0; level <= 5; ++level) {
            std::mt19937_64 rng(robustness_seed(seed, kind, level));
            RowTransform transform = [&](const Matrix& x) {
                if (level == 0) return model.scaler.apply(x);
                return model.scaler.apply(apply_perturbation(x, unused, Perturbation::corrupt(kind, level), rng));
            };
            row[static_cast<std::size_t>(level)] = evaluate_accuracy(model.params, raw, test_idx, transform);
        }
    }
    return table;
}

RobustnessTable evaluate_robustness(const TrainedModel& model,
                                    const Dataset& raw,
                                    const IndexList& test_idx,
                                    const std::vector<std::string>& corruption_names,
                                    std::uint64_t seed) {
    std::vector<CorruptionKind> kinds;
    for (const auto& name : corruption_names) kinds.push_back(parse_corruption(name));
    return evaluate_robustness(model, raw, test_idx, kinds, seed);
}

nlohmann::json RoundMetrics::to_json() const {
    nlohmann::json robust = nlohmann::json::object();
    for (const auto& [kind, accs] : robustness) {
        nlohmann::json levels = nlohmann::json::object();
        for (std::size_t s = 0; s < accs.size(); ++s) levels[std::to_string(s)] = accs[s];
        robust[std::string(to_string(kind))] = levels;
    }
    return {
        {"round", round},
        {"accuracy", accuracy},
        {"robustness", robust},
        {"n_le", n_le},
        {"n_ha", n_ha},
        {"n_cand", n_cand},
        {"pct_le", pct_le},
        {"pct_ha", pct_ha},
        {"lambda_star", lambda_star ? nlohmann::json(*lambda_star) : nlohmann::json(nullptr)},
        {"tau", tau},
        {"backfilled", backfilled},
        {"wall_ms", wall_ms},
    };
}

FilterResult run_tbu_filter(const Dataset& working,
                            const PoolState& pool,
                            const ModelConfig& proxy,
                            const FilterConfig& filter,
                            std::uint64_t seed) {
    filter.validate();
    if (pool.validation.empty()) throw ConfigError("lambda calibration needs a non-empty validation set");
    TrainConfig train = proxy.train;
    train.seed = seed;
    auto semi = train_semisupervised(working, pool, proxy.spec, train);

    FilterResult out;
    out.proxy = std::move(semi.params);
    out.thresholds = std::move(semi.thresholds);

    // Shared covariance from the clean softmax confidence on L.
    const Matrix phi_l = forward_features(out.proxy, working.rows(pool.labeled));
    const Matrix p_l = softmax_rows(phi_l * out.proxy.last_layer());
    std::vector<double> p_star(static_cast<std::size_t>(p_l.rows()));
    for (Eigen::Index i = 0; i < p_l.rows(); ++i) p_star[static_cast<std::size_t>(i)] = p_l.row(i).maxCoeff();
    out.posterior.mu = out.proxy.last_layer();
    out.posterior.sigma_hat = fit_shared_covariance(phi_l, p_star, out.proxy.feature_dim());

    const Matrix phi_v = forward_features(out.proxy, working.rows(pool.validation));
    const auto labels_v = working.labels_of(pool.validation);
    out.posterior.lambda = calibrate_lambda(out.posterior, phi_v, labels_v).lambda;

    const Matrix phi_u = forward_features(out.proxy, working.rows(pool.unlabeled));
    const auto labels_l = working.labels_of(pool.labeled);
    const IndexList le = detect_le(out.posterior, phi_l, labels_l, phi_u, pool.unlabeled, filter.q);
    const IndexList ha = detect_ha(semi.trace, filter.persistence_count);
    out.partition = propose_candidates(pool.unlabeled, le, ha);
    return out;
}

namespace {

Dataset standardized(const Dataset& raw, const Standardizer& scaler) {
    Dataset out;
    out.features = scaler.apply(raw.features);
    out.labels = raw.labels;
    out.num_classes = raw.num_classes;
    return out;
}

TrainedModel train_target(const ExperimentConfig& config, const Dataset& raw, const IndexList& labeled,
                          std::uint64_t seed, std::size_t acquisitions_done) {
    TrainedModel model;
    model.scaler = Standardizer::fit(raw.features, labeled);
    const Dataset working = standardized(raw, model.scaler);
    TrainConfig train = config.target.train;
    train.seed = derive_seed(seed, kTarget, acquisitions_done);
    model.params = train_supervised(working, labeled, config.target.spec, train);
    return model;
}

IndexList acquire(const ModelParams& model, const Dataset& working, const IndexList& labeled,
                  AcquisitionKind kind, const IndexList& candidates, std::size_t budget, std::uint64_t seed) {
    AcquisitionRequest request;
    request.kind = kind;
    request.budget = budget;
    request.candidates = candidates;
    request.seed = seed;
    return select(model, working, labeled, request);
}

}  // namespace

RoundRecord run_round(const ExperimentConfig& config, const Dataset& raw, SeedState& state, std::size_t round) {
    if (round < 1) throw ConfigError("rounds are numbered from 1");
    const auto start = std::chrono::steady_clock::now();
    PoolState& pool = state.pool;
    pool.validate(raw.size());
    if (pool.unlabeled.empty()) throw BudgetError("unlabeled pool is empty");
    if (pool.unlabeled.size() < config.budget) {
        throw BudgetError(fmt::format("unlabeled pool has {} rows, budget is {}", pool.unlabeled.size(), config.budget));
    }

    const std::size_t done = round - 1;
    const std::uint64_t acquire_seed = derive_seed(state.seed, kAcquire, done);
    const Standardizer scaler = Standardizer::fit(raw.features, pool.labeled);
    const Dataset working = standardized(raw, scaler);

    RoundRecord record;
    RoundMetrics& m = record.metrics;
    m.round = round;

    auto ensure_target = [&]() -> const TrainedModel& {
        if (!state.target) state.target = train_target(config, raw, pool.labeled, state.seed, done);
        return *state.target;
    };

    switch (config.method) {
        case Method::same: {
            const TrainedModel& target = ensure_target();
            const Dataset target_view = standardized(raw, target.scaler);
            record.partition = propose_candidates(pool.unlabeled, {}, {});
            record.selected = acquire(target.params, target_view, pool.labeled, config.acquisition,
                                      pool.unlabeled, config.budget, acquire_seed);
            break;
        }
        case Method::diff: {
            TrainConfig train = config.proxy.train;
            train.seed = derive_seed(state.seed, kProxy, done);
            const ModelParams proxy = train_supervised(working, pool.labeled, config.proxy.spec, train);
            record.partition = propose_candidates(pool.unlabeled, {}, {});
            record.selected = acquire(proxy, working, pool.labeled, config.acquisition, pool.unlabeled, config.budget, acquire_seed);
            break;
        }
        case Method::semi: {
            TrainConfig train = config.proxy.train;
            train.seed = derive_seed(state.seed, kProxy, done);
            auto semi = train_semisupervised(working, pool, config.proxy.spec, train);
            m.tau = class_threshold(semi.thresholds);
            record.partition = propose_candidates(pool.unlabeled, {}, {});
            record.selected = acquire(semi.params, working, pool.labeled, config.acquisition, pool.unlabeled, config.budget, acquire_seed);
            break;
        }
        case Method::tbu: {
            FilterResult filter = run_tbu_filter(working, pool, config.proxy, config.filter, derive_seed(state.seed, kProxy, done));
            m.lambda_star = filter.posterior.lambda;
            m.tau = class_threshold(filter.thresholds);
            record.partition = std::move(filter.partition);
            const auto& part = record.partition;

            const TrainedModel& target = ensure_target();
            const Dataset target_view = standardized(raw, target.scaler);
            if (part.candidates.size() >= config.budget) {
                record.selected = acquire(target.params, target_view, pool.labeled, config.acquisition,
                                          part.candidates, config.budget, acquire_seed);
            } else {
                if (!config.backfill) {
                    throw BudgetError(fmt::format("round {}: {} candidates remain after filtering, budget is {} "
                                                  "(enable backfill to draw the remainder from HA then LE)",
                                                  round, part.candidates.size(), config.budget));
                }
                if (!part.candidates.empty()) {
                    record.selected = acquire(target.params, target_view, pool.labeled, config.acquisition,
                                              part.candidates, part.candidates.size(), acquire_seed);
                }
                std::unordered_set<RowIndex> used(record.selected.begin(), record.selected.end());
                std::unordered_set<RowIndex> ha_set(part.high_aleatoric.begin(), part.high_aleatoric.end());
                IndexList ha_only = part.high_aleatoric;
                IndexList le_only;
                for (auto i : part.low_epistemic) {
                    if (!ha_set.count(i)) le_only.push_back(i);
                }
                std::uint64_t tag = 1;
                for (const IndexList* source : {&ha_only, &le_only}) {
                    const std::size_t need = config.budget - record.selected.size();
                    if (need == 0 || source->empty()) continue;
                    IndexList labeled_now = pool.labeled;
                    labeled_now.insert(labeled_now.end(), record.selected.begin(), record.selected.end());
                    const auto extra = acquire(target.params, target_view, labeled_now, config.acquisition, *source,
                                               std::min(need, source->size()), derive_seed(acquire_seed, tag++));
                    for (auto i : extra) {
                        if (used.insert(i).second) record.selected.push_back(i);
                    }
                    m.backfilled += extra.size();
                }
                spdlog::warn("round {}: backfilled {} rows from filtered buckets", round, m.backfilled);
            }
            break;
        }
    }

    m.n_le = record.partition.low_epistemic.size();
    m.n_ha = record.partition.high_aleatoric.size();
    m.n_cand = record.partition.candidates.size();
    const auto u = static_cast<double>(pool.unlabeled.size());
    m.pct_le = 100.0 * static_cast<double>(m.n_le) / u;
    m.pct_ha = 100.0 * static_cast<double>(m.n_ha) / u;

    pool.acquire(record.selected);
    pool.validate(raw.size());
    m.labeled_after = pool.labeled.size();

    // The evaluation target doubles as the next round's selection target.
    state.target = train_target(config, raw, pool.labeled, state.seed, done + 1);
    m.accuracy = evaluate_accuracy(state.target->params, raw, pool.test,
                                   [&](const Matrix& x) { return state.target->scaler.apply(x); });
    m.robustness = evaluate_robustness(*state.target, raw, pool.test, config.robustness, derive_seed(state.seed, kRobust));

    if (config.record_timing) {
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    return record;
}

// ---------------------------------------------------------------------------

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    if (values.empty()) return out;
    const auto n = static_cast<double>(values.size());
    // Shifted by the first value so that identical inputs give exactly that value and std 0.
    const double shift = values.front();
    double sum = 0.0;
    for (double v : values) sum += v - shift;
    const double offset = sum / n;
    out.mean = shift + offset;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - shift - offset) * (v - shift - offset);
        out.std = std::sqrt(ss / (n - 1.0));
    }
    return out;
}

std::vector<RoundAggregate> aggregate_rounds(const std::vector<SeedReport>& seeds) {
    std::size_t max_rounds = 0;
    for (const auto& s : seeds) max_rounds = std::max(max_rounds, s.rounds.size());
    std::vector<RoundAggregate> out;
    for (std::size_t r = 0; r < max_rounds; ++r) {
        std::vector<double> acc, le, ha;
        std::map<CorruptionKind, std::array<std::vector<double>, 6>> robust;
        for (const auto& s : seeds) {
            if (r >= s.rounds.size()) continue;
            const auto& m = s.rounds[r].metrics;
            acc.push_back(m.accuracy);
            le.push_back(m.pct_le);
            ha.push_back(m.pct_ha);
            for (const auto& [kind, levels] : m.robustness) {
                for (std::size_t l = 0; l < levels.size(); ++l) robust[kind][l].push_back(levels[l]);
            }
        }
        RoundAggregate agg;
        agg.round = r + 1;
        agg.n_seeds = acc.size();
        agg.accuracy = mean_std(acc);
        agg.pct_le = mean_std(le);
        agg.pct_ha = mean_std(ha);
        for (const auto& [kind, levels] : robust) {
            for (std::size_t l = 0; l < levels.size(); ++l) agg.robustness[kind][l] = mean_std(levels[l]);
        }
        out.push_back(std::move(agg));
    }
    return out;
}

nlohmann::json ExperimentReport::summary_json() const {
    auto ms = [](const MeanStd& v) { return nlohmann::json{{"mean", v.mean}, {"std", v.std}}; };
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& agg : aggregates) {
        nlohmann::json robust = nlohmann::json::object();
        for (const auto& [kind, levels] : agg.robustness) {
            nlohmann::json lv = nlohmann::json::object();
            for (std::size_t l = 0; l < levels.size(); ++l) lv[std::to_string(l)] = ms(levels[l]);
            robust[std::string(to_string(kind))] = lv;
        }
        rounds.push_back({{"round", agg.round},
                          {"n_seeds", agg.n_seeds},
                          {"accuracy", ms(agg.accuracy)},
                          {"pct_le", ms(agg.pct_le)},
                          {"pct_ha", ms(agg.pct_ha)},
                          {"robustness", robust}});
    }
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : seeds) {
        std::vector<double> acc, le, ha;
        for (const auto& r : s.rounds) {
            acc.push_back(r.metrics.accuracy);
            le.push_back(r.metrics.pct_le);
            ha.push_back(r.metrics.pct_ha);
        }
        nlohmann::json entry = {{"seed", s.seed}, {"ok", s.ok}, {"accuracy", acc}, {"pct_le", le}, {"pct_ha", ha}};
        if (!s.ok) entry["error"] = s.error;
        per_seed.push_back(entry);
    }
    return {
        {"name", name},
        {"method", std::string(to_string(method))},
        {"acquisition", std::string(to_string(acquisition))},
        {"status", partial ? "partial" : "complete"},
        {"rounds", rounds},
        {"seeds", per_seed},
    };
}

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TBU_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n = std::min(n, static_cast<std::size_t>(v));
    }
    return n;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

void write_round(const std::filesystem::path& dir, const RoundRecord& record) {
    write_text(dir / "metrics.json", record.metrics.to_json().dump(2) + "\n");
    save_index_list(dir / "selected_indices.csv", record.selected);
    save_partition(dir / "partition.csv", record.partition);
}

SeedReport run_seed(const ExperimentConfig& config, const LoadedData& data, std::uint64_t seed,
                    const std::optional<std::filesystem::path>& out_dir) {
    SeedReport report;
    report.seed = seed;
    try {
        SeedState state;
        state.seed = seed;
        state.pool = split_initial(data.dataset, config.initial, data.validation, data.test, derive_seed(seed, kSplit));
        for (std::size_t r = 1; r <= config.rounds; ++r) {
            auto record = run_round(config, data.dataset, state, r);
            spdlog::debug("{} seed {} round {}: acc={:.4f} LE={} HA={} cand={}", config.name, seed, r,
                          record.metrics.accuracy, record.metrics.n_le, record.metrics.n_ha, record.metrics.n_cand);
            if (out_dir) write_round(*out_dir / fmt::format("seed_{}", seed) / fmt::format("round_{}", r), record);
            report.rounds.push_back(std::move(record));
        }
    } catch (const Error& e) {
        report.ok = false;
        report.error = e.what();
        spdlog::error("{} seed {} aborted: {}", config.name, seed, e.what());
    }
    return report;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const LoadedData& data,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::size_t threads) {
    config.validate();
    ExperimentReport report;
    report.name = config.name;
    report.method = config.method;
    report.acquisition = config.acquisition;
    report.seeds.resize(config.seeds.size());

    const std::size_t workers = std::min(threads ? threads : worker_threads(), config.seeds.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < config.seeds.size(); ++i) report.seeds[i] = run_seed(config, data, config.seeds[i], out_dir);
    } else {
        std::mutex mu;
        std::size_t next = 0;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    std::size_t i;
                    {
                        std::lock_guard lock(mu);
                        if (next >= config.seeds.size()) return;
                        i = next++;
                    }
                    report.seeds[i] = run_seed(config, data, config.seeds[i], out_dir);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    report.partial = std::any_of(report.seeds.begin(), report.seeds.end(), [](const SeedReport& s) { return !s.ok; });
    report.aggregates = aggregate_rounds(report.seeds);
    if (out_dir) write_text(*out_dir / "summary.json", report.summary_json().dump(2) + "\n");
    return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir,
                                std::size_t threads) {
    config.validate();
    const LoadedData data = load_data(config.data);
    return run_experiment(config, data, out_dir, threads);
}

// ---------------------------------------------------------------------------

SchedulingTable summarize_scheduling(const std::vector<ExperimentReport>& reports) {
    SchedulingTable table;
    std::size_t max_rounds = 0;
    for (const auto& r : reports) {
        if (r.method != Method::tbu) {
            throw ConfigError(fmt::format("scheduling summary needs tbu reports, '{}' uses {}", r.name, to_string(r.method)));
        }
        table.columns.emplace_back(to_string(r.acquisition));
        for (const auto& s : r.seeds) max_rounds = std::max(max_rounds, s.rounds.size());
    }
    for (std::size_t round = 0; round < max_rounds; ++round) {
        SchedulingRow row;
        row.round = round + 1;
        for (const auto& r : reports) {
            std::vector<double> le, ha;
            for (const auto& s : r.seeds) {
                if (round >= s.rounds.size()) continue;
                le.push_back(s.rounds[round].metrics.pct_le);
                ha.push_back(s.rounds[round].metrics.pct_ha);
            }
            row.le.push_back(mean_std(le));
            row.ha.push_back(mean_std(ha));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string SchedulingTable::format() const {
    std::ostringstream out;
    out << "| Round |";
    for (const auto& c : columns) out << ' ' << c << " LE | " << c << " HA |";
    out << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out << "---|---|";
    out << '\n';
    for (const auto& row : rows) {
        out << "| " << row.round << " |";
        for (std::size_t i = 0; i < row.le.size(); ++i) {
            out << fmt::format(" {:.1f} ± {:.1f} | {:.1f} ± {:.1f} |", row.le[i].mean, row.le[i].std, row.ha[i].mean, row.ha[i].std);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace tbu
