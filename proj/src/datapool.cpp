#include "tbu/datapool.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace tbu {

void Dataset::validate() const {
    if (features.rows() < 1) throw ConfigError("dataset must contain at least one row");
    if (features.cols() < 1) throw ConfigError("dataset must have at least one feature column");
    if (num_classes < 2) throw ConfigError(fmt::format("num_classes must be >= 2, got {}", num_classes));
    if (labels.size() != size()) {
        throw ConfigError(fmt::format("label count {} does not match row count {}", labels.size(), size()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw ConfigError(fmt::format("row {}: label {} outside [0, {})", i, labels[i], num_classes));
        }
    }
    if (!features.allFinite()) throw ConfigError("dataset contains non-finite feature values");
}

Matrix Dataset::rows(const IndexList& idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

std::vector<int> Dataset::labels_of(const IndexList& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels.at(i));
    return out;
}

void PoolState::acquire(const IndexList& selected) {
    std::vector<char> chosen;
    std::size_t max_index = 0;
    for (auto i : selected) max_index = std::max(max_index, i);
    for (auto i : unlabeled) max_index = std::max(max_index, i);
    chosen.assign(max_index + 1, 0);
    for (auto i : selected) {
        if (chosen[i]) throw IntegrityError(fmt::format("index {} selected twice", i));
        chosen[i] = 1;
    }
    std::size_t found = 0;
    IndexList remaining;
    remaining.reserve(unlabeled.size());
    for (auto i : unlabeled) {
        if (chosen[i]) {
            ++found;
        } else {
            remaining.push_back(i);
        }
    }
    if (found != selected.size()) {
        throw IntegrityError("acquisition contains indices that are not in the unlabeled pool");
    }
    unlabeled = std::move(remaining);
    labeled.insert(labeled.end(), selected.begin(), selected.end());
}

void PoolState::validate(std::size_t n) const {
    std::vector<char> seen(n, 0);
    auto mark = [&](const IndexList& list, const char* name) {
        for (auto i : list) {
            if (i >= n) throw IntegrityError(fmt::format("{} index {} out of range [0, {})", name, i, n));
            if (seen[i]) throw IntegrityError(fmt::format("index {} appears in more than one role", i));
            seen[i] = 1;
        }
    };
    mark(labeled, "labeled");
    mark(unlabeled, "unlabeled");
    mark(validation, "validation");
    mark(test, "test");
}

PoolState split_initial(const Dataset& dataset,
                        std::size_t initial_labeled,
                        std::size_t validation_count,
                        std::size_t test_count,
                        std::uint64_t seed) {
    const std::size_t n = dataset.size();
    if (initial_labeled + validation_count + test_count > n) {
        throw ConfigError(fmt::format("split counts {} + {} + {} exceed dataset size {}",
                                      initial_labeled, validation_count, test_count, n));
    }
    if (initial_labeled == 0) throw ConfigError("initial labeled count must be >= 1");

    IndexList perm(n);
    std::iota(perm.begin(), perm.end(), RowIndex{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    PoolState pool;
    auto take = [&](std::size_t begin, std::size_t count) {
        IndexList out(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                      perm.begin() + static_cast<std::ptrdiff_t>(begin + count));
        std::sort(out.begin(), out.end());
        return out;
    };
    pool.labeled = take(0, initial_labeled);
    pool.validation = take(initial_labeled, validation_count);
    pool.test = take(initial_labeled + validation_count, test_count);
    const std::size_t used = initial_labeled + validation_count + test_count;
    pool.unlabeled = take(used, n - used);
    return pool;
}

Standardizer Standardizer::fit(const Matrix& features, const IndexList& rows) {
    if (rows.empty()) throw ConfigError("cannot fit standardizer on zero rows");
    const auto d = features.cols();
    Standardizer s;
    s.mean_ = Vector::Zero(d);
    s.scale_ = Vector::Ones(d);
    for (auto r : rows) s.mean_ += features.row(static_cast<Eigen::Index>(r)).transpose();
    s.mean_ /= static_cast<double>(rows.size());
    Vector var = Vector::Zero(d);
    for (auto r : rows) {
        Vector diff = features.row(static_cast<Eigen::Index>(r)).transpose() - s.mean_;
        var += diff.cwiseProduct(diff);
    }
    var /= static_cast<double>(rows.size());
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt(var[j]);
        s.scale_[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
    if (mean_.size() == 0) return x;
    if (x.cols() != mean_.size()) {
        throw ShapeError(fmt::format("standardizer fitted on {} columns, got {}", mean_.size(), x.cols()));
    }
    Matrix out = x;
    out.rowwise() -= mean_.transpose();
    out.array().rowwise() /= scale_.transpose().array();
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Region region) {
    switch (region) {
        case Region::core: return "core";
        case Region::noise_band: return "noise-band";
        case Region::frontier: return "frontier";
    }
    return "unknown";
}

void PlantedPoolSpec::validate() const {
    if (num_classes < 2) throw ConfigError("planted pool needs num_classes >= 2");
    if (dim < 1) throw ConfigError("planted pool needs dim >= 1");
    if (core_fraction < 0 || noise_fraction < 0 || core_fraction + noise_fraction > 1.0 + 1e-12) {
        throw ConfigError(fmt::format("invalid region fractions core={} noise={}", core_fraction, noise_fraction));
    }
    if (!(flip_p >= 0.0 && flip_p <= 0.5)) throw ConfigError(fmt::format("flip_p {} outside [0, 0.5]", flip_p));
    if (!means.empty()) {
        if (means.size() != static_cast<std::size_t>(num_classes)) throw ConfigError("means must have num_classes rows");
        for (const auto& m : means) {
            if (m.size() != dim) throw ConfigError("every mean must have dim entries");
        }
    }
    if (!stds.empty()) {
        if (stds.size() != static_cast<std::size_t>(num_classes)) throw ConfigError("stds must have num_classes rows");
        for (const auto& s : stds) {
            if (s.size() != dim) throw ConfigError("every std vector must have dim entries");
            for (double v : s) {
                if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("stds must be finite and non-negative");
            }
        }
    }
    if (!(cluster_std >= 0) || !(core_radius >= 0) || !(core_spread >= 0) || !(band_spread >= 0) ||
        !(band_width >= 0)) {
        throw ConfigError("planted pool spreads must be non-negative");
    }
    if (core_fraction > 0 && core_prototypes == 0) throw ConfigError("core_prototypes must be >= 1");
    if (total_size() == 0) throw ConfigError("planted pool must have at least one row");
}

namespace {

Matrix default_means(int num_classes, std::size_t dim, double separation) {
    const auto c = static_cast<Eigen::Index>(num_classes);
    const auto d = static_cast<Eigen::Index>(dim);
    Matrix means = Matrix::Zero(c, d);
    if (d >= c) {
        for (Eigen::Index k = 0; k < c; ++k) means(k, k) = separation;
    } else if (d >= 2) {
        // Regular polygon whose adjacent vertices sit separation * sqrt(2) apart,
        // matching the pairwise distance of the axis layout.
        const double radius = separation * std::numbers::sqrt2 / (2.0 * std::sin(std::numbers::pi / num_classes));
        for (Eigen::Index k = 0; k < c; ++k) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / num_classes;
            means(k, 0) = radius * std::cos(angle);
            means(k, 1) = radius * std::sin(angle);
        }
    } else {
        for (Eigen::Index k = 0; k < c; ++k) means(k, 0) = separation * std::numbers::sqrt2 * static_cast<double>(k);
    }
    return means;
}

}  // namespace

PlantedPool generate_planted_pool(const PlantedPoolSpec& spec) {
    spec.validate();
    const int C = spec.num_classes;
    const auto d = static_cast<Eigen::Index>(spec.dim);
    const std::size_t n = spec.total_size();

    Matrix means;
    if (spec.means.empty()) {
        means = default_means(C, spec.dim, spec.class_separation);
    } else {
        means.resize(C, d);
        for (int k = 0; k < C; ++k) {
            for (Eigen::Index j = 0; j < d; ++j) means(k, j) = spec.means[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        }
    }
    Matrix stds(C, d);
    for (int k = 0; k < C; ++k) {
        for (Eigen::Index j = 0; j < d; ++j) {
            stds(k, j) = spec.stds.empty() ? spec.cluster_std : spec.stds[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        }
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Balanced labels: class of the i-th row in a random order is i mod C.
    IndexList order(n);
    std::iota(order.begin(), order.end(), RowIndex{0});
    std::shuffle(order.begin(), order.end(), rng);

    PlantedPool pool;
    pool.dataset.num_classes = C;
    pool.dataset.features = Matrix::Zero(static_cast<Eigen::Index>(n), d);
    pool.dataset.labels.assign(n, 0);
    pool.true_label.assign(n, 0);
    pool.region.assign(n, Region::frontier);

    std::vector<IndexList> class_rows(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < n; ++i) class_rows[i % static_cast<std::size_t>(C)].push_back(order[i]);

    // Core prototypes per class.
    std::vector<Matrix> prototypes(static_cast<std::size_t>(C));
    for (int k = 0; k < C; ++k) {
        Matrix& protos = prototypes[static_cast<std::size_t>(k)];
        protos.resize(static_cast<Eigen::Index>(std::max<std::size_t>(spec.core_prototypes, 1)), d);
        for (Eigen::Index p = 0; p < protos.rows(); ++p) {
            for (Eigen::Index j = 0; j < d; ++j) {
                protos(p, j) = means(k, j) * spec.core_shift + spec.core_spread * normal(rng);
            }
        }
    }

    for (int k = 0; k < C; ++k) {
        const IndexList& rows = class_rows[static_cast<std::size_t>(k)];
        const std::size_t nc = rows.size();
        const auto n_core = static_cast<std::size_t>(std::llround(spec.core_fraction * static_cast<double>(nc)));
        auto n_noise = static_cast<std::size_t>(std::llround(spec.noise_fraction * static_cast<double>(nc)));
        n_noise = std::min(n_noise, nc - std::min(n_core, nc));
        for (std::size_t r = 0; r < nc; ++r) {
            const auto row = rows[r];
            const auto er = static_cast<Eigen::Index>(row);
            pool.true_label[row] = k;
            int observed = k;
            if (r < n_core) {
                pool.region[row] = Region::core;
                const Matrix& protos = prototypes[static_cast<std::size_t>(k)];
                const auto p = static_cast<Eigen::Index>(std::uniform_int_distribution<Eigen::Index>(0, protos.rows() - 1)(rng));
                for (Eigen::Index j = 0; j < d; ++j) {
                    pool.dataset.features(er, j) = protos(p, j) + spec.core_radius * normal(rng);
                }
            } else if (r < n_core + n_noise) {
                pool.region[row] = Region::noise_band;
                int partner = std::uniform_int_distribution<int>(0, C - 2)(rng);
                if (partner >= k) ++partner;
                Vector mid = 0.5 * (means.row(k) + means.row(partner)).transpose();
                Vector axis = (means.row(k) - means.row(partner)).transpose();
                const double axis_norm = axis.norm();
                if (axis_norm > 0) axis /= axis_norm;
                Vector tangent(d);
                for (Eigen::Index j = 0; j < d; ++j) tangent[j] = spec.band_spread * normal(rng);
                tangent -= tangent.dot(axis) * axis;
                const double across = std::abs(spec.band_width * normal(rng));
                pool.dataset.features.row(er) = (mid + tangent + across * axis).transpose();
                if (uniform01(rng) < spec.flip_p) observed = partner;
            } else {
                for (Eigen::Index j = 0; j < d; ++j) {
                    pool.dataset.features(er, j) = means(k, j) + stds(k, j) * normal(rng);
                }
            }
            pool.dataset.labels[row] = observed;
        }
    }
    return pool;
}

// ---------------------------------------------------------------------------

std::string_view to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::additive_noise: return "additive_noise";
        case CorruptionKind::scaling: return "scaling";
        case CorruptionKind::offset: return "offset";
    }
    return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
    if (name == "additive_noise") return CorruptionKind::additive_noise;
    if (name == "scaling") return CorruptionKind::scaling;
    if (name == "offset") return CorruptionKind::offset;
    throw ConfigError(fmt::format("unknown corruption '{}'", name));
}

void PerturbationSpec::validate() const {
    if (!std::isfinite(weak_noise_scale) || weak_noise_scale < 0) throw ConfigError("weak_noise_scale must be finite and >= 0");
    if (!std::isfinite(strong_noise_scale) || strong_noise_scale < weak_noise_scale) {
        throw ConfigError("strong_noise_scale must be finite and >= weak_noise_scale");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
}

namespace {
void check_level(int level) {
    if (level < 0 || level > 5) throw ConfigError(fmt::format("corruption severity {} outside 0..5", level));
}
}  // namespace

double corruption_noise_scale(int level) {
    check_level(level);
    return 0.25 * level;
}

double corruption_scale_factor(int level) {
    check_level(level);
    return 1.0 - 0.1 * level;
}

double corruption_offset(int level) {
    check_level(level);
    return 0.25 * level;
}

std::vector<double> apply_perturbation(std::span<const double> x,
                                       const PerturbationSpec& spec,
                                       const Perturbation& perturbation,
                                       std::mt19937_64& rng) {
    std::vector<double> out(x.begin(), x.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    switch (perturbation.kind) {
        case Perturbation::Kind::weak:
            for (auto& v : out) v += spec.weak_noise_scale * normal(rng);
            break;
        case Perturbation::Kind::strong:
            for (auto& v : out) {
                v += spec.strong_noise_scale * normal(rng);
                if (uniform01(rng) < spec.dropout_rate) v = 0.0;
            }
            break;
        case Perturbation::Kind::corruption:
            switch (perturbation.corruption) {
                case CorruptionKind::additive_noise: {
                    const double s = corruption_noise_scale(perturbation.level);
                    for (auto& v : out) v += s * normal(rng);
                    break;
                }
                case CorruptionKind::scaling: {
                    const double f = corruption_scale_factor(perturbation.level);
                    for (auto& v : out) v *= f;
                    break;
                }
                case CorruptionKind::offset: {
                    const double o = corruption_offset(perturbation.level);
                    for (auto& v : out) v += o;
                    break;
                }
            }
            break;
    }
    return out;
}

Matrix apply_perturbation(const Matrix& x,
                          const PerturbationSpec& spec,
                          const Perturbation& perturbation,
                          std::mt19937_64& rng) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        auto row = apply_perturbation(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())),
                                      spec, perturbation, rng);
        for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = row[static_cast<std::size_t>(j)];
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    for (auto& c : cells) {
        while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
        while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
    }
    return cells;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

bool parse_int(std::string_view s, long long& out) {
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    return out;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes) {
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::vector<double> values;
    std::vector<int> labels;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split_commas(line);
        if (!header_seen) {
            header_seen = true;
            if (cells.size() < 2 || cells.back() != "label") {
                throw ParseError(fmt::format("{}: line {}: header must be f0,...,f{{d-1}},label", path.string(), line_no));
            }
            width = cells.size();
            continue;
        }
        if (cells.size() != width) {
            throw ParseError(fmt::format("{}: line {}: expected {} cells, found {}", path.string(), line_no, width, cells.size()));
        }
        for (std::size_t j = 0; j + 1 < width; ++j) {
            double v = 0;
            if (!parse_double(cells[j], v) || !std::isfinite(v)) {
                throw ParseError(fmt::format("{}: line {}: non-numeric cell '{}' in column {}", path.string(), line_no, cells[j], j));
            }
            values.push_back(v);
        }
        long long label = 0;
        if (!parse_int(cells.back(), label) || label < 0) {
            throw ParseError(fmt::format("{}: line {}: invalid label '{}'", path.string(), line_no, cells.back()));
        }
        if (num_classes && label >= *num_classes) {
            throw ParseError(fmt::format("{}: line {}: label {} >= num_classes {}", path.string(), line_no, label, *num_classes));
        }
        labels.push_back(static_cast<int>(label));
    }
    if (!header_seen) throw ParseError(fmt::format("{}: empty file", path.string()));
    if (labels.empty()) throw ParseError(fmt::format("{}: no data rows", path.string()));

    Dataset ds;
    const auto d = static_cast<Eigen::Index>(width - 1);
    ds.features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()), d);
    ds.labels = std::move(labels);
    if (num_classes) {
        ds.num_classes = *num_classes;
    } else {
        ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
    }
    ds.validate();
    return ds;
}

void save_csv(const std::filesystem::path& path, const Dataset& dataset) {
    auto out = open_output(path);
    for (std::size_t j = 0; j < dataset.dim(); ++j) out << 'f' << j << ',';
    out << "label\n";
    for (Eigen::Index i = 0; i < dataset.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < dataset.features.cols(); ++j) out << format_double(dataset.features(i, j)) << ',';
        out << dataset.labels[static_cast<std::size_t>(i)] << '\n';
    }
}

void save_annotations(const std::filesystem::path& path, const PlantedPool& pool) {
    auto out = open_output(path);
    out << "index,region,true_label,observed_label\n";
    for (std::size_t i = 0; i < pool.region.size(); ++i) {
        out << i << ',' << to_string(pool.region[i]) << ',' << pool.true_label[i] << ',' << pool.dataset.labels[i] << '\n';
    }
}

IndexList load_index_list(const std::filesystem::path& path) {
    auto in = open_input(path);
    IndexList out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto cells = split_commas(line);
        if (cells.size() == 1 && cells[0].empty()) continue;
        for (auto cell : cells) {
            long long v = 0;
            if (!parse_int(cell, v) || v < 0) {
                // Tolerate a non-numeric header on the first line.
                if (line_no == 1 && out.empty()) break;
                throw ParseError(fmt::format("{}: line {}: invalid index '{}'", path.string(), line_no, cell));
            }
            out.push_back(static_cast<RowIndex>(v));
        }
    }
    return out;
}

void save_index_list(const std::filesystem::path& path, const IndexList& idx) {
    auto out = open_output(path);
    for (auto i : idx) out << i << '\n';
}

}  // namespace tbu
