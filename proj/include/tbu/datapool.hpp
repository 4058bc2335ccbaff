#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbu/common.hpp"

namespace tbu {

/// Feature matrix plus the full label table. Labels of unlabeled rows are
/// stored but only read through PoolState acquisition (the annotation oracle
/// is a table lookup).
struct Dataset {
    Matrix features;          // N x d
    std::vector<int> labels;  // N, each in [0, num_classes)
    int num_classes = 2;

    std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

    /// Throws ConfigError when a Dataset invariant is broken.
    void validate() const;

    Matrix rows(const IndexList& idx) const;
    std::vector<int> labels_of(const IndexList& idx) const;
};

/// Role assignment of dataset rows. All four lists are pairwise disjoint.
struct PoolState {
    IndexList labeled;
    IndexList unlabeled;
    IndexList validation;
    IndexList test;

    /// Moves `selected` from unlabeled to labeled (appended in the given order).
    /// Throws IntegrityError when an index is not currently unlabeled or repeats.
    void acquire(const IndexList& selected);

    /// Throws IntegrityError when the lists overlap or leave [0, n).
    void validate(std::size_t n) const;
};

PoolState split_initial(const Dataset& dataset,
                        std::size_t initial_labeled,
                        std::size_t validation_count,
                        std::size_t test_count,
                        std::uint64_t seed);

/// Per-column affine standardization fitted on a subset of rows.
class Standardizer {
public:
    Standardizer() = default;

    /// Zero-variance columns keep scale 1.
    static Standardizer fit(const Matrix& features, const IndexList& rows);

    Matrix apply(const Matrix& x) const;
    const Vector& mean() const { return mean_; }
    const Vector& scale() const { return scale_; }

private:
    Vector mean_;
    Vector scale_;
};

// ---------------------------------------------------------------------------
// Planted benchmark pools

enum class Region { core, noise_band, frontier };

std::string_view to_string(Region region);

/// Gaussian class clusters with three planted regions per class:
///  - core: near-duplicates of a few prototypes deep inside the class,
///  - noise_band: points on the boundary between two classes, labels flipped
///    to the neighbouring class with probability flip_p,
///  - frontier: ordinary draws from the class Gaussian (the remainder).
struct PlantedPoolSpec {
    int num_classes = 4;
    std::size_t dim = 8;

    // Class means: explicit (num_classes x dim) or, when empty,
    // class_separation * e_c (one axis per class).
    std::vector<std::vector<double>> means;
    double class_separation = 3.5;
    // Per-class diagonal standard deviations; empty means cluster_std everywhere.
    std::vector<std::vector<double>> stds;
    double cluster_std = 1.0;

    double core_fraction = 0.3;
    std::size_t core_prototypes = 8;
    double core_radius = 0.05;
    // Prototype centres are drawn from N(mean_c * core_shift, core_spread^2 I).
    double core_shift = 2.0;
    double core_spread = 0.5;

    double noise_fraction = 0.15;
    double band_spread = 1.0;  // spread along the boundary
    double band_width = 0.1;   // spread across the boundary
    double flip_p = 0.4;

    std::size_t pool_size = 5000;
    std::size_t validation_size = 500;
    std::size_t test_size = 1000;
    std::uint64_t seed = 0;

    double frontier_fraction() const { return 1.0 - core_fraction - noise_fraction; }
    std::size_t total_size() const { return pool_size + validation_size + test_size; }

    void validate() const;
};

struct PlantedPool {
    Dataset dataset;             // labels are the observed (possibly flipped) labels
    std::vector<Region> region;  // per row
    std::vector<int> true_label; // per row, before flipping
};

PlantedPool generate_planted_pool(const PlantedPoolSpec& spec);

// ---------------------------------------------------------------------------
// Perturbations

enum class CorruptionKind { additive_noise, scaling, offset };

std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption(std::string_view name);

struct PerturbationSpec {
    double weak_noise_scale = 0.1;
    double strong_noise_scale = 0.4;
    double dropout_rate = 0.1;

    void validate() const;
};

/// Severity schedules; level 0 is the identity for every kind.
double corruption_noise_scale(int level);  // additive noise std
double corruption_scale_factor(int level); // multiplicative factor
double corruption_offset(int level);       // shift added to every coordinate

struct Perturbation {
    enum class Kind { weak, strong, corruption };
    Kind kind = Kind::weak;
    CorruptionKind corruption = CorruptionKind::additive_noise;
    int level = 0;

    static Perturbation weak() { return {Kind::weak, CorruptionKind::additive_noise, 0}; }
    static Perturbation strong() { return {Kind::strong, CorruptionKind::additive_noise, 0}; }
    static Perturbation corrupt(CorruptionKind c, int level) { return {Kind::corruption, c, level}; }
};

std::vector<double> apply_perturbation(std::span<const double> x,
                                       const PerturbationSpec& spec,
                                       const Perturbation& perturbation,
                                       std::mt19937_64& rng);

/// Row-wise application over a matrix; rows are processed in order so the
/// random stream is identical to calling apply_perturbation per row.
Matrix apply_perturbation(const Matrix& x,
                          const PerturbationSpec& spec,
                          const Perturbation& perturbation,
                          std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// CSV I/O

/// Reads `f0,...,f{d-1},label`. When num_classes is not given it is
/// max(label) + 1 (at least 2). Errors carry the 1-based line number.
Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes = {});
void save_csv(const std::filesystem::path& path, const Dataset& dataset);

/// `index,region,true_label,observed_label`
void save_annotations(const std::filesystem::path& path, const PlantedPool& pool);

IndexList load_index_list(const std::filesystem::path& path);
void save_index_list(const std::filesystem::path& path, const IndexList& idx);

/// 17 significant digits, the shortest width that round-trips any double.
std::string format_double(double value);

}  // namespace tbu
