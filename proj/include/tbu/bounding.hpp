#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tbu/common.hpp"
#include "tbu/laplace.hpp"
#include "tbu/model.hpp"
#include "tbu/thresholds.hpp"

namespace tbu {

struct FilterConfig {
    double q = 10.0;                    // percentile in [0, 100]
    std::size_t persistence_count = 5;  // trailing checkpoints, in [1, 8]

    void validate() const;
};

/// LE and HA may overlap; candidates never intersect either.
struct UncertaintyPartition {
    IndexList low_epistemic;     // S_LE
    IndexList high_aleatoric;    // S_HA
    IndexList candidates;

    /// Throws IntegrityError unless LE u HA u candidates == unlabeled and
    /// candidates are disjoint from LE u HA.
    void validate(const IndexList& unlabeled) const;
};

/// ceil(q/100 * n)-th smallest value (1-based); nullopt when the rank is 0
/// or the sample is empty.
std::optional<double> nearest_rank_percentile(std::vector<double> values, double q);

/// LE detection on precomputed entropies. Labeled rows are grouped by their
/// label, unlabeled rows by predicted class; a row is LE when its entropy is
/// strictly below its class cutoff.
IndexList detect_le(std::span<const double> labeled_entropy,
                    std::span<const int> labeled_labels,
                    std::span<const double> unlabeled_entropy,
                    std::span<const int> unlabeled_predicted,
                    const IndexList& unlabeled_idx,
                    int num_classes,
                    double q);

/// LE detection with mean-field entropies from a calibrated posterior.
IndexList detect_le(const PosteriorLinearClassifier& posterior,
                    const Matrix& labeled_phi,
                    std::span<const int> labeled_labels,
                    const Matrix& unlabeled_phi,
                    const IndexList& unlabeled_idx,
                    double q);

/// Rows whose top confidence stayed below the contemporaneous class threshold
/// of their predicted class at each of the last `persistence_count` checkpoints.
IndexList detect_ha(const CheckpointTrace& trace, std::size_t persistence_count);

UncertaintyPartition propose_candidates(const IndexList& unlabeled, const IndexList& le, const IndexList& ha);

/// `index,bucket` with bucket in {LE, HA, CAND}; a row in both LE and HA
/// gets one line per bucket.
void save_partition(const std::filesystem::path& path, const UncertaintyPartition& partition);

}  // namespace tbu
