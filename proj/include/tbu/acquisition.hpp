#pragma once

#include <cstdint>
#include <string_view>

#include "tbu/common.hpp"
#include "tbu/datapool.hpp"
#include "tbu/model.hpp"

namespace tbu {

enum class AcquisitionKind { entropy, coreset, badge };

std::string_view to_string(AcquisitionKind kind);
AcquisitionKind parse_acquisition(std::string_view name);

struct AcquisitionRequest {
    AcquisitionKind kind = AcquisitionKind::entropy;
    std::size_t budget = 1;
    IndexList candidates;
    std::uint64_t seed = 0;  // badge only

    void validate() const;
};

/// Top-K rows by score, descending; equal scores go to the lower dataset index.
/// `scores[i]` belongs to `candidates[i]`.
IndexList select_top_k(std::span<const double> scores, const IndexList& candidates, std::size_t k);

/// Top-K softmax entropy. `probs` rows are aligned with `candidates`.
IndexList select_entropy(const Matrix& probs, const IndexList& candidates, std::size_t k);

/// k-center greedy: repeatedly take the candidate farthest (Euclidean) from
/// the labeled rows and everything picked so far. Ties go to the lower index.
IndexList select_coreset(const Matrix& labeled_features,
                         const Matrix& candidate_features,
                         const IndexList& candidates,
                         std::size_t k);

/// Last-layer cross-entropy gradient under the model's own argmax label:
/// block c (length F) equals (p_c - [c == argmax p]) * phi.
Vector badge_embedding(const Vector& probs, const Vector& phi);
Matrix badge_embeddings(const Matrix& probs, const Matrix& phi);

/// k-means++ seeding over the embedding rows. The first pick is uniform; later
/// picks are drawn proportionally to the squared distance to the nearest pick.
/// If every remaining distance is zero the lowest unpicked index is taken.
IndexList select_badge(const Matrix& embeddings, const IndexList& candidates, std::size_t k, std::uint64_t seed);

/// Scores candidates with the model's plain softmax / features and dispatches
/// on request.kind. `dataset` must already be in the model's input space.
IndexList select(const ModelParams& model, const Dataset& dataset, const IndexList& labeled, const AcquisitionRequest& request);

}  // namespace tbu
