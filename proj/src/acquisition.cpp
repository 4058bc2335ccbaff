#include "tbu/acquisition.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include <fmt/format.h>

#include "tbu/laplace.hpp"

namespace tbu {

std::string_view to_string(AcquisitionKind kind) {
    switch (kind) {
        case AcquisitionKind::entropy: return "entropy";
        case AcquisitionKind::coreset: return "coreset";
        case AcquisitionKind::badge: return "badge";
    }
    return "unknown";
}

AcquisitionKind parse_acquisition(std::string_view name) {
    if (name == "entropy") return AcquisitionKind::entropy;
    if (name == "coreset") return AcquisitionKind::coreset;
    if (name == "badge") return AcquisitionKind::badge;
    throw ConfigError(fmt::format("unknown acquisition '{}'", name));
}

void AcquisitionRequest::validate() const {
    if (budget < 1) throw ConfigError("acquisition budget must be >= 1");
    if (budget > candidates.size()) {
        throw BudgetError(fmt::format("budget {} exceeds {} candidates", budget, candidates.size()));
    }
    std::unordered_set<RowIndex> seen;
    for (auto i : candidates) {
        if (!seen.insert(i).second) throw IntegrityError(fmt::format("candidate {} listed twice", i));
    }
}

namespace {

void check_budget(std::size_t k, std::size_t n) {
    if (k < 1) throw ConfigError("acquisition budget must be >= 1");
    if (k > n) throw BudgetError(fmt::format("budget {} exceeds {} candidates", k, n));
}

}  // namespace

IndexList select_top_k(std::span<const double> scores, const IndexList& candidates, std::size_t k) {
    if (scores.size() != candidates.size()) throw ShapeError("one score per candidate is required");
    check_budget(k, candidates.size());
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return candidates[a] < candidates[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    IndexList out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(candidates[order[i]]);
    return out;
}

IndexList select_entropy(const Matrix& probs, const IndexList& candidates, std::size_t k) {
    if (static_cast<std::size_t>(probs.rows()) != candidates.size()) throw ShapeError("one probability row per candidate is required");
    std::vector<double> h(candidates.size());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        h[static_cast<std::size_t>(i)] = predictive_entropy(Vector(probs.row(i).transpose()));
    }
    return select_top_k(h, candidates, k);
}

IndexList select_coreset(const Matrix& labeled_features,
                         const Matrix& candidate_features,
                         const IndexList& candidates,
                         std::size_t k) {
    if (labeled_features.rows() == 0) throw ConfigError("coreset selection needs a non-empty labeled set");
    if (static_cast<std::size_t>(candidate_features.rows()) != candidates.size()) {
        throw ShapeError("one feature row per candidate is required");
    }
    if (labeled_features.cols() != candidate_features.cols()) throw ShapeError("labeled and candidate features differ in width");
    check_budget(k, candidates.size());

    const auto n = candidate_features.rows();
    // Squared distances compared directly: identical points give exactly 0.
    std::vector<double> min_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < labeled_features.rows(); ++j) {
            best = std::min(best, (candidate_features.row(i) - labeled_features.row(j)).squaredNorm());
        }
        min_dist[static_cast<std::size_t>(i)] = best;
    }
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    IndexList out;
    out.reserve(k);
    for (std::size_t step = 0; step < k; ++step) {
        std::size_t pick = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
            if (taken[i]) continue;
            if (pick == static_cast<std::size_t>(n) || min_dist[i] > min_dist[pick] ||
                (min_dist[i] == min_dist[pick] && candidates[i] < candidates[pick])) {
                pick = i;
            }
        }
        taken[pick] = 1;
        out.push_back(candidates[pick]);
        const auto prow = candidate_features.row(static_cast<Eigen::Index>(pick));
        for (Eigen::Index i = 0; i < n; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            auto& d = min_dist[static_cast<std::size_t>(i)];
            d = std::min(d, (candidate_features.row(i) - prow).squaredNorm());
        }
    }
    return out;
}

Vector badge_embedding(const Vector& probs, const Vector& phi) {
    const auto C = probs.size();
    const auto F = phi.size();
    const auto top = static_cast<Eigen::Index>(argmax(probs));
    Vector g(C * F);
    for (Eigen::Index c = 0; c < C; ++c) {
        const double coeff = probs[c] - (c == top ? 1.0 : 0.0);
        g.segment(c * F, F) = coeff * phi;
    }
    return g;
}

Matrix badge_embeddings(const Matrix& probs, const Matrix& phi) {
    if (probs.rows() != phi.rows()) throw ShapeError("probabilities and features differ in row count");
    Matrix out(probs.rows(), probs.cols() * phi.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        out.row(i) = badge_embedding(probs.row(i).transpose(), phi.row(i).transpose()).transpose();
    }
    return out;
}

IndexList select_badge(const Matrix& embeddings, const IndexList& candidates, std::size_t k, std::uint64_t seed) {
    if (static_cast<std::size_t>(embeddings.rows()) != candidates.size()) {
        throw ShapeError("one embedding row per candidate is required");
    }
    check_budget(k, candidates.size());
    const auto n = static_cast<std::size_t>(embeddings.rows());
    std::mt19937_64 rng(seed);

    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    IndexList out;
    out.reserve(k);

    auto take = [&](std::size_t pick) {
        taken[pick] = 1;
        out.push_back(candidates[pick]);
        const auto prow = embeddings.row(static_cast<Eigen::Index>(pick));
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = taken[i] ? 0.0 : std::min(d2[i], (embeddings.row(static_cast<Eigen::Index>(i)) - prow).squaredNorm());
        }
    };

    take(std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))));
    while (out.size() < k) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = uniform01(rng) * total;
            double cum = 0.0;
            std::size_t last_positive = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                last_positive = i;
                cum += d2[i];
                if (cum > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) pick = last_positive;
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                if (pick == n || candidates[i] < candidates[pick]) pick = i;
            }
        }
        take(pick);
    }
    return out;
}

IndexList select(const ModelParams& model, const Dataset& dataset, const IndexList& labeled, const AcquisitionRequest& request) {
    request.validate();
    const Matrix x = dataset.rows(request.candidates);
    switch (request.kind) {
        case AcquisitionKind::entropy:
            return select_entropy(predict_softmax(model, x), request.candidates, request.budget);
        case AcquisitionKind::coreset:
            return select_coreset(forward_features(model, dataset.rows(labeled)), forward_features(model, x),
                                  request.candidates, request.budget);
        case AcquisitionKind::badge: {
            const Matrix phi = forward_features(model, x);
            const Matrix p = softmax_rows(phi * model.last_layer());
            return select_badge(badge_embeddings(p, phi), request.candidates, request.budget, request.seed);
        }
    }
    throw ConfigError("unknown acquisition kind");
}

}  // namespace tbu
