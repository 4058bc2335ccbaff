#include "tbu/bounding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include <fmt/format.h>

namespace tbu {

void FilterConfig::validate() const {
    if (!(q >= 0.0 && q <= 100.0)) throw ConfigError(fmt::format("percentile q={} outside [0, 100]", q));
    if (persistence_count < 1 || persistence_count > CheckpointTrace::kCheckpoints) {
        throw ConfigError(fmt::format("persistence_count {} outside [1, {}]", persistence_count, CheckpointTrace::kCheckpoints));
    }
}

void UncertaintyPartition::validate(const IndexList& unlabeled) const {
    std::unordered_set<RowIndex> pool(unlabeled.begin(), unlabeled.end());
    std::unordered_set<RowIndex> filtered;
    for (const IndexList* list : {&low_epistemic, &high_aleatoric}) {
        for (auto i : *list) {
            if (!pool.count(i)) throw IntegrityError(fmt::format("filtered index {} is not in the unlabeled pool", i));
            filtered.insert(i);
        }
    }
    std::unordered_set<RowIndex> cand;
    for (auto i : candidates) {
        if (!pool.count(i)) throw IntegrityError(fmt::format("candidate {} is not in the unlabeled pool", i));
        if (filtered.count(i)) throw IntegrityError(fmt::format("candidate {} is also filtered", i));
        if (!cand.insert(i).second) throw IntegrityError(fmt::format("candidate {} repeated", i));
    }
    if (cand.size() + filtered.size() != pool.size()) {
        throw IntegrityError("partition does not cover the unlabeled pool");
    }
}

std::optional<double> nearest_rank_percentile(std::vector<double> values, double q) {
    if (!(q >= 0.0 && q <= 100.0)) throw ConfigError(fmt::format("percentile q={} outside [0, 100]", q));
    if (values.empty()) return std::nullopt;
    // Guard against q*n/100 landing a hair above an integer.
    const double exact = q * static_cast<double>(values.size()) / 100.0;
    auto rank = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    if (rank == 0) return std::nullopt;
    rank = std::min(rank, values.size());
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

IndexList detect_le(std::span<const double> labeled_entropy,
                    std::span<const int> labeled_labels,
                    std::span<const double> unlabeled_entropy,
                    std::span<const int> unlabeled_predicted,
                    const IndexList& unlabeled_idx,
                    int num_classes,
                    double q) {
    if (!(q >= 0.0 && q <= 100.0)) throw ConfigError(fmt::format("percentile q={} outside [0, 100]", q));
    if (labeled_entropy.size() != labeled_labels.size()) throw ShapeError("labeled entropies and labels differ in length");
    if (unlabeled_entropy.size() != unlabeled_predicted.size() || unlabeled_entropy.size() != unlabeled_idx.size()) {
        throw ShapeError("unlabeled entropies, predictions and indices differ in length");
    }
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labeled_entropy.size(); ++i) {
        const int y = labeled_labels[i];
        if (y < 0 || y >= num_classes) throw ShapeError(fmt::format("label {} outside [0, {})", y, num_classes));
        per_class[static_cast<std::size_t>(y)].push_back(labeled_entropy[i]);
    }
    std::vector<std::optional<double>> cutoff(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        cutoff[static_cast<std::size_t>(c)] = nearest_rank_percentile(per_class[static_cast<std::size_t>(c)], q);
    }
    IndexList out;
    for (std::size_t i = 0; i < unlabeled_idx.size(); ++i) {
        const int c = unlabeled_predicted[i];
        if (c < 0 || c >= num_classes) throw ShapeError(fmt::format("predicted class {} outside [0, {})", c, num_classes));
        const auto& t = cutoff[static_cast<std::size_t>(c)];
        if (t && unlabeled_entropy[i] < *t) out.push_back(unlabeled_idx[i]);
    }
    return out;
}

IndexList detect_le(const PosteriorLinearClassifier& posterior,
                    const Matrix& labeled_phi,
                    std::span<const int> labeled_labels,
                    const Matrix& unlabeled_phi,
                    const IndexList& unlabeled_idx,
                    double q) {
    if (labeled_phi.rows() == 0) throw ConfigError("LE detection needs a non-empty labeled set");
    auto entropies = [&](const Matrix& phi, std::vector<int>* predicted) {
        const Matrix p = predict_meanfield(posterior, phi);
        std::vector<double> h(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const Vector row = p.row(i).transpose();
            h[static_cast<std::size_t>(i)] = predictive_entropy(row);
            if (predicted) predicted->push_back(static_cast<int>(argmax(row)));
        }
        return h;
    };
    const auto labeled_h = entropies(labeled_phi, nullptr);
    std::vector<int> predicted;
    const auto unlabeled_h = entropies(unlabeled_phi, &predicted);
    return detect_le(labeled_h, labeled_labels, unlabeled_h, predicted, unlabeled_idx, posterior.num_classes(), q);
}

IndexList detect_ha(const CheckpointTrace& trace, std::size_t persistence_count) {
    trace.validate();
    if (persistence_count < 1 || persistence_count > trace.checkpoints.size()) {
        throw ConfigError(fmt::format("persistence_count {} outside [1, {}]", persistence_count, trace.checkpoints.size()));
    }
    const std::size_t first = trace.checkpoints.size() - persistence_count;
    IndexList out;
    for (std::size_t r = 0; r < trace.rows.size(); ++r) {
        bool low = true;
        for (std::size_t k = first; k < trace.checkpoints.size() && low; ++k) {
            const auto& cp = trace.checkpoints[k];
            low = cp.confidence[r] < cp.tau[static_cast<std::size_t>(cp.predicted[r])];
        }
        if (low) out.push_back(trace.rows[r]);
    }
    return out;
}

UncertaintyPartition propose_candidates(const IndexList& unlabeled, const IndexList& le, const IndexList& ha) {
    std::unordered_set<RowIndex> pool(unlabeled.begin(), unlabeled.end());
    std::unordered_set<RowIndex> drop;
    for (const IndexList* list : {&le, &ha}) {
        for (auto i : *list) {
            if (!pool.count(i)) throw IntegrityError(fmt::format("filtered index {} is not in the unlabeled pool", i));
            drop.insert(i);
        }
    }
    UncertaintyPartition part;
    part.low_epistemic = le;
    part.high_aleatoric = ha;
    std::sort(part.low_epistemic.begin(), part.low_epistemic.end());
    std::sort(part.high_aleatoric.begin(), part.high_aleatoric.end());
    for (auto i : unlabeled) {
        if (!drop.count(i)) part.candidates.push_back(i);
    }
    std::sort(part.candidates.begin(), part.candidates.end());
    return part;
}

void save_partition(const std::filesystem::path& path, const UncertaintyPartition& partition) {
    std::map<RowIndex, std::vector<const char*>> rows;
    for (auto i : partition.low_epistemic) rows[i].push_back("LE");
    for (auto i : partition.high_aleatoric) rows[i].push_back("HA");
    for (auto i : partition.candidates) rows[i].push_back("CAND");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
    out << "index,bucket\n";
    for (const auto& [index, buckets] : rows) {
        for (const char* b : buckets) out << index << ',' << b << '\n';
    }
}

}  // namespace tbu
