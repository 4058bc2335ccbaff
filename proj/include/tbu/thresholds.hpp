#pragma once

#include <cstddef>
#include <vector>

#include "tbu/common.hpp"

namespace tbu {

/// Self-adaptive confidence thresholds: a global EMA of the batch-mean
/// top-class confidence and per-class EMAs of the batch-mean class
/// probability. Both start at 1/C.
struct ThresholdState {
    double global = 0.5;
    std::vector<double> local;
    double eta = 0.99;
    // Number of update calls that received an empty batch.
    std::size_t empty_updates = 0;

    static ThresholdState initial(int num_classes, double eta);

    int num_classes() const { return static_cast<int>(local.size()); }
};

/// EMA step from precomputed batch statistics: the mean of per-row maxima
/// and the mean probability vector.
ThresholdState update_thresholds(ThresholdState state, double mean_max_confidence, const Vector& mean_probs);

/// EMA step over a batch of probability rows. An empty batch leaves the
/// thresholds unchanged and bumps empty_updates.
ThresholdState update_thresholds(ThresholdState state, const Matrix& batch_probs);

/// tau_c = g * (l_c / max_c' l_c'). The class holding the largest local
/// threshold receives exactly g.
std::vector<double> class_threshold(const ThresholdState& state);

}  // namespace tbu
