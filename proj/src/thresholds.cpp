#include "tbu/thresholds.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace tbu {

ThresholdState ThresholdState::initial(int num_classes, double eta) {
    if (num_classes < 2) throw ConfigError("threshold state needs at least two classes");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError(fmt::format("EMA coefficient {} outside [0, 1]", eta));
    ThresholdState s;
    s.global = 1.0 / num_classes;
    s.local.assign(static_cast<std::size_t>(num_classes), 1.0 / num_classes);
    s.eta = eta;
    return s;
}

ThresholdState update_thresholds(ThresholdState state, double mean_max_confidence, const Vector& mean_probs) {
    if (static_cast<std::size_t>(mean_probs.size()) != state.local.size()) {
        throw ShapeError(fmt::format("threshold state has {} classes, batch has {}", state.local.size(), mean_probs.size()));
    }
    const double eta = state.eta;
    state.global = eta * state.global + (1.0 - eta) * mean_max_confidence;
    for (std::size_t c = 0; c < state.local.size(); ++c) {
        state.local[c] = eta * state.local[c] + (1.0 - eta) * mean_probs[static_cast<Eigen::Index>(c)];
    }
    return state;
}

ThresholdState update_thresholds(ThresholdState state, const Matrix& batch_probs) {
    if (batch_probs.rows() == 0) {
        ++state.empty_updates;
        return state;
    }
    if (static_cast<std::size_t>(batch_probs.cols()) != state.local.size()) {
        throw ShapeError(fmt::format("threshold state has {} classes, batch has {}", state.local.size(), batch_probs.cols()));
    }
    const auto n = static_cast<double>(batch_probs.rows());
    double max_sum = 0.0;
    for (Eigen::Index i = 0; i < batch_probs.rows(); ++i) max_sum += batch_probs.row(i).maxCoeff();
    Vector mean = batch_probs.colwise().sum().transpose() / n;
    return update_thresholds(std::move(state), max_sum / n, mean);
}

std::vector<double> class_threshold(const ThresholdState& state) {
    const double top = *std::max_element(state.local.begin(), state.local.end());
    if (!(top > 0.0)) throw NumericError("local thresholds are all zero");
    std::vector<double> tau(state.local.size());
    for (std::size_t c = 0; c < tau.size(); ++c) tau[c] = state.global * (state.local[c] / top);
    return tau;
}

}  // namespace tbu
