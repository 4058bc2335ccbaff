#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbu/common.hpp"
#include "tbu/datapool.hpp"
#include "tbu/thresholds.hpp"

namespace tbu {

enum class Activation { relu, tanh };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

/// Multi-layer perceptron shape. With no hidden layers the model is
/// multinomial logistic regression on the raw inputs.
struct MlpSpec {
    std::vector<std::size_t> hidden_widths;
    Activation activation = Activation::relu;

    /// Width of phi(x): last hidden width (or input width) plus the bias coordinate.
    std::size_t feature_dim(std::size_t input_dim) const;
    void validate() const;

    bool operator==(const MlpSpec&) const = default;
};

/// Every layer is stored as an augmented (in + 1) x out matrix whose last row
/// multiplies the constant 1; the final layer is the F x C classifier w.
struct ModelParams {
    MlpSpec spec;
    std::size_t input_dim = 0;
    int num_classes = 0;
    std::vector<Matrix> layers;

    const Matrix& last_layer() const { return layers.back(); }
    Matrix& last_layer() { return layers.back(); }
    std::size_t feature_dim() const { return spec.feature_dim(input_dim); }

    bool all_finite() const;
    double squared_norm() const;
};

/// Glorot-uniform hidden layers, small uniform classifier, zero biases.
ModelParams init_params(const MlpSpec& spec, std::size_t input_dim, int num_classes, std::uint64_t seed);

/// phi(x) for every row: last hidden activation with a trailing 1.
Matrix forward_features(const ModelParams& params, const Matrix& x);
Vector forward_features(const ModelParams& params, std::span<const double> x);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);
Vector softmax(const Vector& logits);

Matrix predict_softmax(const ModelParams& params, const Matrix& x);
Vector predict_softmax(const ModelParams& params, std::span<const double> x);

/// Weighted cross-entropy plus (weight_decay / 2) * ||theta||^2 over all
/// parameters, with its analytic gradient (one matrix per layer).
struct LossAndGradient {
    double loss = 0.0;
    std::vector<Matrix> gradient;
};

LossAndGradient loss_and_gradient(const ModelParams& params,
                                  const Matrix& x,
                                  std::span<const int> labels,
                                  std::span<const double> row_weights,
                                  double weight_decay);

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::vector<double> decay_points{0.6, 0.8};  // fractions of epochs
    double decay_factor = 0.5;
    double weight_decay = 5e-4;
    double ema_eta = 0.99;
    double unlabeled_weight = 1.0;
    std::size_t unlabeled_ratio = 4;  // unlabeled batch = ratio * batch_size
    // Iterations per epoch; 0 picks ceil(|L| / batch) for supervised runs and
    // max(that, ceil(|U| / unlabeled batch)) for semi-supervised runs.
    std::size_t steps_per_epoch = 0;
    // Absolute floor on the pseudo-label acceptance threshold (0 = adaptive only).
    double threshold_floor = 0.0;
    PerturbationSpec views;
    std::uint64_t seed = 0;

    void validate() const;
    double learning_rate_at(std::size_t epoch) const;  // epoch is 0-based
};

/// Confidence snapshots of the unlabeled rows taken at epochs ceil(k E / 8),
/// k = 1..8, together with the class thresholds in force at that moment.
struct CheckpointTrace {
    static constexpr std::size_t kCheckpoints = 8;

    struct Checkpoint {
        std::size_t epoch = 0;
        std::vector<double> confidence;  // max_c p_c per row
        std::vector<int> predicted;      // argmax per row
        std::vector<double> tau;         // class thresholds
    };

    IndexList rows;  // dataset indices the per-row vectors refer to
    std::vector<Checkpoint> checkpoints;

    /// Throws IntegrityError on a malformed trace.
    void validate() const;
};

/// 1-based epochs after which the checkpoints are recorded.
std::array<std::size_t, CheckpointTrace::kCheckpoints> checkpoint_epochs(std::size_t epochs);

ModelParams train_supervised(const Dataset& dataset,
                             const IndexList& labeled,
                             const MlpSpec& spec,
                             const TrainConfig& config);

struct SemiSupervisedResult {
    ModelParams params;
    ThresholdState thresholds;
    CheckpointTrace trace;
};

SemiSupervisedResult train_semisupervised(const Dataset& dataset,
                                          const PoolState& pool,
                                          const MlpSpec& spec,
                                          const TrainConfig& config);

/// Optional row transform applied before scoring (e.g. corruption followed by
/// standardization).
using RowTransform = std::function<Matrix(const Matrix&)>;

/// Fraction of rows whose argmax (ties to the lowest class) equals the label.
double evaluate_accuracy(const ModelParams& params,
                         const Dataset& dataset,
                         const IndexList& idx,
                         const RowTransform& transform = {});

nlohmann::json to_json(const ModelParams& params);
ModelParams model_from_json(const nlohmann::json& doc);

}  // namespace tbu
