#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tbu/common.hpp"

namespace tbu {

/// Last-layer Laplace posterior with one covariance shared by every class
/// column of w, and the mean-field scaling lambda.
struct PosteriorLinearClassifier {
    Matrix mu;         // F x C MAP classifier
    Matrix sigma_hat;  // F x F, symmetric positive-definite
    double lambda = 0.0;

    std::size_t feature_dim() const { return static_cast<std::size_t>(mu.rows()); }
    int num_classes() const { return static_cast<int>(mu.cols()); }
};

/// (sum_i p*_i (1 - p*_i) phi_i phi_i^T + I)^{-1} via Cholesky. `phi` holds
/// one feature row per labeled example; with zero rows the result is I.
/// `feature_dim` is needed when phi has no rows.
Matrix fit_shared_covariance(const Matrix& phi, std::span<const double> p_star, std::size_t feature_dim);

/// Precision matrix sum_i p*_i (1 - p*_i) phi_i phi_i^T + I.
Matrix shared_precision(const Matrix& phi, std::span<const double> p_star, std::size_t feature_dim);

/// v(x) = phi^T Sigma phi
double logit_variance(const Matrix& sigma_hat, const Vector& phi);

/// softmax(phi^T mu / sqrt(1 + lambda v(x)))
Vector predict_meanfield(const PosteriorLinearClassifier& posterior, const Vector& phi);
Matrix predict_meanfield(const PosteriorLinearClassifier& posterior, const Matrix& phi);

/// Same predictor with v(x) supplied by the caller.
Vector meanfield_from_logits(const Vector& logits, double lambda, double variance);

/// Mean negative log-likelihood of the mean-field predictor on labeled rows.
double meanfield_nll(const PosteriorLinearClassifier& posterior, const Matrix& phi, std::span<const int> labels);

struct LambdaSearch {
    double lambda = 0.0;
    double nll = 0.0;
    double nll_at_zero = 0.0;
    std::size_t evaluations = 0;
};

/// Golden-section search over log10(lambda) in [-4, 4] (60 iterations) plus
/// probes at 0 and both bracket ends. The smallest NLL wins; exact ties go to
/// the smaller lambda. The lambda field of `posterior` is ignored.
LambdaSearch calibrate_lambda(const PosteriorLinearClassifier& posterior, const Matrix& phi, std::span<const int> labels);

/// Search bracket used by calibrate_lambda, in log10 units.
inline constexpr double kLogLambdaMin = -4.0;
inline constexpr double kLogLambdaMax = 4.0;
inline constexpr int kGoldenIterations = 60;

/// -sum p_c ln p_c with 0 ln 0 = 0.
double predictive_entropy(std::span<const double> p);
double predictive_entropy(const Vector& p);

nlohmann::json to_json(const PosteriorLinearClassifier& posterior);
PosteriorLinearClassifier posterior_from_json(const nlohmann::json& doc);

}  // namespace tbu
