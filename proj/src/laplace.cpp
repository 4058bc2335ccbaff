#include "tbu/laplace.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace tbu {

Matrix shared_precision(const Matrix& phi, std::span<const double> p_star, std::size_t feature_dim) {
    if (static_cast<std::size_t>(phi.rows()) != p_star.size()) {
        throw ShapeError(fmt::format("{} feature rows but {} confidences", phi.rows(), p_star.size()));
    }
    const auto f = static_cast<Eigen::Index>(feature_dim);
    if (phi.rows() > 0 && phi.cols() != f) {
        throw ShapeError(fmt::format("feature rows have width {}, expected {}", phi.cols(), feature_dim));
    }
    if (!phi.allFinite()) throw NumericError("non-finite feature values in covariance fit");
    Eigen::VectorXd coeff(phi.rows());
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const double p = p_star[static_cast<std::size_t>(i)];
        if (!(p >= 0.0 && p <= 1.0)) throw NumericError(fmt::format("confidence {} outside [0, 1]", p));
        coeff[i] = p * (1.0 - p);
    }
    Matrix precision = Matrix::Identity(f, f);
    if (phi.rows() > 0) precision.noalias() += phi.transpose() * coeff.asDiagonal() * phi;
    return precision;
}

Matrix fit_shared_covariance(const Matrix& phi, std::span<const double> p_star, std::size_t feature_dim) {
    const Matrix precision = shared_precision(phi, p_star, feature_dim);
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) throw NumericError("precision matrix is not positive-definite");
    Matrix sigma = llt.solve(Matrix::Identity(precision.rows(), precision.cols()));
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

double logit_variance(const Matrix& sigma_hat, const Vector& phi) {
    if (sigma_hat.rows() != phi.size() || sigma_hat.cols() != phi.size()) {
        throw ShapeError(fmt::format("covariance is {}x{}, feature has {} entries", sigma_hat.rows(), sigma_hat.cols(), phi.size()));
    }
    return std::max(0.0, phi.dot(sigma_hat * phi));
}

Vector meanfield_from_logits(const Vector& logits, double lambda, double variance) {
    const double scale = std::sqrt(1.0 + lambda * variance);
    const Vector z = logits / scale;
    const double m = z.maxCoeff();
    Vector p = (z.array() - m).exp().matrix();
    return p / p.sum();
}

Vector predict_meanfield(const PosteriorLinearClassifier& posterior, const Vector& phi) {
    const double v = logit_variance(posterior.sigma_hat, phi);
    return meanfield_from_logits(posterior.mu.transpose() * phi, posterior.lambda, v);
}

Matrix predict_meanfield(const PosteriorLinearClassifier& posterior, const Matrix& phi) {
    if (static_cast<std::size_t>(phi.cols()) != posterior.feature_dim()) {
        throw ShapeError(fmt::format("features have width {}, posterior expects {}", phi.cols(), posterior.feature_dim()));
    }
    const Matrix logits = phi * posterior.mu;
    const Matrix projected = phi * posterior.sigma_hat;
    Matrix out(phi.rows(), posterior.mu.cols());
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const double v = std::max(0.0, projected.row(i).dot(phi.row(i)));
        out.row(i) = meanfield_from_logits(logits.row(i).transpose(), posterior.lambda, v).transpose();
    }
    return out;
}

namespace {

struct NllTable {
    Matrix logits;
    Vector variance;
};

NllTable prepare(const PosteriorLinearClassifier& posterior, const Matrix& phi) {
    if (static_cast<std::size_t>(phi.cols()) != posterior.feature_dim()) {
        throw ShapeError(fmt::format("features have width {}, posterior expects {}", phi.cols(), posterior.feature_dim()));
    }
    NllTable t;
    t.logits = phi * posterior.mu;
    const Matrix projected = phi * posterior.sigma_hat;
    t.variance.resize(phi.rows());
    for (Eigen::Index i = 0; i < phi.rows(); ++i) t.variance[i] = std::max(0.0, projected.row(i).dot(phi.row(i)));
    return t;
}

double nll_at(const NllTable& t, std::span<const int> labels, double lambda) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < t.logits.rows(); ++i) {
        const double scale = std::sqrt(1.0 + lambda * t.variance[i]);
        const Eigen::RowVectorXd z = t.logits.row(i) / scale;
        const double m = z.maxCoeff();
        const double lse = m + std::log((z.array() - m).exp().sum());
        total += lse - z[labels[static_cast<std::size_t>(i)]];
    }
    return total / static_cast<double>(t.logits.rows());
}

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes) {
    if (labels.size() != static_cast<std::size_t>(rows)) throw ShapeError("one label per validation row is required");
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw ShapeError(fmt::format("label {} outside [0, {})", y, num_classes));
    }
}

}  // namespace

double meanfield_nll(const PosteriorLinearClassifier& posterior, const Matrix& phi, std::span<const int> labels) {
    if (phi.rows() == 0) throw ConfigError("NLL requires at least one row");
    check_labels(labels, phi.rows(), posterior.num_classes());
    return nll_at(prepare(posterior, phi), labels, posterior.lambda);
}

LambdaSearch calibrate_lambda(const PosteriorLinearClassifier& posterior, const Matrix& phi, std::span<const int> labels) {
    if (phi.rows() == 0) throw ConfigError("lambda calibration requires a non-empty validation set");
    check_labels(labels, phi.rows(), posterior.num_classes());
    const NllTable table = prepare(posterior, phi);

    LambdaSearch best;
    best.lambda = 0.0;
    best.nll = nll_at(table, labels, 0.0);
    best.nll_at_zero = best.nll;
    best.evaluations = 1;
    auto consider = [&](double lambda, double nll) {
        ++best.evaluations;
        if (nll < best.nll || (nll == best.nll && lambda < best.lambda)) {
            best.lambda = lambda;
            best.nll = nll;
        }
    };
    auto eval_log = [&](double log_lambda) {
        const double lambda = std::pow(10.0, log_lambda);
        const double nll = nll_at(table, labels, lambda);
        consider(lambda, nll);
        return nll;
    };

    eval_log(kLogLambdaMin);
    eval_log(kLogLambdaMax);

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = kLogLambdaMin;
    double b = kLogLambdaMax;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = eval_log(c);
    double fd = eval_log(d);
    for (int it = 0; it < kGoldenIterations; ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval_log(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval_log(d);
        }
    }
    return best;
}

double predictive_entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::max(0.0, h);
}

double predictive_entropy(const Vector& p) {
    return predictive_entropy(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

nlohmann::json to_json(const PosteriorLinearClassifier& posterior) {
    auto rows = [](const Matrix& m) {
        nlohmann::json out = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            std::vector<double> r(m.row(i).data(), m.row(i).data() + m.cols());
            out.push_back(r);
        }
        return out;
    };
    return {{"mu", rows(posterior.mu)}, {"sigma_hat", rows(posterior.sigma_hat)}, {"lambda", posterior.lambda}};
}

PosteriorLinearClassifier posterior_from_json(const nlohmann::json& doc) {
    auto matrix = [](const nlohmann::json& j) {
        const auto rows = j.get<std::vector<std::vector<double>>>();
        Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) throw ParseError("ragged matrix in posterior document");
            for (std::size_t j2 = 0; j2 < rows[i].size(); ++j2) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j2)) = rows[i][j2];
            }
        }
        return m;
    };
    try {
        PosteriorLinearClassifier p;
        p.mu = matrix(doc.at("mu"));
        p.sigma_hat = matrix(doc.at("sigma_hat"));
        p.lambda = doc.at("lambda").get<double>();
        if (p.sigma_hat.rows() != p.mu.rows() || p.sigma_hat.cols() != p.mu.rows()) {
            throw ParseError("posterior covariance shape does not match mu");
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(fmt::format("malformed posterior document: {}", e.what()));
    }
}

}  // namespace tbu
