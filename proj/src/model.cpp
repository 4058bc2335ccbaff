#include "tbu/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace tbu {

std::string_view to_string(Activation activation) {
    switch (activation) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "unknown";
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError(fmt::format("unknown activation '{}'", name));
}

std::size_t MlpSpec::feature_dim(std::size_t input_dim) const {
    return (hidden_widths.empty() ? input_dim : hidden_widths.back()) + 1;
}

void MlpSpec::validate() const {
    for (auto w : hidden_widths) {
        if (w < 1) throw ConfigError("hidden widths must be >= 1");
    }
}

bool ModelParams::all_finite() const {
    return std::all_of(layers.begin(), layers.end(), [](const Matrix& m) { return m.allFinite(); });
}

double ModelParams::squared_norm() const {
    double s = 0.0;
    for (const auto& m : layers) s += m.squaredNorm();
    return s;
}

ModelParams init_params(const MlpSpec& spec, std::size_t input_dim, int num_classes, std::uint64_t seed) {
    spec.validate();
    if (input_dim < 1) throw ConfigError("input dimension must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    ModelParams p;
    p.spec = spec;
    p.input_dim = input_dim;
    p.num_classes = num_classes;

    std::mt19937_64 rng(seed);
    auto fill = [&](Matrix& m, double limit) {
        for (Eigen::Index i = 0; i + 1 < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
        }
        m.row(m.rows() - 1).setZero();
    };
    std::size_t in = input_dim;
    for (auto width : spec.hidden_widths) {
        Matrix w(static_cast<Eigen::Index>(in + 1), static_cast<Eigen::Index>(width));
        fill(w, std::sqrt(6.0 / static_cast<double>(in + width)));
        p.layers.push_back(std::move(w));
        in = width;
    }
    Matrix last(static_cast<Eigen::Index>(in + 1), num_classes);
    fill(last, std::sqrt(6.0 / static_cast<double>(in + static_cast<std::size_t>(num_classes))));
    p.layers.push_back(std::move(last));
    return p;
}

namespace {

void check_width(const ModelParams& params, Eigen::Index cols) {
    if (static_cast<std::size_t>(cols) != params.input_dim) {
        throw ShapeError(fmt::format("model expects {} input features, got {}", params.input_dim, cols));
    }
}

void activate(Matrix& z, Activation activation) {
    switch (activation) {
        case Activation::relu: z = z.cwiseMax(0.0); break;
        case Activation::tanh: z = z.array().tanh().matrix(); break;
    }
}

/// a * W[0:in] + W[in] (broadcast bias row).
Matrix affine(const Matrix& a, const Matrix& w) {
    const auto in = w.rows() - 1;
    Matrix z = a * w.topRows(in);
    z.rowwise() += w.row(in);
    return z;
}

struct ForwardCache {
    std::vector<Matrix> activations;  // input, then every hidden activation
    Matrix phi;                       // last activation with appended ones column
    Matrix logits;
};

ForwardCache forward(const ModelParams& params, const Matrix& x) {
    check_width(params, x.cols());
    ForwardCache cache;
    cache.activations.push_back(x);
    for (std::size_t k = 0; k + 1 < params.layers.size(); ++k) {
        Matrix z = affine(cache.activations.back(), params.layers[k]);
        activate(z, params.spec.activation);
        cache.activations.push_back(std::move(z));
    }
    const Matrix& last = cache.activations.back();
    cache.phi.resize(last.rows(), last.cols() + 1);
    cache.phi.leftCols(last.cols()) = last;
    cache.phi.col(last.cols()).setOnes();
    cache.logits = cache.phi * params.last_layer();
    return cache;
}

}  // namespace

Matrix forward_features(const ModelParams& params, const Matrix& x) { return forward(params, x).phi; }

Vector forward_features(const ModelParams& params, std::span<const double> x) {
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    return forward(params, row).phi.row(0).transpose();
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - m).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

Vector softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector p = (logits.array() - m).exp().matrix();
    return p / p.sum();
}

Matrix predict_softmax(const ModelParams& params, const Matrix& x) { return softmax_rows(forward(params, x).logits); }

Vector predict_softmax(const ModelParams& params, std::span<const double> x) {
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    return predict_softmax(params, row).row(0).transpose();
}

LossAndGradient loss_and_gradient(const ModelParams& params,
                                  const Matrix& x,
                                  std::span<const int> labels,
                                  std::span<const double> row_weights,
                                  double weight_decay) {
    if (labels.size() != static_cast<std::size_t>(x.rows()) || row_weights.size() != labels.size()) {
        throw ShapeError("labels and weights must have one entry per input row");
    }
    ForwardCache cache = forward(params, x);
    const auto n = x.rows();
    const auto C = cache.logits.cols();

    LossAndGradient out;
    Matrix delta(n, C);  // d loss / d logits
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = cache.logits.row(i).maxCoeff();
        const double lse = m + std::log((cache.logits.row(i).array() - m).exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= C) throw ShapeError(fmt::format("label {} outside [0, {})", y, C));
        const double w = row_weights[static_cast<std::size_t>(i)];
        out.loss += w * (lse - cache.logits(i, y));
        delta.row(i) = w * (cache.logits.row(i).array() - lse).exp().matrix();
        delta(i, y) -= w;
    }

    out.gradient.resize(params.layers.size());
    out.gradient.back() = cache.phi.transpose() * delta;
    Matrix upstream = (delta * params.last_layer().transpose()).leftCols(cache.phi.cols() - 1);
    for (std::size_t k = params.layers.size() - 1; k-- > 0;) {
        const Matrix& a_out = cache.activations[k + 1];
        Matrix dz = upstream;
        switch (params.spec.activation) {
            case Activation::relu:
                dz.array() *= (a_out.array() > 0.0).cast<double>();
                break;
            case Activation::tanh:
                dz.array() *= 1.0 - a_out.array().square();
                break;
        }
        const Matrix& a_in = cache.activations[k];
        const Matrix& w = params.layers[k];
        Matrix g(w.rows(), w.cols());
        g.topRows(w.rows() - 1) = a_in.transpose() * dz;
        g.row(w.rows() - 1) = dz.colwise().sum();
        out.gradient[k] = std::move(g);
        if (k > 0) upstream = dz * w.topRows(w.rows() - 1).transpose();
    }

    out.loss += 0.5 * weight_decay * params.squared_norm();
    for (std::size_t k = 0; k < params.layers.size(); ++k) out.gradient[k] += weight_decay * params.layers[k];
    return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < CheckpointTrace::kCheckpoints) {
        throw ConfigError(fmt::format("epochs must be >= {}, got {}", CheckpointTrace::kCheckpoints, epochs));
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay > 0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be > 0");
    if (!(ema_eta >= 0.0 && ema_eta < 1.0)) throw ConfigError(fmt::format("ema_eta {} outside [0, 1)", ema_eta));
    if (!(unlabeled_weight >= 0) || !std::isfinite(unlabeled_weight)) throw ConfigError("unlabeled_weight must be >= 0");
    if (unlabeled_ratio < 1) throw ConfigError("unlabeled_ratio must be >= 1");
    if (!(decay_factor > 0)) throw ConfigError("decay_factor must be > 0");
    for (double p : decay_points) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("decay_points must lie in [0, 1]");
    }
    views.validate();
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (double p : decay_points) {
        if (static_cast<double>(epoch) >= p * static_cast<double>(epochs)) lr *= decay_factor;
    }
    return lr;
}

void CheckpointTrace::validate() const {
    if (checkpoints.size() != kCheckpoints) {
        throw IntegrityError(fmt::format("trace has {} checkpoints, expected {}", checkpoints.size(), kCheckpoints));
    }
    for (const auto& cp : checkpoints) {
        if (cp.confidence.size() != rows.size() || cp.predicted.size() != rows.size()) {
            throw IntegrityError("trace checkpoint row count does not match the traced rows");
        }
        if (cp.tau.empty()) throw IntegrityError("trace checkpoint is missing its threshold vector");
        for (double c : cp.confidence) {
            if (!(c >= 0.0 && c <= 1.0)) throw IntegrityError("trace confidence outside [0, 1]");
        }
        for (int k : cp.predicted) {
            if (k < 0 || static_cast<std::size_t>(k) >= cp.tau.size()) throw IntegrityError("trace predicted class out of range");
        }
    }
}

std::array<std::size_t, CheckpointTrace::kCheckpoints> checkpoint_epochs(std::size_t epochs) {
    std::array<std::size_t, CheckpointTrace::kCheckpoints> out{};
    for (std::size_t k = 1; k <= CheckpointTrace::kCheckpoints; ++k) {
        out[k - 1] = (k * epochs + CheckpointTrace::kCheckpoints - 1) / CheckpointTrace::kCheckpoints;
    }
    return out;
}

namespace {

// Cycles through reshuffled passes of an index list.
class BatchStream {
public:
    BatchStream(IndexList rows, std::size_t batch, std::uint64_t seed)
        : rows_(std::move(rows)), batch_(batch), rng_(seed) {}

    IndexList next() {
        if (cursor_ >= rows_.size() || cursor_ == 0) {
            std::shuffle(rows_.begin(), rows_.end(), rng_);
            cursor_ = 0;
        }
        const std::size_t take = std::min(batch_, rows_.size() - cursor_);
        IndexList out(rows_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                      rows_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
        cursor_ += take;
        if (cursor_ >= rows_.size()) cursor_ = 0;
        return out;
    }

private:
    IndexList rows_;
    std::size_t batch_;
    std::size_t cursor_ = 0;
    std::mt19937_64 rng_;
};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void sgd_step(ModelParams& params, const LossAndGradient& lg, double lr) {
    for (std::size_t k = 0; k < params.layers.size(); ++k) params.layers[k] -= lr * lg.gradient[k];
}

void check_finite(double loss, std::size_t epoch) {
    if (!std::isfinite(loss)) throw TrainingError(fmt::format("training diverged (non-finite loss) at epoch {}", epoch + 1));
}

enum class StreamTag : std::uint64_t { init = 1, labeled = 2, unlabeled = 3, views = 4 };

std::uint64_t stream_seed(const TrainConfig& config, StreamTag tag) {
    return derive_seed(config.seed, static_cast<std::uint64_t>(tag));
}

}  // namespace

ModelParams train_supervised(const Dataset& dataset,
                             const IndexList& labeled,
                             const MlpSpec& spec,
                             const TrainConfig& config) {
    config.validate();
    if (labeled.empty()) throw ConfigError("supervised training needs at least one labeled row");
    ModelParams params = init_params(spec, dataset.dim(), dataset.num_classes, stream_seed(config, StreamTag::init));
    BatchStream stream(labeled, config.batch_size, stream_seed(config, StreamTag::labeled));
    const std::size_t steps = config.steps_per_epoch ? config.steps_per_epoch : ceil_div(labeled.size(), config.batch_size);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.learning_rate_at(epoch);
        for (std::size_t s = 0; s < steps; ++s) {
            const IndexList batch = stream.next();
            const Matrix x = dataset.rows(batch);
            const auto y = dataset.labels_of(batch);
            const std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
            const auto lg = loss_and_gradient(params, x, y, w, config.weight_decay);
            check_finite(lg.loss, epoch);
            sgd_step(params, lg, lr);
        }
    }
    if (!params.all_finite()) throw TrainingError("training produced non-finite parameters");
    return params;
}

SemiSupervisedResult train_semisupervised(const Dataset& dataset,
                                          const PoolState& pool,
                                          const MlpSpec& spec,
                                          const TrainConfig& config) {
    config.validate();
    if (pool.labeled.empty()) throw ConfigError("semi-supervised training needs at least one labeled row");
    if (pool.unlabeled.empty()) throw ConfigError("semi-supervised training needs a non-empty unlabeled pool");

    SemiSupervisedResult result;
    ModelParams& params = result.params;
    params = init_params(spec, dataset.dim(), dataset.num_classes, stream_seed(config, StreamTag::init));
    result.thresholds = ThresholdState::initial(dataset.num_classes, config.ema_eta);
    result.trace.rows = pool.unlabeled;

    const std::size_t unlabeled_batch = config.batch_size * config.unlabeled_ratio;
    BatchStream labeled_stream(pool.labeled, config.batch_size, stream_seed(config, StreamTag::labeled));
    BatchStream unlabeled_stream(pool.unlabeled, unlabeled_batch, stream_seed(config, StreamTag::unlabeled));
    std::mt19937_64 view_rng(stream_seed(config, StreamTag::views));

    const std::size_t steps = config.steps_per_epoch
                                  ? config.steps_per_epoch
                                  : std::max(ceil_div(pool.labeled.size(), config.batch_size),
                                             ceil_div(pool.unlabeled.size(), unlabeled_batch));
    const auto marks = checkpoint_epochs(config.epochs);
    std::size_t next_mark = 0;
    const Matrix unlabeled_x = dataset.rows(pool.unlabeled);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.learning_rate_at(epoch);
        for (std::size_t s = 0; s < steps; ++s) {
            const IndexList lb = labeled_stream.next();
            const IndexList ub = unlabeled_stream.next();

            // Pseudo-labels and threshold statistics come from the weak view.
            const Matrix weak = apply_perturbation(dataset.rows(ub), config.views, Perturbation::weak(), view_rng);
            const Matrix weak_p = predict_softmax(params, weak);
            result.thresholds = update_thresholds(std::move(result.thresholds), weak_p);
            const auto tau = class_threshold(result.thresholds);

            IndexList accepted;
            std::vector<int> pseudo;
            for (Eigen::Index i = 0; i < weak_p.rows(); ++i) {
                const auto c = argmax(weak_p.row(i));
                const double conf = weak_p(i, static_cast<Eigen::Index>(c));
                if (conf >= std::max(tau[c], config.threshold_floor)) {
                    accepted.push_back(ub[static_cast<std::size_t>(i)]);
                    pseudo.push_back(static_cast<int>(c));
                }
            }

            // Masked rows are left out of the batch entirely, so a fully masked
            // step is bit-identical to a supervised step.
            const auto nl = static_cast<Eigen::Index>(lb.size());
            const auto na = static_cast<Eigen::Index>(accepted.size());
            Matrix x(nl + na, dataset.features.cols());
            x.topRows(nl) = dataset.rows(lb);
            std::vector<int> y = dataset.labels_of(lb);
            std::vector<double> w(lb.size(), 1.0 / static_cast<double>(lb.size()));
            if (na > 0) {
                x.bottomRows(na) = apply_perturbation(dataset.rows(accepted), config.views, Perturbation::strong(), view_rng);
                y.insert(y.end(), pseudo.begin(), pseudo.end());
                w.insert(w.end(), accepted.size(), config.unlabeled_weight / static_cast<double>(ub.size()));
            }
            const auto lg = loss_and_gradient(params, x, y, w, config.weight_decay);
            check_finite(lg.loss, epoch);
            sgd_step(params, lg, lr);
        }

        while (next_mark < marks.size() && marks[next_mark] == epoch + 1) {
            CheckpointTrace::Checkpoint cp;
            cp.epoch = epoch + 1;
            const Matrix p = predict_softmax(params, unlabeled_x);
            cp.confidence.resize(static_cast<std::size_t>(p.rows()));
            cp.predicted.resize(static_cast<std::size_t>(p.rows()));
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                const auto c = argmax(p.row(i));
                cp.predicted[static_cast<std::size_t>(i)] = static_cast<int>(c);
                cp.confidence[static_cast<std::size_t>(i)] = p(i, static_cast<Eigen::Index>(c));
            }
            cp.tau = class_threshold(result.thresholds);
            result.trace.checkpoints.push_back(std::move(cp));
            ++next_mark;
        }
    }
    if (!params.all_finite()) throw TrainingError("training produced non-finite parameters");
    return result;
}

double evaluate_accuracy(const ModelParams& params,
                         const Dataset& dataset,
                         const IndexList& idx,
                         const RowTransform& transform) {
    if (idx.empty()) throw ConfigError("accuracy requires a non-empty index set");
    Matrix x = dataset.rows(idx);
    if (transform) x = transform(x);
    const Matrix p = predict_softmax(params, x);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (static_cast<int>(argmax(p.row(i))) == dataset.labels[idx[static_cast<std::size_t>(i)]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

nlohmann::json to_json(const ModelParams& params) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& m : params.layers) {
        std::vector<double> data(m.data(), m.data() + m.size());
        layers.push_back({{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
    }
    return {
        {"spec",
         {{"input_dim", params.input_dim},
          {"num_classes", params.num_classes},
          {"hidden_widths", params.spec.hidden_widths},
          {"activation", std::string(to_string(params.spec.activation))}}},
        {"layers", layers},
    };
}

ModelParams model_from_json(const nlohmann::json& doc) {
    try {
        ModelParams p;
        const auto& spec = doc.at("spec");
        p.input_dim = spec.at("input_dim").get<std::size_t>();
        p.num_classes = spec.at("num_classes").get<int>();
        p.spec.hidden_widths = spec.at("hidden_widths").get<std::vector<std::size_t>>();
        p.spec.activation = parse_activation(spec.at("activation").get<std::string>());
        for (const auto& layer : doc.at("layers")) {
            const auto rows = layer.at("rows").get<Eigen::Index>();
            const auto cols = layer.at("cols").get<Eigen::Index>();
            const auto data = layer.at("data").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("layer data size mismatch");
            p.layers.emplace_back(Eigen::Map<const Matrix>(data.data(), rows, cols));
        }
        if (p.layers.size() != p.spec.hidden_widths.size() + 1) throw ParseError("layer count does not match spec");
        if (static_cast<std::size_t>(p.last_layer().rows()) != p.feature_dim() ||
            p.last_layer().cols() != p.num_classes) {
            throw ParseError("classifier shape does not match spec");
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(fmt::format("malformed model document: {}", e.what()));
    }
}

}  // namespace tbu
