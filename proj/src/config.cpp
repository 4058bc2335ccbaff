#include "tbu/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

namespace tbu {

using nlohmann::json;

namespace {

std::string type_name(const json& v) { return v.type_name(); }

// Reads fields off one JSON object and rejects whatever was not consumed.
class ObjectReader {
public:
    ObjectReader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(fmt::format("{}: expected an object, got {}", where(), type_name(doc_)));
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        return it == doc_.end() ? nullptr : &*it;
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void read(const std::string& key, T& out) {
        const json* v = find(key);
        if (!v) return;
        out = convert<T>(*v, child(key));
    }

    void finish() const {
        for (auto it = doc_.begin(); it != doc_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(fmt::format("unknown key '{}'", child(it.key())));
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(fmt::format("{}: expected a boolean", path));
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", path));
            return v.get<std::string>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", path));
            if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
                throw ConfigError(fmt::format("{}: expected a non-negative integer", path));
            }
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", path));
            return v.get<T>();
        } else {
            // std::vector<...>
            if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array", path));
            T out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<typename T::value_type>(v[i], fmt::format("{}[{}]", path, i)));
            }
            return out;
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<std::string> string_or_list(const json& v, const std::string& path) {
    if (v.is_string()) return {v.get<std::string>()};
    auto out = ObjectReader::convert<std::vector<std::string>>(v, path);
    if (out.empty()) throw ConfigError(fmt::format("{}: list must not be empty", path));
    return out;
}

PerturbationSpec parse_views(const json& doc, const std::string& path, PerturbationSpec views) {
    ObjectReader r(doc, path);
    r.read("weak_noise_scale", views.weak_noise_scale);
    r.read("strong_noise_scale", views.strong_noise_scale);
    r.read("dropout_rate", views.dropout_rate);
    r.finish();
    return views;
}

TrainConfig parse_train(const json& doc, const std::string& path, TrainConfig train) {
    ObjectReader r(doc, path);
    r.read("epochs", train.epochs);
    r.read("batch_size", train.batch_size);
    r.read("learning_rate", train.learning_rate);
    r.read("decay_points", train.decay_points);
    r.read("decay_factor", train.decay_factor);
    r.read("weight_decay", train.weight_decay);
    r.read("ema_eta", train.ema_eta);
    r.read("unlabeled_weight", train.unlabeled_weight);
    r.read("unlabeled_ratio", train.unlabeled_ratio);
    r.read("steps_per_epoch", train.steps_per_epoch);
    r.read("threshold_floor", train.threshold_floor);
    if (const json* v = r.find("views")) train.views = parse_views(*v, r.child("views"), train.views);
    r.finish();
    return train;
}

ModelConfig parse_model(const json& doc, const std::string& path, ModelConfig model) {
    ObjectReader r(doc, path);
    r.read("hidden_widths", model.spec.hidden_widths);
    std::string activation;
    r.read("activation", activation);
    if (!activation.empty()) model.spec.activation = parse_activation(activation);
    if (const json* v = r.find("train")) model.train = parse_train(*v, r.child("train"), model.train);
    r.finish();
    return model;
}

PlantedPoolSpec parse_planted(const json& doc, const std::string& path) {
    PlantedPoolSpec spec;
    ObjectReader r(doc, path);
    r.read("num_classes", spec.num_classes);
    r.read("dim", spec.dim);
    r.read("means", spec.means);
    r.read("class_separation", spec.class_separation);
    r.read("stds", spec.stds);
    r.read("cluster_std", spec.cluster_std);
    r.read("core_fraction", spec.core_fraction);
    r.read("core_prototypes", spec.core_prototypes);
    r.read("core_radius", spec.core_radius);
    r.read("core_shift", spec.core_shift);
    r.read("core_spread", spec.core_spread);
    r.read("noise_fraction", spec.noise_fraction);
    r.read("band_spread", spec.band_spread);
    r.read("band_width", spec.band_width);
    r.read("flip_p", spec.flip_p);
    r.read("pool_size", spec.pool_size);
    r.read("validation_size", spec.validation_size);
    r.read("test_size", spec.test_size);
    r.read("seed", spec.seed);
    r.finish();
    spec.validate();
    return spec;
}

DataSource parse_data(const json& doc, const std::string& path) {
    ObjectReader r(doc, path);
    const json* planted = r.find("planted");
    const json* csv = r.find("csv");
    r.finish();
    if ((planted != nullptr) == (csv != nullptr)) {
        throw ConfigError(fmt::format("{}: exactly one of 'planted' or 'csv' is required", path));
    }
    if (planted) return parse_planted(*planted, r.child("planted"));
    CsvSource source;
    ObjectReader c(*csv, r.child("csv"));
    std::string file;
    c.read("path", file);
    if (file.empty()) throw ConfigError(fmt::format("{}.path is required", r.child("csv")));
    source.path = file;
    int classes = 0;
    c.read("num_classes", classes);
    if (classes > 0) source.num_classes = classes;
    c.read("validation", source.validation);
    c.read("test", source.test);
    c.finish();
    return source;
}

}  // namespace

PlantedPoolSpec parse_planted_spec(const json& doc) { return parse_planted(doc, ""); }

ModelConfig parse_model_config(const json& doc, const ModelConfig& defaults) { return parse_model(doc, "", defaults); }

RunConfig parse_run_config(const json& doc) {
    ExperimentConfig base = default_experiment();
    RunConfig run;
    ObjectReader r(doc, "");

    r.read("name", run.name);
    if (const json* v = r.find("data")) base.data = parse_data(*v, "data");
    std::vector<std::string> methods{std::string(to_string(base.method))};
    std::vector<std::string> acquisitions{std::string(to_string(base.acquisition))};
    if (const json* v = r.find("method")) methods = string_or_list(*v, "method");
    if (const json* v = r.find("acquisition")) acquisitions = string_or_list(*v, "acquisition");
    r.read("rounds", base.rounds);
    r.read("initial", base.initial);
    r.read("budget", base.budget);
    r.read("q", base.filter.q);
    r.read("persistence_count", base.filter.persistence_count);
    const json* proxy = r.find("proxy");
    if (proxy) base.proxy = parse_model(*proxy, "proxy", base.proxy);
    if (const json* v = r.find("target")) base.target = parse_model(*v, "target", base.target);
    r.read("seeds", base.seeds);
    r.read("backfill", base.backfill);
    if (const json* v = r.find("robustness")) {
        base.robustness.clear();
        for (const auto& name : ObjectReader::convert<std::vector<std::string>>(*v, "robustness")) {
            base.robustness.push_back(parse_corruption(name));
        }
    }
    r.read("record_timing", base.record_timing);
    std::string out;
    r.read("out", out);
    if (!out.empty()) run.out = out;
    r.read("verbosity", run.verbosity);
    r.finish();

    const bool expanded = methods.size() > 1 || acquisitions.size() > 1;
    for (const auto& m : methods) {
        for (const auto& a : acquisitions) {
            ExperimentConfig c = base;
            c.method = parse_method(m);
            c.acquisition = parse_acquisition(a);
            // 'same' lets the target pick for itself. An explicit proxy is only
            // checked against the target when 'same' is the sole method.
            if (c.method == Method::same && (expanded || !proxy)) c.proxy = c.target;
            c.name = fmt::format("{}_{}", m, a);
            c.validate();
            run.experiments.push_back(std::move(c));
        }
    }
    return run;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_json_file(path)); }

json to_json(const PlantedPoolSpec& spec) {
    return {
        {"num_classes", spec.num_classes},
        {"dim", spec.dim},
        {"means", spec.means},
        {"class_separation", spec.class_separation},
        {"stds", spec.stds},
        {"cluster_std", spec.cluster_std},
        {"core_fraction", spec.core_fraction},
        {"core_prototypes", spec.core_prototypes},
        {"core_radius", spec.core_radius},
        {"core_shift", spec.core_shift},
        {"core_spread", spec.core_spread},
        {"noise_fraction", spec.noise_fraction},
        {"band_spread", spec.band_spread},
        {"band_width", spec.band_width},
        {"flip_p", spec.flip_p},
        {"pool_size", spec.pool_size},
        {"validation_size", spec.validation_size},
        {"test_size", spec.test_size},
        {"seed", spec.seed},
    };
}

json to_json(const ModelConfig& model) {
    const auto& t = model.train;
    return {
        {"hidden_widths", model.spec.hidden_widths},
        {"activation", std::string(to_string(model.spec.activation))},
        {"train",
         {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"decay_points", t.decay_points},
          {"decay_factor", t.decay_factor},
          {"weight_decay", t.weight_decay},
          {"ema_eta", t.ema_eta},
          {"unlabeled_weight", t.unlabeled_weight},
          {"unlabeled_ratio", t.unlabeled_ratio},
          {"steps_per_epoch", t.steps_per_epoch},
          {"threshold_floor", t.threshold_floor},
          {"views",
           {{"weak_noise_scale", t.views.weak_noise_scale},
            {"strong_noise_scale", t.views.strong_noise_scale},
            {"dropout_rate", t.views.dropout_rate}}}}},
    };
}

json to_json(const ExperimentConfig& config) {
    json data;
    if (const auto* planted = std::get_if<PlantedPoolSpec>(&config.data)) {
        data["planted"] = to_json(*planted);
    } else {
        const auto& csv = std::get<CsvSource>(config.data);
        data["csv"] = {{"path", csv.path.string()},
                       {"num_classes", csv.num_classes.value_or(0)},
                       {"validation", csv.validation},
                       {"test", csv.test}};
    }
    std::vector<std::string> robustness;
    for (auto k : config.robustness) robustness.emplace_back(to_string(k));
    return {
        {"name", config.name},
        {"data", data},
        {"method", std::string(to_string(config.method))},
        {"acquisition", std::string(to_string(config.acquisition))},
        {"rounds", config.rounds},
        {"initial", config.initial},
        {"budget", config.budget},
        {"q", config.filter.q},
        {"persistence_count", config.filter.persistence_count},
        {"proxy", to_json(config.proxy)},
        {"target", to_json(config.target)},
        {"seeds", config.seeds},
        {"backfill", config.backfill},
        {"robustness", robustness},
        {"record_timing", config.record_timing},
    };
}

json default_config_json() { return to_json(default_experiment()); }

}  // namespace tbu
