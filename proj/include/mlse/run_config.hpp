#ifndef MLSE_RUN_CONFIG_HPP
#define MLSE_RUN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlse/container.hpp"
#include "mlse/corpus.hpp"
#include "mlse/errors.hpp"
#include "mlse/network_config.hpp"
#include "mlse/snapshot_ensemble.hpp"
#include "mlse/verification.hpp"

namespace mlse {

/// Everything needed to reproduce a run. Serialized as JSON; see to_json().
struct RunConfig {
    std::uint64_t seed = 1;

    std::string corpus_dir = "corpus";
    CorpusSpec corpus;

    std::string architecture = "desk"; // "desk", "paper", or "custom" with `layers`
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    std::vector<std::string> layers; // canonical layer lines, e.g. "conv 16 5 1 2"

    TrainHyper hyper;
    std::size_t trials = 6;

    WdSizes wd;
    std::size_t wd_runs = 10;
    WiSizes wi;
    std::size_t wi_repetitions = 5;

    VerificationOptions verification;
    std::string combiner = "usmg";

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    /// Network for `classes` identities, validated.
    NetworkConfig network(std::size_t classes) const {
        NetworkConfig cfg;
        if (architecture == "desk") {
            cfg = NetworkConfig::desk(classes);
        } else if (architecture == "paper") {
            cfg = NetworkConfig::paper(classes);
        } else if (architecture == "custom") {
            std::string text = "input 1 " + std::to_string(input_height) + " " + std::to_string(input_width) + "\n";
            for (const auto& l : layers) text += l + "\n";
            text += "heads 3 " + std::to_string(classes) + "\n";
            return NetworkConfig::from_text(text);
        } else {
            throw ConfigError("unknown architecture '" + architecture + "' (expected desk, paper or custom)");
        }
        cfg.in_height = input_height;
        cfg.in_width = input_width;
        cfg.validate();
        return cfg;
    }

    void validate() const {
        if (architecture != "custom" && !layers.empty()) {
            throw ConfigError("network.layers is only used with architecture \"custom\"");
        }
        (void)network(2);
        (void)parse_combiner(combiner);
        if (trials == 0) throw ConfigError("training.trials must be at least 1");
        if (hyper.batch_size < 2) throw ConfigError("training.batch_size must be at least 2");
        if (hyper.patience == 0 || hyper.max_epochs == 0) throw ConfigError("patience and max_epochs must be positive");
        if (!(hyper.learning_rate > 0.0) || !(hyper.momentum >= 0.0 && hyper.momentum < 1.0)) {
            throw ConfigError("learning_rate must be positive and momentum in [0,1)");
        }
        if (wd_runs == 0 || wi_repetitions == 0) throw ConfigError("run counts must be positive");
        if (!(wi.feature_fraction > 0.0 && wi.feature_fraction < 1.0)) {
            throw ConfigError("protocol.wi_feature_fraction must lie in (0,1)");
        }
        if (!(verification.svm.cost > 0.0) || verification.svm.epochs == 0 || verification.forgery_multiplier == 0 ||
            verification.usmg_iterations == 0) {
            throw ConfigError("verification cost, epochs, multiplier and iterations must be positive");
        }
        if (!(verification.usmg_dropout >= 0.0 && verification.usmg_dropout <= 1.0)) {
            throw ConfigError("verification.usmg_dropout must lie in [0,1]");
        }
    }

    MlseOptions mlse_options() const {
        MlseOptions o;
        o.trials = trials;
        o.hyper = hyper;
        return o;
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["corpus"] = {{"dir", c.corpus_dir},
                   {"users", c.corpus.users},
                   {"genuine", c.corpus.genuine},
                   {"skilled", c.corpus.skilled},
                   {"width", c.corpus.width},
                   {"height", c.corpus.height}};
    j["network"] = {{"architecture", c.architecture},
                    {"input_height", c.input_height},
                    {"input_width", c.input_width},
                    {"layers", c.layers}};
    j["training"] = {{"learning_rate", c.hyper.learning_rate},
                     {"momentum", c.hyper.momentum},
                     {"batch_size", c.hyper.batch_size},
                     {"patience", c.hyper.patience},
                     {"max_epochs", c.hyper.max_epochs},
                     {"trials", c.trials}};
    j["protocol"] = {{"wd_feature_genuine", c.wd.feature},
                     {"wd_extra_genuine", c.wd.extra},
                     {"wd_runs", c.wd_runs},
                     {"wi_feature_fraction", c.wi.feature_fraction},
                     {"wi_enroll_genuine", c.wi.enroll},
                     {"wi_repetitions", c.wi_repetitions}};
    j["verification"] = {{"svm_cost", c.verification.svm.cost},
                         {"svm_epochs", c.verification.svm.epochs},
                         {"forgery_multiplier", c.verification.forgery_multiplier},
                         {"usmg_iterations", c.verification.usmg_iterations},
                         {"usmg_dropout", c.verification.usmg_dropout},
                         {"combiner", c.combiner}};
    return j;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& where,
                           std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw ConfigError(where.empty() ? "config must be a JSON object" : "'" + where + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) {
            throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string name = where + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("'" + name + "' must be a string");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("'" + name + "' must be a number");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("'" + name + "' must be a non-negative integer");
    } else {
        if (!v.is_array()) throw ConfigError("'" + name + "' must be an array");
        for (const auto& e : v) {
            if (!e.is_string()) throw ConfigError("'" + name + "' entries must be strings");
        }
    }
    out = v.get<T>();
}

} // namespace detail

/// Strict parse: unknown keys and wrongly typed values are rejected; absent keys keep defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using detail::read;
    RunConfig c;
    detail::reject_unknown(j, "", {"seed", "corpus", "network", "training", "protocol", "verification"});
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("corpus")) {
        const auto& o = j["corpus"];
        detail::reject_unknown(o, "corpus", {"dir", "users", "genuine", "skilled", "width", "height"});
        read(o, "dir", c.corpus_dir, "corpus");
        read(o, "users", c.corpus.users, "corpus");
        read(o, "genuine", c.corpus.genuine, "corpus");
        read(o, "skilled", c.corpus.skilled, "corpus");
        read(o, "width", c.corpus.width, "corpus");
        read(o, "height", c.corpus.height, "corpus");
    }
    if (j.contains("network")) {
        const auto& o = j["network"];
        detail::reject_unknown(o, "network", {"architecture", "input_height", "input_width", "layers"});
        read(o, "architecture", c.architecture, "network");
        read(o, "input_height", c.input_height, "network");
        read(o, "input_width", c.input_width, "network");
        read(o, "layers", c.layers, "network");
    }
    if (j.contains("training")) {
        const auto& o = j["training"];
        detail::reject_unknown(o, "training",
                               {"learning_rate", "momentum", "batch_size", "patience", "max_epochs", "trials"});
        read(o, "learning_rate", c.hyper.learning_rate, "training");
        read(o, "momentum", c.hyper.momentum, "training");
        read(o, "batch_size", c.hyper.batch_size, "training");
        read(o, "patience", c.hyper.patience, "training");
        read(o, "max_epochs", c.hyper.max_epochs, "training");
        read(o, "trials", c.trials, "training");
    }
    if (j.contains("protocol")) {
        const auto& o = j["protocol"];
        detail::reject_unknown(o, "protocol",
                               {"wd_feature_genuine", "wd_extra_genuine", "wd_runs", "wi_feature_fraction",
                                "wi_enroll_genuine", "wi_repetitions"});
        read(o, "wd_feature_genuine", c.wd.feature, "protocol");
        read(o, "wd_extra_genuine", c.wd.extra, "protocol");
        read(o, "wd_runs", c.wd_runs, "protocol");
        read(o, "wi_feature_fraction", c.wi.feature_fraction, "protocol");
        read(o, "wi_enroll_genuine", c.wi.enroll, "protocol");
        read(o, "wi_repetitions", c.wi_repetitions, "protocol");
    }
    if (j.contains("verification")) {
        const auto& o = j["verification"];
        detail::reject_unknown(o, "verification",
                               {"svm_cost", "svm_epochs", "forgery_multiplier", "usmg_iterations", "usmg_dropout",
                                "combiner"});
        read(o, "svm_cost", c.verification.svm.cost, "verification");
        read(o, "svm_epochs", c.verification.svm.epochs, "verification");
        read(o, "forgery_multiplier", c.verification.forgery_multiplier, "verification");
        read(o, "usmg_iterations", c.verification.usmg_iterations, "verification");
        read(o, "usmg_dropout", c.verification.usmg_dropout, "verification");
        read(o, "combiner", c.combiner, "verification");
    }
    c.validate();
    return c;
}

inline RunConfig parse_run_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

inline std::string format_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

} // namespace mlse

#endif // MLSE_RUN_CONFIG_HPP
