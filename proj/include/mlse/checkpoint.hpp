#ifndef MLSE_CHECKPOINT_HPP
#define MLSE_CHECKPOINT_HPP

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>

#include "mlse/container.hpp"
#include "mlse/errors.hpp"
#include "mlse/network.hpp"

namespace mlse {

inline constexpr std::string_view kSnapshotTag = "MLSE";

namespace detail {

inline bool is_running_name(const std::string& name) { return name.ends_with(".mean") || name.ends_with(".var"); }

} // namespace detail

/// Snapshot text block: canonical config text followed by an `rng_seed <u64>` line.
inline Container snapshot_container(const NetworkState<float>& state) {
    check_state(state);
    Container c;
    c.text = state.config.to_text() + "rng_seed " + std::to_string(state.rng_seed) + "\n";
    for (const auto& [name, t] : state.params) c.tensors.emplace_back(name, t);
    for (const auto& [name, t] : state.running) c.tensors.emplace_back(name, t);
    return c;
}

inline NetworkState<float> snapshot_from_container(const Container& c) {
    using Kind = FormatError::Kind;
    NetworkState<float> state;
    std::istringstream in(c.text);
    std::string line;
    std::string config_text;
    bool saw_seed = false;
    while (std::getline(in, line)) {
        if (line.starts_with("rng_seed ")) {
            const std::string v = line.substr(9);
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), state.rng_seed);
            if (ec != std::errc{} || ptr != v.data() + v.size() || saw_seed) {
                throw FormatError(Kind::Malformed, "bad rng_seed line");
            }
            saw_seed = true;
        } else {
            config_text += line + "\n";
        }
    }
    if (!saw_seed) {
        throw FormatError(Kind::Malformed, "snapshot text lacks an rng_seed line");
    }
    try {
        state.config = NetworkConfig::from_text(config_text);
    } catch (const Error& e) {
        throw FormatError(Kind::Malformed, std::string("embedded config: ") + e.what());
    }
    for (const auto& [name, t] : c.tensors) {
        auto& target = detail::is_running_name(name) ? state.running : state.params;
        if (!target.emplace(name, t).second) {
            throw FormatError(Kind::Malformed, "duplicate tensor '" + name + "'");
        }
    }
    try {
        check_state(state);
    } catch (const ConsistencyError& e) {
        throw FormatError(Kind::ShapeMismatch, e.what());
    }
    return state;
}

inline void save_snapshot(const NetworkState<float>& state, const std::filesystem::path& path) {
    save_container(path, kSnapshotTag, snapshot_container(state));
}

inline NetworkState<float> load_snapshot(const std::filesystem::path& path) {
    return snapshot_from_container(load_container(path, kSnapshotTag));
}

} // namespace mlse

#endif // MLSE_CHECKPOINT_HPP
