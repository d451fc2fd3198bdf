#ifndef MLSE_NETWORK_CONFIG_HPP
#define MLSE_NETWORK_CONFIG_HPP

#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mlse/errors.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

enum class LayerKind { Dropout, Conv, MaxPool, FullyConnected };

inline std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::FullyConnected: return "fc";
    }
    return "?";
}

/**
 * One entry of the shared trunk.
 *
 * Conv and fully connected layers carry batch normalization and a randomized
 * leaky ReLU after the affine map; a fully connected layer with a nonzero
 * dropout probability applies dropout after the activation.
 */
struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::size_t units = 0;  // conv output channels or fc width
    std::size_t kernel = 0; // conv / maxpool window
    std::size_t stride = 1;
    std::size_t pad = 0;
    double dropout = 0.0; // standalone dropout or fc trailing dropout

    static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride, std::size_t pad) {
        return {LayerKind::Conv, channels, kernel, stride, pad, 0.0};
    }
    static LayerSpec maxpool(std::size_t kernel, std::size_t stride, std::size_t pad = 0) {
        return {LayerKind::MaxPool, 0, kernel, stride, pad, 0.0};
    }
    static LayerSpec fc(std::size_t width, double dropout) {
        return {LayerKind::FullyConnected, width, 0, 1, 0, dropout};
    }
    static LayerSpec drop(double p) { return {LayerKind::Dropout, 0, 0, 1, 0, p}; }

    bool learnable() const { return kind == LayerKind::Conv || kind == LayerKind::FullyConnected; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Architecture: input geometry, shared trunk, and three heads of width `classes`.
struct NetworkConfig {
    static constexpr std::size_t kHeads = 3;

    std::size_t in_channels = 1;
    std::size_t in_height = 32;
    std::size_t in_width = 32;
    std::vector<LayerSpec> layers;
    std::size_t classes = 20;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;

    Shape input_shape() const { return {in_channels, in_height, in_width}; }

    /// Per-sample output shape of every trunk layer; validates as it goes.
    std::vector<Shape> layer_shapes() const {
        if (in_channels == 0 || in_height == 0 || in_width == 0) {
            throw ConfigError("input dimensions must be positive");
        }
        if (classes < 2) {
            throw ConfigError("class count must be at least 2");
        }
        std::vector<Shape> shapes;
        Shape cur = input_shape();
        auto where = [&](std::size_t i) {
            const std::string prev = i == 0 ? std::string("input") : describe(i - 1);
            return "between layer " + prev + " and layer " + describe(i);
        };
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            switch (l.kind) {
            case LayerKind::Dropout:
                if (!(l.dropout >= 0.0 && l.dropout <= 1.0)) {
                    throw ConfigError("dropout probability outside [0,1] at layer " + describe(i));
                }
                break;
            case LayerKind::Conv:
            case LayerKind::MaxPool: {
                if (cur.size() != 3) {
                    throw ConfigError("spatial layer after flattened input " + where(i));
                }
                if (l.kernel == 0 || l.stride == 0 || (l.kind == LayerKind::Conv && l.units == 0)) {
                    throw ConfigError("zero kernel, stride or channel count at layer " + describe(i));
                }
                const std::size_t ph = cur[1] + 2 * l.pad;
                const std::size_t pw = cur[2] + 2 * l.pad;
                if (ph < l.kernel || pw < l.kernel) {
                    throw ConfigError("window larger than input " + where(i) + " (input " + shape_string(cur) + ")");
                }
                if (l.kind == LayerKind::MaxPool && l.pad >= l.kernel) {
                    throw ConfigError("pool padding must be smaller than the window at layer " + describe(i));
                }
                const std::size_t oh = (ph - l.kernel) / l.stride + 1;
                const std::size_t ow = (pw - l.kernel) / l.stride + 1;
                cur = {l.kind == LayerKind::Conv ? l.units : cur[0], oh, ow};
                break;
            }
            case LayerKind::FullyConnected:
                if (l.units == 0) {
                    throw ConfigError("zero width at layer " + describe(i));
                }
                if (!(l.dropout >= 0.0 && l.dropout < 1.0)) {
                    throw ConfigError("fc dropout probability outside [0,1) at layer " + describe(i));
                }
                cur = {l.units};
                break;
            }
            shapes.push_back(cur);
        }
        if (layers.empty() || layers.back().kind != LayerKind::FullyConnected) {
            throw ConfigError("the trunk must end in a fully connected layer (the feature layer)");
        }
        return shapes;
    }

    void validate() const { (void)layer_shapes(); }

    std::size_t feature_width() const {
        validate();
        return layers.back().units;
    }

    std::string describe(std::size_t i) const {
        return std::to_string(i) + " (" + layer_kind_name(layers.at(i).kind) + ")";
    }

    /// Canonical line-oriented text; parse(to_text()) == *this.
    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "input " << in_channels << ' ' << in_height << ' ' << in_width << '\n';
        for (const auto& l : layers) {
            switch (l.kind) {
            case LayerKind::Dropout: os << "dropout " << l.dropout << '\n'; break;
            case LayerKind::Conv:
                os << "conv " << l.units << ' ' << l.kernel << ' ' << l.stride << ' ' << l.pad << '\n';
                break;
            case LayerKind::MaxPool: os << "maxpool " << l.kernel << ' ' << l.stride << ' ' << l.pad << '\n'; break;
            case LayerKind::FullyConnected: os << "fc " << l.units << ' ' << l.dropout << '\n'; break;
            }
        }
        os << "heads " << kHeads << ' ' << classes << '\n';
        return os.str();
    }

    static NetworkConfig from_text(std::string_view text) {
        NetworkConfig cfg;
        cfg.layers.clear();
        std::istringstream in{std::string(text)};
        std::string line;
        std::size_t lineno = 0;
        bool saw_input = false;
        bool saw_heads = false;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) {
                continue;
            }
            if (saw_heads) {
                throw ParseError(lineno, "content after heads line");
            }
            std::istringstream ls(line);
            std::string key;
            ls >> key;
            auto fail = [&] { return ParseError(lineno, "bad '" + key + "' line: " + line); };
            if (key == "input") {
                if (!(ls >> cfg.in_channels >> cfg.in_height >> cfg.in_width)) throw fail();
                saw_input = true;
            } else if (key == "dropout") {
                LayerSpec l = LayerSpec::drop(0.0);
                if (!(ls >> l.dropout)) throw fail();
                cfg.layers.push_back(l);
            } else if (key == "conv") {
                LayerSpec l = LayerSpec::conv(0, 0, 1, 0);
                if (!(ls >> l.units >> l.kernel >> l.stride >> l.pad)) throw fail();
                cfg.layers.push_back(l);
            } else if (key == "maxpool") {
                LayerSpec l = LayerSpec::maxpool(0, 1, 0);
                if (!(ls >> l.kernel >> l.stride >> l.pad)) throw fail();
                cfg.layers.push_back(l);
            } else if (key == "fc") {
                LayerSpec l = LayerSpec::fc(0, 0.0);
                if (!(ls >> l.units >> l.dropout)) throw fail();
                cfg.layers.push_back(l);
            } else if (key == "heads") {
                std::size_t heads = 0;
                if (!(ls >> heads >> cfg.classes)) throw fail();
                if (heads != kHeads) {
                    throw ParseError(lineno, "exactly 3 heads are supported, got " + std::to_string(heads));
                }
                saw_heads = true;
            } else {
                throw ParseError(lineno, "unknown layer kind '" + key + "'");
            }
            std::string extra;
            if (ls >> extra) {
                throw ParseError(lineno, "trailing token '" + extra + "'");
            }
        }
        if (!saw_input || !saw_heads) {
            throw ParseError(0, "config text needs both an input and a heads line");
        }
        cfg.validate();
        return cfg;
    }

    /// Small architecture used for desk-scale runs.
    static NetworkConfig desk(std::size_t classes) {
        NetworkConfig cfg;
        cfg.in_channels = 1;
        cfg.in_height = 32;
        cfg.in_width = 32;
        cfg.classes = classes;
        cfg.layers = {
            LayerSpec::conv(16, 5, 1, 2), LayerSpec::maxpool(2, 2),
            LayerSpec::conv(32, 3, 1, 1), LayerSpec::maxpool(2, 2),
            LayerSpec::fc(128, 0.5),      LayerSpec::fc(128, 0.5),
        };
        return cfg;
    }

    /// The full-size signature network.
    static NetworkConfig paper(std::size_t classes, std::size_t height = 150, std::size_t width = 220) {
        NetworkConfig cfg;
        cfg.in_channels = 1;
        cfg.in_height = height;
        cfg.in_width = width;
        cfg.classes = classes;
        cfg.layers = {
            LayerSpec::drop(0.1),
            LayerSpec::conv(96, 11, 4, 0),
            LayerSpec::maxpool(3, 2),
            LayerSpec::conv(256, 5, 1, 2),
            LayerSpec::maxpool(3, 1, 2),
            LayerSpec::conv(384, 3, 1, 1),
            LayerSpec::conv(384, 3, 1, 1),
            LayerSpec::conv(256, 3, 1, 1),
            LayerSpec::maxpool(3, 2),
            LayerSpec::fc(2048, 0.5),
            LayerSpec::fc(2048, 0.5),
        };
        return cfg;
    }

    static NetworkConfig preset(std::string_view name, std::size_t classes) {
        if (name == "desk") {
            return desk(classes);
        }
        if (name == "paper") {
            return paper(classes);
        }
        throw ConfigError("unknown architecture preset '" + std::string(name) + "'");
    }
};

} // namespace mlse

#endif // MLSE_NETWORK_CONFIG_HPP
