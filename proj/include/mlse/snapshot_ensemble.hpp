#ifndef MLSE_SNAPSHOT_ENSEMBLE_HPP
#define MLSE_SNAPSHOT_ENSEMBLE_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mlse/checkpoint.hpp"
#include "mlse/errors.hpp"
#include "mlse/losses.hpp"
#include "mlse/network.hpp"
#include "mlse/optimizer.hpp"
#include "mlse/rng.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

/// Preprocessed images (N, C, H, W) with class labels in [0, classes).
struct Dataset {
    Tensor<float> images;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
};

struct TrainHyper {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 48;
    std::size_t patience = 5;
    std::size_t max_epochs = 200;

    friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

struct TrialRecord {
    std::size_t trial_index = 0;
    LossWeights weights;
    std::size_t epochs_run = 0;
    double accuracy = 0.0; // identification accuracy of the dominant head after the last epoch
    std::vector<double> accuracy_trace;
    std::string checkpoint_path;

    LossKind dominant() const { return weights.dominant(); }

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

/// Stops once `patience` consecutive epochs fail to strictly beat the best accuracy so far.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {
        if (patience == 0) {
            throw ParameterError("patience must be at least 1");
        }
    }

    /// Records one epoch; returns true when training should stop.
    bool update(double accuracy) {
        if (accuracy > best_) {
            best_ = accuracy;
            stale_ = 0;
        } else {
            ++stale_;
        }
        return stale_ >= patience_;
    }

    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    double best_ = -1.0;
};

inline void check_dataset(const Dataset& data, const NetworkConfig& cfg) {
    if (data.size() == 0) {
        throw DataError("training dataset is empty");
    }
    const Shape in = cfg.input_shape();
    if (data.images.rank() != 4 || data.images.dim(0) != data.size() || data.images.dim(1) != in[0] ||
        data.images.dim(2) != in[1] || data.images.dim(3) != in[2]) {
        throw DimensionError("dataset images " + shape_string(data.images.shape()) + " do not match " +
                             std::to_string(data.size()) + " samples of " + shape_string(in));
    }
    std::vector<std::size_t> per_class(cfg.classes, 0);
    for (auto y : data.labels) {
        if (y >= cfg.classes) {
            throw DataError("label " + std::to_string(y) + " outside the " + std::to_string(cfg.classes) +
                            " network classes");
        }
        ++per_class[y];
    }
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c] == 0) {
            throw DataError("class " + std::to_string(c) + " has no training samples");
        }
    }
    if (data.size() < 2) {
        throw DataError("training needs at least 2 samples for batch normalization");
    }
}

/// Copies the selected samples into one (|idx|, C, H, W) tensor.
inline Tensor<float> gather_samples(const Tensor<float>& images, std::span<const std::size_t> idx) {
    Shape shape = images.shape();
    shape[0] = idx.size();
    Tensor<float> out(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto src = images.row(idx[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// Shuffled mini-batches; a trailing batch of one sample joins the previous batch.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) {
        throw ParameterError("batch size must be positive");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < n; s += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

inline std::size_t argmax_row(std::span<const float> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Eval-mode forward over a large batch, in chunks.
template <typename Fn>
void for_each_eval_chunk(const NetworkState<float>& state, const Tensor<float>& images, Fn&& fn,
                         std::size_t chunk = 128) {
    const std::size_t n = images.dim(0);
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < n; s += chunk) {
        idx.clear();
        for (std::size_t i = s; i < std::min(n, s + chunk); ++i) idx.push_back(i);
        fn(s, network_forward_eval(state, gather_samples(images, idx)));
    }
}

/// Fraction of samples whose argmax on `head` equals the label.
inline double identification_accuracy(const NetworkState<float>& state, const Dataset& data, std::size_t head) {
    std::size_t correct = 0;
    for_each_eval_chunk(state, data.images, [&](std::size_t start, const ForwardResult<float>& r) {
        for (std::size_t i = 0; i < r.heads[head].dim(0); ++i) {
            correct += argmax_row(r.heads[head].row(i)) == data.labels[start + i];
        }
    });
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/**
 * One MLSE trial: epochs of shuffled mini-batch Nesterov SGD on the DML loss
 * until the training-set accuracy of the dominant head stops improving.
 * Momentum buffers start at zero; the weights continue from `state`.
 */
inline TrialRecord run_trial(NetworkState<float>& state, const Dataset& data, const LossWeights& weights,
                             const TrainHyper& hyper, std::size_t trial_index) {
    check_dataset(data, state.config);
    check_dml_weights(weights);
    if (hyper.max_epochs == 0) {
        throw ParameterError("epoch cap must be positive");
    }
    auto opt = OptimizerState<float>::for_params(state.params, hyper.learning_rate, hyper.momentum);
    EarlyStopper stopper(hyper.patience);
    Rng rng(derive_seed(state.rng_seed, {0x7A, trial_index}));
    const auto head = static_cast<std::size_t>(weights.dominant());
    TrialRecord rec;
    rec.trial_index = trial_index;
    rec.weights = weights;
    std::vector<std::size_t> targets;
    for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        for (const auto& batch : make_batches(data.size(), hyper.batch_size, rng)) {
            targets.clear();
            for (auto i : batch) targets.push_back(data.labels[i]);
            auto fwd = network_forward(state, gather_samples(data.images, batch), Mode::Train, rng);
            const auto loss = dml_batch<float>(fwd.heads, targets, weights);
            if (!std::isfinite(loss.loss)) {
                throw NumericError("loss became non-finite in trial " + std::to_string(trial_index) + ", epoch " +
                                   std::to_string(epoch + 1));
            }
            const auto grads = network_backward(state, fwd.cache, loss.head_grads);
            nesterov_step(state, opt, grads);
            update_running_stats(state, fwd.cache);
        }
        rec.epochs_run = epoch + 1;
        rec.accuracy = identification_accuracy(state, data, head);
        rec.accuracy_trace.push_back(rec.accuracy);
        if (stopper.update(rec.accuracy)) break;
    }
    return rec;
}

struct SnapshotSet {
    std::vector<TrialRecord> records;
    std::vector<NetworkState<float>> states;

    std::size_t size() const { return states.size(); }
};

struct MlseOptions {
    std::size_t trials = 6;
    TrainHyper hyper;
    std::function<LossWeights(std::size_t)> schedule = loss_weights_for_trial;
    std::filesystem::path checkpoint_dir; // snapshots are written here when non-empty
    std::function<void(const TrialRecord&)> on_trial;
};

inline std::filesystem::path snapshot_path(const std::filesystem::path& dir, std::size_t trial) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snapshot_%02zu.mlse", trial);
    return dir / buf;
}

/// Sequential trials, each continuing from the previous weights; one snapshot per trial.
inline SnapshotSet run_mlse(NetworkState<float> state, const Dataset& data, const MlseOptions& opts) {
    if (opts.trials == 0) {
        throw ParameterError("at least one trial is required");
    }
    SnapshotSet set;
    for (std::size_t t = 0; t < opts.trials; ++t) {
        TrialRecord rec = run_trial(state, data, opts.schedule(t), opts.hyper, t);
        if (!opts.checkpoint_dir.empty()) {
            const auto path = snapshot_path(opts.checkpoint_dir, t);
            save_snapshot(state, path);
            rec.checkpoint_path = path.string();
        }
        if (opts.on_trial) opts.on_trial(rec);
        set.records.push_back(std::move(rec));
        set.states.push_back(state);
    }
    return set;
}

/// Eval-mode output of the last shared FC layer, one row per image.
inline Tensor<float> extract_features(const NetworkState<float>& state, const Tensor<float>& images) {
    const Shape in = state.config.input_shape();
    if (images.rank() != 4 || images.dim(1) != in[0] || images.dim(2) != in[1] || images.dim(3) != in[2]) {
        throw DimensionError("images " + shape_string(images.shape()) + " do not match network input " +
                             shape_string(in));
    }
    const std::size_t width = state.config.feature_width();
    Tensor<float> out({images.dim(0), width});
    for_each_eval_chunk(state, images, [&](std::size_t start, const ForwardResult<float>& r) {
        for (std::size_t i = 0; i < r.features.dim(0); ++i) {
            const auto src = r.features.row(i);
            std::copy(src.begin(), src.end(), out.row(start + i).begin());
        }
    });
    return out;
}

} // namespace mlse

#endif // MLSE_SNAPSHOT_ENSEMBLE_HPP
