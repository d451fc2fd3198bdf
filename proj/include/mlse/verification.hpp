#ifndef MLSE_VERIFICATION_HPP
#define MLSE_VERIFICATION_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlse/container.hpp"
#include "mlse/errors.hpp"
#include "mlse/layers.hpp"
#include "mlse/preprocess.hpp"
#include "mlse/rng.hpp"
#include "mlse/snapshot_ensemble.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

/// Linear decision function w.x + b.
struct SvmModel {
    std::vector<float> w;
    float b = 0.0f;

    double decision(std::span<const float> x) const {
        if (x.size() != w.size()) {
            throw DimensionError("feature width " + std::to_string(x.size()) + " vs SVM width " +
                                 std::to_string(w.size()));
        }
        double s = b;
        for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(w[i]) * x[i];
        return s;
    }

    friend bool operator==(const SvmModel&, const SvmModel&) = default;
};

struct SvmOptions {
    double cost = 1.0;
    std::size_t epochs = 200;

    friend bool operator==(const SvmOptions&, const SvmOptions&) = default;
};

/// Per-sample weights n_total / (2 n_class) for the positive and the negative class.
inline std::pair<double, double> balanced_class_weights(std::size_t n_pos, std::size_t n_neg) {
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("SVM training needs both classes");
    }
    const double n = static_cast<double>(n_pos + n_neg);
    return {n / (2.0 * static_cast<double>(n_pos)), n / (2.0 * static_cast<double>(n_neg))};
}

/**
 * Class-balanced soft-margin linear SVM,
 *   min 1/2 |w|^2 + C sum_i c_i max(0, 1 - y_i (w.x_i + b)),
 * by stochastic subgradient descent with step 1/(lambda t), lambda = 1/(C n),
 * a fixed number of seeded shuffled epochs, and projection onto the ball that
 * contains the optimum. The bias is learned as the weight of a constant
 * feature 1 and is therefore regularized with w.
 */
inline SvmModel train_linear_svm(const Tensor<float>& positives, const Tensor<float>& negatives,
                                 const SvmOptions& opts, std::uint64_t seed) {
    if (positives.rank() != 2 || negatives.rank() != 2 || positives.dim(1) != negatives.dim(1)) {
        throw DimensionError("SVM classes need matrices of equal width");
    }
    if (!(opts.cost > 0.0) || opts.epochs == 0) {
        throw ParameterError("SVM cost and epoch budget must be positive");
    }
    const std::size_t n_pos = positives.dim(0), n_neg = negatives.dim(0), d = positives.dim(1);
    const auto [c_pos, c_neg] = balanced_class_weights(n_pos, n_neg);
    const std::size_t n = n_pos + n_neg;
    const double lambda = 1.0 / (opts.cost * static_cast<double>(n));
    const double radius = std::sqrt(2.0 * opts.cost * (c_pos * n_pos + c_neg * n_neg));

    std::vector<double> w(d + 1, 0.0); // last entry is the bias
    double scale = 1.0;                // w_true = scale * w, keeps the shrink step O(1)
    double sq_norm = 0.0;              // |w_true|^2
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        for (auto i : order) {
            ++t;
            const bool pos = i < n_pos;
            const auto x = pos ? positives.row(i) : negatives.row(i - n_pos);
            const double y = pos ? 1.0 : -1.0;
            const double ci = pos ? c_pos : c_neg;
            double margin = w[d];
            for (std::size_t k = 0; k < d; ++k) margin += w[k] * x[k];
            margin *= scale * y;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double shrink = 1.0 - eta * lambda;
            if (shrink == 0.0) {
                std::fill(w.begin(), w.end(), 0.0);
                scale = 1.0;
                sq_norm = 0.0;
            } else {
                scale *= shrink;
                sq_norm *= shrink * shrink;
            }
            if (margin < 1.0) {
                // w_true += a * (x, 1)
                const double a = eta * ci * y;
                double dot = w[d];
                double xx = 1.0;
                for (std::size_t k = 0; k < d; ++k) {
                    dot += w[k] * x[k];
                    xx += static_cast<double>(x[k]) * x[k];
                }
                sq_norm += 2.0 * a * scale * dot + a * a * xx;
                const double step = a / scale;
                for (std::size_t k = 0; k < d; ++k) w[k] += step * x[k];
                w[d] += step;
            }
            if (sq_norm > radius * radius) {
                scale *= radius / std::sqrt(sq_norm);
                sq_norm = radius * radius;
            }
            if (scale < 1e-150 || scale > 1e150) {
                for (auto& v : w) v *= scale;
                scale = 1.0;
            }
        }
    }
    SvmModel m;
    m.w.resize(d);
    for (std::size_t k = 0; k < d; ++k) m.w[k] = static_cast<float>(scale * w[k]);
    m.b = static_cast<float>(scale * w[d]);
    return m;
}

// ---------------------------------------------------------------------------
// Random forgeries

/// Genuine enrollment features of every user for one snapshot, rows aligned across snapshots.
using UserFeatures = std::map<std::size_t, Tensor<float>>;

struct RowRef {
    std::size_t user = 0;
    std::size_t row = 0;

    friend bool operator==(const RowRef&, const RowRef&) = default;
};

/// `count` rows of users other than `target`; without replacement when enough rows exist.
inline std::vector<RowRef> sample_forgery_refs(std::size_t target, const UserFeatures& pool, std::size_t count,
                                               Rng& rng) {
    std::vector<RowRef> all;
    for (const auto& [user, m] : pool) {
        if (user == target) continue;
        for (std::size_t r = 0; r < m.dim(0); ++r) all.push_back({user, r});
    }
    if (all.empty()) {
        throw DataError("no other users to draw random forgeries from for user " + std::to_string(target));
    }
    std::vector<RowRef> out;
    out.reserve(count);
    if (count <= all.size()) {
        // partial Fisher-Yates
        for (std::size_t i = 0; i < count; ++i) {
            std::swap(all[i], all[i + rng.below(all.size() - i)]);
            out.push_back(all[i]);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) out.push_back(all[rng.below(all.size())]);
    }
    return out;
}

inline Tensor<float> gather_rows(const UserFeatures& pool, std::span<const RowRef> refs) {
    if (refs.empty()) {
        throw DataError("no rows to gather");
    }
    const std::size_t d = pool.at(refs.front().user).dim(1);
    Tensor<float> out({refs.size(), d});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto src = pool.at(refs[i].user).row(refs[i].row);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// k times the target's genuine count of other users' genuine feature rows.
inline Tensor<float> sample_random_forgeries(std::size_t target, const UserFeatures& pool, std::size_t k,
                                             std::size_t n_genuine, Rng& rng) {
    const auto refs = sample_forgery_refs(target, pool, k * n_genuine, rng);
    return gather_rows(pool, refs);
}

// ---------------------------------------------------------------------------
// User models

struct UserModel {
    std::size_t user = 0;
    std::vector<SvmModel> svms; // one per snapshot
    std::optional<std::size_t> selected;
    double threshold = 0.0;

    friend bool operator==(const UserModel&, const UserModel&) = default;
};

struct VerificationOptions {
    SvmOptions svm;
    std::size_t forgery_multiplier = 10;
    std::size_t usmg_iterations = 5;
    double usmg_dropout = 0.5;

    friend bool operator==(const VerificationOptions&, const VerificationOptions&) = default;
};

/**
 * One SVM per snapshot: the user's genuine rows against random forgeries
 * drawn independently per snapshot from `pools[s]` (other users' rows).
 */
inline UserModel build_user_model(std::size_t user, const std::vector<Tensor<float>>& genuine,
                                  const std::vector<UserFeatures>& pools, const VerificationOptions& opts,
                                  std::uint64_t seed) {
    if (genuine.empty() || genuine.size() != pools.size()) {
        throw DimensionError("need one genuine matrix and one forgery pool per snapshot");
    }
    for (const auto& g : genuine) {
        if (g.rank() != 2 || g.dim(1) != genuine.front().dim(1)) {
            throw ConsistencyError("snapshot feature widths differ; all snapshots must share one config");
        }
    }
    UserModel m;
    m.user = user;
    for (std::size_t s = 0; s < genuine.size(); ++s) {
        Rng rng(derive_seed(seed, {0x5A, user, s}));
        const auto neg = sample_random_forgeries(user, pools[s], opts.forgery_multiplier, genuine[s].dim(0), rng);
        m.svms.push_back(train_linear_svm(genuine[s], neg, opts.svm, derive_seed(seed, {0x5B, user, s})));
    }
    return m;
}

/// Mean of the per-class accuracies with decision >= 0 meaning genuine.
inline double balanced_accuracy(const SvmModel& svm, const Tensor<float>& genuine, const Tensor<float>& forgeries) {
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < genuine.dim(0); ++i) tp += svm.decision(genuine.row(i)) >= 0.0;
    for (std::size_t i = 0; i < forgeries.dim(0); ++i) tn += svm.decision(forgeries.row(i)) < 0.0;
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(genuine.dim(0)) +
                  static_cast<double>(tn) / static_cast<double>(forgeries.dim(0)));
}

/// Raw (unscaled) dropout: entries where `mask` is zero are cleared.
inline Tensor<float> apply_raw_mask(const Tensor<float>& m, const Tensor<float>& mask) {
    if (m.shape() != mask.shape()) {
        throw DimensionError("dropout mask shape differs from the feature matrix");
    }
    Tensor<float> out = m;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

/// Raw (unscaled) dropout: each entry kept with probability 1 - p.
inline Tensor<float> apply_raw_dropout(const Tensor<float>& m, double p, Rng& rng) {
    return apply_raw_mask(m, make_dropout_mask<float>(m.shape(), p, rng));
}

struct UsmgResult {
    std::size_t selected = 0;
    std::vector<double> scores; // accumulated balanced accuracy per SVM
};

/**
 * User-based selection of the most generalizable SVM. Each iteration draws
 * one set of random-forgery signatures and one raw dropout mask for the
 * genuine and forgery rows; both are shared by all snapshots, so every SVM
 * is tested under the same condition. Each SVM's balanced accuracy is
 * accumulated over iterations and ties go to the lowest index.
 */
inline UsmgResult usmg_select(const UserModel& model, const std::vector<Tensor<float>>& genuine,
                              const std::vector<UserFeatures>& pools, const VerificationOptions& opts, Rng& rng) {
    const std::size_t S = model.svms.size();
    if (S == 0 || genuine.size() != S || pools.size() != S) {
        throw DimensionError("usmg_select needs one genuine matrix and one pool per SVM");
    }
    for (const auto& g : genuine) {
        if (g.shape() != genuine.front().shape()) {
            throw ConsistencyError("usmg_select needs equally shaped genuine matrices across snapshots");
        }
    }
    UsmgResult r;
    r.scores.assign(S, 0.0);
    const std::size_t count = opts.forgery_multiplier * genuine.front().dim(0);
    const std::size_t width = genuine.front().dim(1);
    for (std::size_t it = 0; it < opts.usmg_iterations; ++it) {
        const auto refs = sample_forgery_refs(model.user, pools.front(), count, rng);
        const auto gmask = make_dropout_mask<float>(genuine.front().shape(), opts.usmg_dropout, rng);
        const auto fmask = make_dropout_mask<float>(Shape{refs.size(), width}, opts.usmg_dropout, rng);
        for (std::size_t s = 0; s < S; ++s) {
            const auto g = apply_raw_mask(genuine[s], gmask);
            const auto f = apply_raw_mask(gather_rows(pools[s], refs), fmask);
            r.scores[s] += balanced_accuracy(model.svms[s], g, f);
        }
    }
    for (std::size_t s = 1; s < S; ++s) {
        if (r.scores[s] > r.scores[r.selected]) r.selected = s;
    }
    return r;
}

/// Each SVM votes genuine when its decision is >= 0; a tie counts as forgery.
inline bool majority_vote(const std::vector<SvmModel>& svms, const std::vector<std::span<const float>>& queries) {
    if (svms.size() != queries.size() || svms.empty()) {
        throw DimensionError("majority_vote needs one query vector per SVM");
    }
    std::size_t genuine = 0;
    for (std::size_t s = 0; s < svms.size(); ++s) genuine += svms[s].decision(queries[s]) >= 0.0;
    return 2 * genuine > svms.size();
}

enum class Combiner { Usmg, MajorityVote };

inline Combiner parse_combiner(const std::string& s) {
    if (s == "usmg") return Combiner::Usmg;
    if (s == "mv") return Combiner::MajorityVote;
    throw ConfigError("unknown combiner '" + s + "' (expected usmg or mv)");
}

struct Verdict {
    double score = 0.0;
    bool genuine = false;
};

/// Scores one signature given its feature vector under every snapshot.
inline Verdict verify_features(const UserModel& model, const std::vector<std::span<const float>>& features,
                               Combiner combiner) {
    if (features.size() != model.svms.size()) {
        throw DimensionError("need one feature vector per snapshot SVM");
    }
    Verdict v;
    if (combiner == Combiner::Usmg) {
        if (!model.selected) {
            throw ConsistencyError("user " + std::to_string(model.user) + " has no selected SVM");
        }
        v.score = model.svms.at(*model.selected).decision(features[*model.selected]);
        v.genuine = v.score >= model.threshold;
    } else {
        double sum = 0.0;
        for (std::size_t s = 0; s < model.svms.size(); ++s) sum += model.svms[s].decision(features[s]);
        v.score = sum / static_cast<double>(model.svms.size());
        v.genuine = majority_vote(model.svms, features);
    }
    return v;
}

/// Preprocesses a raw image, extracts features under each snapshot, and scores it.
inline Verdict verify_query(const UserModel& model, const GrayImage& image, const std::vector<NetworkState<float>>& snapshots,
                            Combiner combiner) {
    if (snapshots.size() != model.svms.size()) {
        throw DimensionError("user model has " + std::to_string(model.svms.size()) + " SVMs but " +
                             std::to_string(snapshots.size()) + " snapshots were given");
    }
    std::vector<Tensor<float>> feats;
    for (const auto& s : snapshots) {
        Tensor<float> x = preprocess_image(image, s.config.in_height, s.config.in_width);
        x.reshape({1, s.config.in_channels, s.config.in_height, s.config.in_width});
        feats.push_back(extract_features(s, x));
    }
    std::vector<std::span<const float>> rows;
    for (const auto& f : feats) rows.push_back(f.row(0));
    return verify_features(model, rows, combiner);
}

// ---------------------------------------------------------------------------
// Persistence ("MLSV" container)

inline constexpr std::string_view kUserModelTag = "MLSV";

inline void save_user_model(const UserModel& m, const std::filesystem::path& path) {
    if (m.svms.empty()) {
        throw DataError("user model has no SVMs");
    }
    Container c;
    std::ostringstream text;
    text.precision(17);
    text << "user " << m.user << "\n"
         << "svm_count " << m.svms.size() << "\n"
         << "selected_index " << (m.selected ? std::to_string(*m.selected) : std::string("none")) << "\n"
         << "threshold " << m.threshold << "\n";
    c.text = text.str();
    for (std::size_t s = 0; s < m.svms.size(); ++s) {
        c.tensors.emplace_back("svm." + std::to_string(s) + ".weight", Tensor<float>({m.svms[s].w.size()}, m.svms[s].w));
        c.tensors.emplace_back("svm." + std::to_string(s) + ".bias", Tensor<float>({1}, std::vector<float>{m.svms[s].b}));
    }
    save_container(path, kUserModelTag, c);
}

inline UserModel load_user_model(const std::filesystem::path& path) {
    using Kind = FormatError::Kind;
    const Container c = load_container(path, kUserModelTag);
    UserModel m;
    std::istringstream in(c.text);
    std::string key, selected, threshold;
    std::size_t count = 0;
    if (!(in >> key >> m.user) || key != "user" || !(in >> key >> count) || key != "svm_count" ||
        !(in >> key >> selected) || key != "selected_index" || !(in >> key >> threshold) || key != "threshold") {
        throw FormatError(Kind::Malformed, "bad user-model header");
    }
    try {
        m.threshold = std::stod(threshold);
        if (selected != "none") m.selected = std::stoul(selected);
    } catch (const std::exception&) {
        throw FormatError(Kind::Malformed, "bad user-model header value");
    }
    if (c.tensors.size() != 2 * count || count == 0) {
        throw FormatError(Kind::ShapeMismatch, "expected " + std::to_string(2 * count) + " tensors");
    }
    for (std::size_t s = 0; s < count; ++s) {
        const auto& [wn, w] = c.tensors[2 * s];
        const auto& [bn, b] = c.tensors[2 * s + 1];
        if (wn != "svm." + std::to_string(s) + ".weight" || bn != "svm." + std::to_string(s) + ".bias" ||
            w.rank() != 1 || b.size() != 1 || (s > 0 && w.size() != m.svms.front().w.size())) {
            throw FormatError(Kind::ShapeMismatch, "bad tensors for SVM " + std::to_string(s));
        }
        m.svms.push_back({std::vector<float>(w.values().begin(), w.values().end()), b[0]});
    }
    if (m.selected && *m.selected >= count) {
        throw FormatError(Kind::Malformed, "selected index out of range");
    }
    return m;
}

} // namespace mlse

#endif // MLSE_VERIFICATION_HPP
