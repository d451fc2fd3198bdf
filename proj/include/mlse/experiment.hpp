#ifndef MLSE_EXPERIMENT_HPP
#define MLSE_EXPERIMENT_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mlse/corpus.hpp"
#include "mlse/errors.hpp"
#include "mlse/metrics.hpp"
#include "mlse/network.hpp"
#include "mlse/preprocess.hpp"
#include "mlse/run_config.hpp"
#include "mlse/snapshot_ensemble.hpp"
#include "mlse/verification.hpp"

namespace mlse {

using LogFn = std::function<void(const std::string&)>;

/// Scores of one evaluation for the selected SVM, majority voting, and every single snapshot.
struct SplitScores {
    ScoreSet usmg;
    ScoreSet mv;
    std::vector<ScoreSet> single;
};

/// Outcome of training, enrolling and testing on one protocol split.
struct SplitOutcome {
    std::vector<TrialRecord> trials;
    std::map<std::size_t, UserModel> models;
    SplitScores scores;
};

/// Images of the corpus preprocessed to the network input, (N, 1, H, W).
inline Tensor<float> preprocess_corpus(const Corpus& corpus, const RunConfig& cfg) {
    return preprocess_batch(corpus.images, cfg.input_height, cfg.input_width);
}

/// Feature-learning dataset of a split; classes are the feature users in order.
inline Dataset feature_dataset(const Tensor<float>& images, const ProtocolSplit& split) {
    Dataset d;
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < split.feature_users.size(); ++c) {
        for (auto i : split.per_user.at(split.feature_users[c]).feature) {
            idx.push_back(i);
            d.labels.push_back(c);
        }
    }
    if (idx.empty()) {
        throw DataError("split has no feature-learning samples");
    }
    d.images = gather_samples(images, idx);
    return d;
}

/// Enrollment rows of every evaluated user under each snapshot.
inline std::vector<UserFeatures> enrollment_pools(const std::vector<Tensor<float>>& features,
                                                  const ProtocolSplit& split) {
    std::vector<UserFeatures> pools(features.size());
    for (std::size_t s = 0; s < features.size(); ++s) {
        for (auto u : split.eval_users) {
            const auto idx = split.per_user.at(u).enrollment();
            if (idx.empty()) {
                throw DataError("user " + std::to_string(u) + " has no enrollment signatures");
            }
            Tensor<float> m({idx.size(), features[s].dim(1)});
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const auto src = features[s].row(idx[r]);
                std::copy(src.begin(), src.end(), m.row(r).begin());
            }
            pools[s].emplace(u, std::move(m));
        }
    }
    return pools;
}

/// Builds and selects one model per evaluated user.
inline std::map<std::size_t, UserModel> enroll_users(const std::vector<UserFeatures>& pools,
                                                     const std::vector<std::size_t>& users,
                                                     const VerificationOptions& opts, std::uint64_t seed) {
    std::map<std::size_t, UserModel> models;
    for (auto u : users) {
        std::vector<Tensor<float>> genuine;
        for (const auto& p : pools) genuine.push_back(p.at(u));
        UserModel m = build_user_model(u, genuine, pools, opts, derive_seed(seed, {0xB0}));
        Rng rng(derive_seed(seed, {0xB1, u}));
        m.selected = usmg_select(m, genuine, pools, opts, rng).selected;
        models.emplace(u, std::move(m));
    }
    return models;
}

/**
 * Scores each evaluated user's test genuine signatures, skilled forgeries,
 * and, as random forgeries, the test genuine signatures of the other
 * evaluated users (never used to train any SVM).
 */
inline SplitScores score_split(const std::map<std::size_t, UserModel>& models,
                               const std::vector<Tensor<float>>& features, const ProtocolSplit& split) {
    const std::size_t S = features.size();
    SplitScores out;
    out.single.resize(S);
    std::vector<std::span<const float>> rows(S);
    auto score = [&](const UserModel& m, std::size_t record, auto member) {
        for (std::size_t s = 0; s < S; ++s) rows[s] = features[s].row(record);
        (out.usmg.*member).push_back(verify_features(m, rows, Combiner::Usmg).score);
        (out.mv.*member).push_back(verify_features(m, rows, Combiner::MajorityVote).score);
        for (std::size_t s = 0; s < S; ++s) (out.single[s].*member).push_back(m.svms[s].decision(rows[s]));
    };
    for (auto u : split.eval_users) {
        const UserModel& m = models.at(u);
        const UserSplit& us = split.per_user.at(u);
        for (auto i : us.test_genuine) score(m, i, &ScoreSet::genuine);
        for (auto i : us.test_skilled) score(m, i, &ScoreSet::skilled);
        for (auto v : split.eval_users) {
            if (v == u) continue;
            for (auto i : split.per_user.at(v).test_genuine) score(m, i, &ScoreSet::random);
        }
    }
    return out;
}

/// Seed of writer-dependent run `run`; the CLI's train/enroll commands use run 0.
inline std::uint64_t wd_run_seed(std::uint64_t seed, std::size_t run) { return derive_seed(seed, {0xE0, run}); }

/// MLSE snapshots learned on the split's feature users.
inline SnapshotSet train_split(const Tensor<float>& images, const ProtocolSplit& split, const RunConfig& cfg,
                               std::uint64_t seed, const LogFn& log = {},
                               const std::filesystem::path& checkpoint_dir = {}) {
    const Dataset data = feature_dataset(images, split);
    NetworkState<float> init = init_network(cfg.network(split.feature_users.size()), derive_seed(seed, {0xA0}));
    MlseOptions opts = cfg.mlse_options();
    opts.checkpoint_dir = checkpoint_dir;
    if (log) {
        opts.on_trial = [&](const TrialRecord& r) {
            log("  trial " + std::to_string(r.trial_index) + " (" + loss_name(r.dominant()) + "): " +
                std::to_string(r.epochs_run) + " epochs, accuracy " + format_number(r.accuracy));
        };
    }
    return run_mlse(std::move(init), data, opts);
}

/// Features of every image under every snapshot.
inline std::vector<Tensor<float>> snapshot_features(const std::vector<NetworkState<float>>& states,
                                                    const Tensor<float>& images) {
    std::vector<Tensor<float>> features;
    for (const auto& s : states) features.push_back(extract_features(s, images));
    return features;
}

/// Enrolls the split's evaluated users from per-snapshot features of all images.
inline std::map<std::size_t, UserModel> enroll_split(const std::vector<Tensor<float>>& features,
                                                     const ProtocolSplit& split, const RunConfig& cfg,
                                                     std::uint64_t seed) {
    return enroll_users(enrollment_pools(features, split), split.eval_users, cfg.verification,
                        derive_seed(seed, {0xA1}));
}

/// Train MLSE on the split's feature users, enroll its evaluated users, and score their test sets.
inline SplitOutcome evaluate_split(const Tensor<float>& images, const ProtocolSplit& split, const RunConfig& cfg,
                                   std::uint64_t seed, const LogFn& log = {}) {
    const SnapshotSet set = train_split(images, split, cfg, seed, log);
    const auto features = snapshot_features(set.states, images);
    SplitOutcome out;
    out.trials = set.records;
    out.models = enroll_split(features, split, cfg, seed);
    out.scores = score_split(out.models, features, split);
    return out;
}

/// Reports of every combination method over the runs of one protocol.
struct ExperimentResult {
    EvalReport usmg;
    EvalReport mv;
    std::vector<EvalReport> single; // per snapshot index
    std::vector<std::vector<TrialRecord>> trials;
    std::vector<std::map<std::size_t, std::size_t>> selected; // per run: user -> selected snapshot
    ScoreSet last_usmg_scores;                                // of the final run, for threshold sweeps

    /// Snapshot index with the lowest mean EER over runs; ties go to the lowest index.
    std::size_t best_single() const {
        std::size_t best = 0;
        for (std::size_t s = 1; s < single.size(); ++s) {
            if (single[s].mean().eer_sf < single[best].mean().eer_sf) best = s;
        }
        return best;
    }

    void add(const SplitOutcome& o) {
        usmg.runs.push_back(run_metrics(o.scores.usmg));
        mv.runs.push_back(run_metrics(o.scores.mv));
        single.resize(o.scores.single.size());
        for (std::size_t s = 0; s < o.scores.single.size(); ++s) single[s].runs.push_back(run_metrics(o.scores.single[s]));
        trials.push_back(o.trials);
        std::map<std::size_t, std::size_t> sel;
        for (const auto& [u, m] : o.models) sel[u] = m.selected.value_or(0);
        selected.push_back(std::move(sel));
        last_usmg_scores = o.scores.usmg;
    }
};

/// Writer-dependent protocol repeated over `runs` random splits.
inline ExperimentResult evaluate_wd(const Corpus& corpus, const RunConfig& cfg, std::size_t runs, std::uint64_t seed,
                                    const LogFn& log = {}) {
    if (runs == 0) {
        throw ParameterError("at least one run is required");
    }
    const Tensor<float> images = preprocess_corpus(corpus, cfg);
    ExperimentResult result;
    for (std::size_t r = 0; r < runs; ++r) {
        if (log) log("wd run " + std::to_string(r + 1) + "/" + std::to_string(runs));
        const std::uint64_t run_seed = wd_run_seed(seed, r);
        const ProtocolSplit split = split_wd(corpus.records, cfg.wd, run_seed);
        result.add(evaluate_split(images, split, cfg, run_seed, log));
    }
    return result;
}

/// Writer-independent protocol: each repetition yields two evaluations (folds swapped).
inline ExperimentResult evaluate_wi(const Corpus& corpus, const RunConfig& cfg, std::size_t reps, std::uint64_t seed,
                                    const LogFn& log = {}) {
    if (reps == 0) {
        throw ParameterError("at least one repetition is required");
    }
    const Tensor<float> images = preprocess_corpus(corpus, cfg);
    ExperimentResult result;
    for (std::size_t r = 0; r < reps; ++r) {
        const std::uint64_t rep_seed = derive_seed(seed, {0xE1, r});
        const auto folds = split_wi(corpus.records, cfg.wi, rep_seed);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            if (log) {
                log("wi repetition " + std::to_string(r + 1) + "/" + std::to_string(reps) + ", fold " +
                    std::to_string(f + 1) + ": " + std::to_string(folds[f].feature_users.size()) +
                    " feature users, " + std::to_string(folds[f].eval_users.size()) + " evaluated users");
            }
            result.add(evaluate_split(images, folds[f], cfg, derive_seed(rep_seed, {f}), log));
        }
    }
    return result;
}

} // namespace mlse

#endif // MLSE_EXPERIMENT_HPP
