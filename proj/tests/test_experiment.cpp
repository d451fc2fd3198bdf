#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mlse/experiment.hpp"

using namespace mlse;

namespace {

RunConfig small_config() {
    RunConfig c;
    c.corpus = CorpusSpec{6, 13, 4, 32, 32};
    c.trials = 2;
    c.hyper.max_epochs = 8;
    c.hyper.patience = 3;
    c.verification.svm.epochs = 40;
    c.wi.enroll = 8;
    return c;
}

bool finite(const RunMetrics& m) {
    return std::isfinite(m.frr_sf) && std::isfinite(m.far_rf) && std::isfinite(m.far_sf) && std::isfinite(m.eer_sf) &&
           std::isfinite(m.threshold);
}

} // namespace

TEST(Experiment, WdReportHasOneFiniteEntryPerRunAndIsDeterministic) {
    const RunConfig cfg = small_config();
    const Corpus corpus = synthesize_corpus(cfg.corpus, 3);
    const auto a = evaluate_wd(corpus, cfg, 2, 5);
    ASSERT_EQ(a.usmg.runs.size(), 2u);
    ASSERT_EQ(a.mv.runs.size(), 2u);
    ASSERT_EQ(a.single.size(), 2u);
    for (const auto& r : a.usmg.runs) EXPECT_TRUE(finite(r));
    for (const auto& r : a.mv.runs) EXPECT_TRUE(finite(r));
    EXPECT_EQ(a.trials.size(), 2u);
    EXPECT_EQ(a.trials[0].size(), 2u);
    EXPECT_EQ(a.selected[0].size(), 6u);
    for (const auto& [u, s] : a.selected[1]) EXPECT_LT(s, 2u);
    // 6 users x 3 test genuine, 6 x 4 skilled, 6 x 5 x 3 random
    EXPECT_EQ(a.last_usmg_scores.genuine.size(), 18u);
    EXPECT_EQ(a.last_usmg_scores.skilled.size(), 24u);
    EXPECT_EQ(a.last_usmg_scores.random.size(), 90u);
    const auto b = evaluate_wd(corpus, cfg, 2, 5);
    EXPECT_EQ(a.usmg.to_csv(), b.usmg.to_csv());
    EXPECT_EQ(a.mv.to_csv(), b.mv.to_csv());
}

TEST(Experiment, WiYieldsTwoEvaluationsPerRepetition) {
    const RunConfig cfg = small_config();
    const Corpus corpus = synthesize_corpus(cfg.corpus, 4);
    const auto r = evaluate_wi(corpus, cfg, 1, 6);
    ASSERT_EQ(r.usmg.runs.size(), 2u);
    for (const auto& m : r.usmg.runs) EXPECT_TRUE(finite(m));
    // 6 users at fraction 0.2 -> folds of 2 and 4 users
    EXPECT_EQ(r.selected[0].size(), 4u);
    EXPECT_EQ(r.selected[1].size(), 2u);
}

TEST(Experiment, FeatureDatasetUsesOnlyFeatureUsers) {
    const RunConfig cfg = small_config();
    const Corpus corpus = synthesize_corpus(cfg.corpus, 4);
    const auto folds = split_wi(corpus.records, cfg.wi, 2);
    const Tensor<float> images = preprocess_corpus(corpus, cfg);
    const Dataset d = feature_dataset(images, folds[0]);
    EXPECT_EQ(d.size(), folds[0].feature_users.size() * 13);
    std::set<std::size_t> labels(d.labels.begin(), d.labels.end());
    EXPECT_EQ(labels.size(), folds[0].feature_users.size());
}
