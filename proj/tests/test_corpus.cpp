#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "mlse/container.hpp"
#include "mlse/corpus.hpp"

using namespace mlse;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mlse_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::vector<SignatureRecord> fake_records(std::size_t users, std::size_t genuine, std::size_t skilled) {
    std::vector<SignatureRecord> r;
    for (std::size_t u = 0; u < users; ++u) {
        for (std::size_t i = 0; i < genuine; ++i) r.push_back({sample_path(u, SignatureKind::Genuine, i), u, SignatureKind::Genuine});
        for (std::size_t i = 0; i < skilled; ++i) r.push_back({sample_path(u, SignatureKind::Skilled, i), u, SignatureKind::Skilled});
    }
    return r;
}

} // namespace

TEST(Corpus, GeneratesRequestedRecordsDeterministically) {
    const auto a = temp_dir("corpus_a"), b = temp_dir("corpus_b");
    const CorpusSpec spec{20, 10, 10, 24, 24};
    const Corpus c = generate_corpus(spec, 42, a);
    generate_corpus(spec, 42, b);
    EXPECT_EQ(c.records.size(), 400u);
    EXPECT_EQ(load_manifest(a / kManifestName), c.records);
    for (const auto& r : c.records) {
        EXPECT_EQ(io::read_file(a / r.path), io::read_file(b / r.path)) << r.path;
    }
    EXPECT_EQ(io::read_file(a / kManifestName), io::read_file(b / kManifestName));
    const Corpus loaded = load_corpus(a);
    EXPECT_EQ(loaded.images, c.images);
    EXPECT_NE(synthesize_corpus(spec, 43).images, c.images);
}

TEST(Corpus, SkilledForgeriesResembleTheirTargetMoreThanOtherUsers) {
    const Corpus c = synthesize_corpus(CorpusSpec{12, 6, 6, 32, 32}, 7);
    double own = 0, other = 0;
    std::size_t n_own = 0, n_other = 0;
    for (std::size_t i = 0; i < c.records.size(); ++i) {
        if (c.records[i].kind != SignatureKind::Genuine) continue;
        for (std::size_t j = 0; j < c.records.size(); ++j) {
            if (c.records[j].user == c.records[i].user && c.records[j].kind == SignatureKind::Skilled) {
                own += ink_overlap(c.images[i], c.images[j]);
                ++n_own;
            } else if (c.records[j].user != c.records[i].user && c.records[j].kind == SignatureKind::Genuine) {
                other += ink_overlap(c.images[i], c.images[j]);
                ++n_other;
            }
        }
    }
    EXPECT_GT(own / n_own, other / n_other);
}

TEST(Corpus, ImagesHaveLightBackgroundAndDarkInk) {
    const Corpus c = synthesize_corpus(CorpusSpec{3, 2, 1, 32, 32}, 1);
    for (const auto& img : c.images) {
        const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
        EXPECT_LT(*lo, 100);
        EXPECT_GT(*hi, 220);
    }
}

TEST(Manifest, ParsesAndRejectsWithLineNumbers) {
    EXPECT_TRUE(parse_manifest("").empty());
    const auto recs = fake_records(2, 2, 1);
    EXPECT_EQ(parse_manifest(format_manifest(recs)), recs);
    try {
        parse_manifest("a.pgm\t0\tgenuine\nb.pgm\t0\tfake\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("fake"), std::string::npos);
    }
    EXPECT_THROW(parse_manifest("a.pgm\tx\tgenuine\n"), ParseError);
    EXPECT_THROW(parse_manifest("a.pgm 0 genuine\n"), ParseError);
}

TEST(SplitWd, SizesDisjointnessAndDeterminism) {
    const auto recs = fake_records(5, 20, 10);
    const auto s = split_wd(recs, WdSizes{}, 3);
    EXPECT_EQ(s.eval_users.size(), 5u);
    for (const auto& [u, us] : s.per_user) {
        EXPECT_EQ(us.feature.size(), 6u);
        EXPECT_EQ(us.extra.size(), 4u);
        EXPECT_EQ(us.test_genuine.size(), 10u);
        EXPECT_EQ(us.test_skilled.size(), 10u);
        std::set<std::size_t> train(us.feature.begin(), us.feature.end());
        train.insert(us.extra.begin(), us.extra.end());
        EXPECT_EQ(train.size(), 10u);
        for (auto i : us.test_genuine) {
            EXPECT_FALSE(train.count(i));
            EXPECT_EQ(recs[i].user, u);
            EXPECT_EQ(recs[i].kind, SignatureKind::Genuine);
        }
        for (auto i : us.test_skilled) EXPECT_EQ(recs[i].kind, SignatureKind::Skilled);
    }
    const auto again = split_wd(recs, WdSizes{}, 3);
    EXPECT_EQ(again.per_user.at(2).feature, s.per_user.at(2).feature);
    EXPECT_NE(split_wd(recs, WdSizes{}, 4).per_user.at(2).feature, s.per_user.at(2).feature);
}

TEST(SplitWd, InsufficientGenuineNamesTheUser) {
    auto recs = fake_records(3, 12, 2);
    recs.erase(std::remove_if(recs.begin(), recs.end(), [](const SignatureRecord& r) {
                   return r.user == 1 && r.kind == SignatureKind::Genuine && r.path.find("_0") != std::string::npos;
               }),
               recs.end());
    try {
        split_wd(recs, WdSizes{}, 1);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("user 1"), std::string::npos);
    }
}

TEST(SplitWi, FoldSizesSwapAndDisjointness) {
    const auto recs = fake_records(20, 20, 10);
    const auto folds = split_wi(recs, WiSizes{}, 9);
    EXPECT_EQ(folds[0].feature_users.size(), 4u);
    EXPECT_EQ(folds[0].eval_users.size(), 16u);
    EXPECT_EQ(folds[1].feature_users, folds[0].eval_users);
    EXPECT_EQ(folds[1].eval_users, folds[0].feature_users);
    for (const auto& f : folds) {
        for (auto u : f.feature_users) {
            EXPECT_EQ(std::count(f.eval_users.begin(), f.eval_users.end(), u), 0);
            EXPECT_EQ(f.per_user.at(u).feature.size(), 20u);
        }
        for (auto u : f.eval_users) {
            EXPECT_TRUE(f.per_user.at(u).feature.empty());
            EXPECT_EQ(f.per_user.at(u).enrollment().size(), 10u);
            EXPECT_EQ(f.per_user.at(u).test_genuine.size(), 10u);
        }
    }
    EXPECT_THROW(split_wi(fake_records(4, 20, 1), WiSizes{}, 1), DataError);
}
