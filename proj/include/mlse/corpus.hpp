#ifndef MLSE_CORPUS_HPP
#define MLSE_CORPUS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mlse/container.hpp"
#include "mlse/errors.hpp"
#include "mlse/preprocess.hpp"
#include "mlse/rng.hpp"

namespace mlse {

enum class SignatureKind { Genuine, Skilled };

inline std::string kind_name(SignatureKind k) { return k == SignatureKind::Genuine ? "genuine" : "skilled"; }

struct SignatureRecord {
    std::string path; // relative to the corpus directory
    std::size_t user = 0;
    SignatureKind kind = SignatureKind::Genuine;

    friend bool operator==(const SignatureRecord&, const SignatureRecord&) = default;
};

inline constexpr const char* kManifestName = "manifest.tsv";

inline std::string format_manifest(const std::vector<SignatureRecord>& records) {
    std::string out;
    for (const auto& r : records) out += r.path + "\t" + std::to_string(r.user) + "\t" + kind_name(r.kind) + "\n";
    return out;
}

inline std::vector<SignatureRecord> parse_manifest(const std::string& text) {
    std::vector<SignatureRecord> records;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw ParseError(lineno, "expected <path>\\t<user>\\t<kind>");
        }
        SignatureRecord r;
        r.path = line.substr(0, t1);
        const std::string user = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string kind = line.substr(t2 + 1);
        if (r.path.empty()) {
            throw ParseError(lineno, "empty path");
        }
        if (user.empty() || user.size() > 9 || !std::all_of(user.begin(), user.end(), [](char c) {
                return c >= '0' && c <= '9';
            })) {
            throw ParseError(lineno, "bad user id '" + user + "'");
        }
        r.user = std::stoul(user);
        if (kind == "genuine") {
            r.kind = SignatureKind::Genuine;
        } else if (kind == "skilled") {
            r.kind = SignatureKind::Skilled;
        } else {
            throw ParseError(lineno, "unknown kind '" + kind + "'");
        }
        records.push_back(std::move(r));
    }
    return records;
}

inline std::vector<SignatureRecord> load_manifest(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<SignatureRecord>& records) {
    io::write_text_atomic(path, format_manifest(records));
}

/// Records plus their raw images, in manifest order.
struct Corpus {
    std::vector<SignatureRecord> records;
    std::vector<GrayImage> images;

    std::vector<std::size_t> users() const {
        std::set<std::size_t> u;
        for (const auto& r : records) u.insert(r.user);
        return {u.begin(), u.end()};
    }
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus c;
    c.records = load_manifest(dir / kManifestName);
    c.images.reserve(c.records.size());
    for (const auto& r : c.records) c.images.push_back(read_pgm(dir / r.path));
    return c;
}

// ---------------------------------------------------------------------------
// Synthetic signatures

struct Point {
    double x = 0, y = 0;
};

/// A pen stroke: a chain of cubic Bezier segments (3k + 1 control points).
using Stroke = std::vector<Point>;

struct SignatureTemplate {
    std::vector<Stroke> strokes;
};

/// Perturbation applied to a template when drawing one sample.
struct Jitter {
    double control_noise = 0.0; // per control point, normalized units
    double rotation = 0.0;      // max radians
    double scale = 0.0;         // max relative
    double shift = 0.0;         // max normalized translation
    double drop_stroke = 0.0;   // per-stroke drop probability
    double add_stroke = 0.0;    // probability of one extra random stroke
};

inline constexpr Jitter kGenuineJitter{0.012, 0.05, 0.05, 0.025, 0.0, 0.0};
inline constexpr Jitter kSkilledJitter{0.035, 0.12, 0.10, 0.05, 0.2, 0.4};

inline Stroke random_stroke(Rng& rng) {
    Stroke s;
    Point p{rng.uniform(0.12, 0.88), rng.uniform(0.25, 0.75)};
    s.push_back(p);
    const std::size_t segments = 1 + rng.below(3);
    for (std::size_t k = 0; k < segments * 3; ++k) {
        p.x = std::clamp(p.x + rng.uniform(-0.22, 0.22), 0.06, 0.94);
        p.y = std::clamp(p.y + rng.uniform(-0.25, 0.25), 0.12, 0.88);
        s.push_back(p);
    }
    return s;
}

inline SignatureTemplate random_template(Rng& rng) {
    SignatureTemplate t;
    const std::size_t n = 3 + rng.below(3);
    for (std::size_t i = 0; i < n; ++i) t.strokes.push_back(random_stroke(rng));
    return t;
}

inline SignatureTemplate perturb(const SignatureTemplate& base, const Jitter& j, Rng& rng) {
    SignatureTemplate out;
    for (const auto& s : base.strokes) {
        const bool drop = rng.bernoulli(j.drop_stroke);
        if (!drop) out.strokes.push_back(s);
    }
    if (out.strokes.empty()) out.strokes.push_back(base.strokes.front());
    if (rng.bernoulli(j.add_stroke)) out.strokes.push_back(random_stroke(rng));
    const double angle = rng.uniform(-j.rotation, j.rotation);
    const double sx = 1.0 + rng.uniform(-j.scale, j.scale);
    const double sy = 1.0 + rng.uniform(-j.scale, j.scale);
    const double tx = rng.uniform(-j.shift, j.shift);
    const double ty = rng.uniform(-j.shift, j.shift);
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& stroke : out.strokes) {
        for (auto& p : stroke) {
            const double x = (p.x - 0.5 + rng.normal() * j.control_noise) * sx;
            const double y = (p.y - 0.5 + rng.normal() * j.control_noise) * sy;
            p = {0.5 + c * x - s * y + tx, 0.5 + s * x + c * y + ty};
        }
    }
    return out;
}

inline Point bezier(const Point& a, const Point& b, const Point& c, const Point& d, double t) {
    const double u = 1.0 - t;
    const double w0 = u * u * u, w1 = 3 * u * u * t, w2 = 3 * u * t * t, w3 = t * t * t;
    return {w0 * a.x + w1 * b.x + w2 * c.x + w3 * d.x, w0 * a.y + w1 * b.y + w2 * c.y + w3 * d.y};
}

/// Dark anti-aliased strokes on a light, slightly noisy page.
inline GrayImage render_signature(const SignatureTemplate& t, std::size_t width, std::size_t height, Rng& rng) {
    GrayImage img(width, height);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(255 - rng.below(24));
    const double radius = std::max(0.75, 0.028 * static_cast<double>(std::min(width, height)));
    const double ink = rng.uniform(20.0, 70.0);
    std::vector<double> darkness(width * height, 0.0);
    const double W = static_cast<double>(width), H = static_cast<double>(height);
    for (const auto& s : t.strokes) {
        for (std::size_t k = 0; k + 3 < s.size(); k += 3) {
            const double len = std::hypot((s[k + 3].x - s[k].x) * W, (s[k + 3].y - s[k].y) * H) +
                               std::hypot((s[k + 1].x - s[k].x) * W, (s[k + 1].y - s[k].y) * H) +
                               std::hypot((s[k + 2].x - s[k + 3].x) * W, (s[k + 2].y - s[k + 3].y) * H);
            const std::size_t steps = std::max<std::size_t>(8, static_cast<std::size_t>(len * 3.0));
            for (std::size_t i = 0; i <= steps; ++i) {
                const Point p = bezier(s[k], s[k + 1], s[k + 2], s[k + 3], static_cast<double>(i) / steps);
                const double px = p.x * W - 0.5, py = p.y * H - 0.5;
                const auto x0 = static_cast<long>(std::floor(px - radius - 1));
                const auto y0 = static_cast<long>(std::floor(py - radius - 1));
                for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(height) - 1, y0 + 2 * radius + 3);
                     ++y) {
                    for (long x = std::max(0L, x0);
                         x <= std::min<long>(static_cast<long>(width) - 1, x0 + 2 * radius + 3); ++x) {
                        const double d = std::hypot(static_cast<double>(x) - px, static_cast<double>(y) - py);
                        const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
                        auto& dk = darkness[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
                        dk = std::max(dk, cover);
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < darkness.size(); ++i) {
        const double page = img.pixels[i];
        const double v = page + (ink - page) * darkness[i];
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
    return img;
}

struct CorpusSpec {
    std::size_t users = 20;
    std::size_t genuine = 20;
    std::size_t skilled = 10;
    std::size_t width = 32;
    std::size_t height = 32;

    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

inline std::string sample_path(std::size_t user, SignatureKind kind, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "user_%03zu/%s_%02zu.pgm", user, kind_name(kind).c_str(), index);
    return buf;
}

/// In-memory synthetic corpus; user u's skilled forgeries imitate u's template.
inline Corpus synthesize_corpus(const CorpusSpec& spec, std::uint64_t seed) {
    if (spec.users == 0 || spec.genuine == 0 || spec.width == 0 || spec.height == 0) {
        throw ParameterError("corpus users, genuine count and image size must be positive");
    }
    Corpus c;
    for (std::size_t u = 0; u < spec.users; ++u) {
        Rng trng(derive_seed(seed, {0xC0, u}));
        const SignatureTemplate base = random_template(trng);
        for (std::size_t i = 0; i < spec.genuine + spec.skilled; ++i) {
            const bool genuine = i < spec.genuine;
            const SignatureKind kind = genuine ? SignatureKind::Genuine : SignatureKind::Skilled;
            const std::size_t index = genuine ? i : i - spec.genuine;
            Rng rng(derive_seed(seed, {0xC1, u, static_cast<std::uint64_t>(kind), index}));
            const auto shape = perturb(base, genuine ? kGenuineJitter : kSkilledJitter, rng);
            c.records.push_back({sample_path(u, kind, index), u, kind});
            c.images.push_back(render_signature(shape, spec.width, spec.height, rng));
        }
    }
    return c;
}

/// Writes PGM files and the manifest under `dir`.
inline Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
    Corpus c = synthesize_corpus(spec, seed);
    try {
        std::filesystem::create_directories(dir);
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError("cannot create corpus directory " + dir.string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < c.records.size(); ++i) write_pgm(dir / c.records[i].path, c.images[i]);
    write_manifest(dir / kManifestName, c.records);
    return c;
}

/// Intersection over union of the OTSU ink masks of two same-size images.
inline double ink_overlap(const GrayImage& a, const GrayImage& b) {
    if (a.width != b.width || a.height != b.height) {
        throw DimensionError("ink_overlap needs equal image sizes");
    }
    const auto ta = otsu_threshold(a), tb = otsu_threshold(b);
    std::size_t both = 0, any = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const bool ia = a.pixels[i] <= ta, ib = b.pixels[i] <= tb;
        both += ia && ib;
        any += ia || ib;
    }
    return any == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(any);
}

// ---------------------------------------------------------------------------
// Protocol splits (indices into Corpus::records)

struct UserSplit {
    std::vector<std::size_t> feature;      // genuine used to train the network
    std::vector<std::size_t> extra;        // further genuine used only for SVM training
    std::vector<std::size_t> test_genuine; // held out
    std::vector<std::size_t> test_skilled; // held out

    /// Positive SVM training samples.
    std::vector<std::size_t> enrollment() const {
        std::vector<std::size_t> out = feature;
        out.insert(out.end(), extra.begin(), extra.end());
        return out;
    }
};

struct ProtocolSplit {
    std::vector<std::size_t> feature_users;       // whose `feature` samples train the network
    std::vector<std::size_t> eval_users;          // enrolled and tested
    std::map<std::size_t, UserSplit> per_user;    // every user of either role
};

struct WdSizes {
    std::size_t feature = 6;
    std::size_t extra = 4;

    friend bool operator==(const WdSizes&, const WdSizes&) = default;
};

inline std::map<std::size_t, std::vector<std::size_t>> indices_by_user(const std::vector<SignatureRecord>& records,
                                                                        SignatureKind kind) {
    std::map<std::size_t, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].kind == kind) out[records[i].user].push_back(i);
    }
    return out;
}

/// Writer-dependent split: per user, `feature` + `extra` random genuine for training, the rest for testing.
inline ProtocolSplit split_wd(const std::vector<SignatureRecord>& records, const WdSizes& sizes, std::uint64_t seed) {
    auto genuine = indices_by_user(records, SignatureKind::Genuine);
    auto skilled = indices_by_user(records, SignatureKind::Skilled);
    for (const auto& [user, idx] : skilled) {
        if (!genuine.count(user)) {
            throw DataError("user " + std::to_string(user) + " has skilled forgeries but no genuine signatures");
        }
    }
    if (genuine.size() < 2) {
        throw DataError("writer-dependent protocol needs at least 2 users");
    }
    ProtocolSplit split;
    for (auto& [user, idx] : genuine) {
        if (idx.size() < sizes.feature + sizes.extra + 1) {
            throw DataError("user " + std::to_string(user) + " has " + std::to_string(idx.size()) +
                            " genuine signatures, needs at least " +
                            std::to_string(sizes.feature + sizes.extra + 1));
        }
        Rng rng(derive_seed(seed, {0x5D, user}));
        rng.shuffle(idx);
        UserSplit s;
        s.feature.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(sizes.feature));
        s.extra.assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.feature),
                       idx.begin() + static_cast<std::ptrdiff_t>(sizes.feature + sizes.extra));
        s.test_genuine.assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.feature + sizes.extra), idx.end());
        std::sort(s.feature.begin(), s.feature.end());
        std::sort(s.extra.begin(), s.extra.end());
        std::sort(s.test_genuine.begin(), s.test_genuine.end());
        if (auto it = skilled.find(user); it != skilled.end()) s.test_skilled = it->second;
        split.feature_users.push_back(user);
        split.eval_users.push_back(user);
        split.per_user.emplace(user, std::move(s));
    }
    return split;
}

struct WiSizes {
    double feature_fraction = 0.2;
    std::size_t enroll = 10;

    friend bool operator==(const WiSizes&, const WiSizes&) = default;
};

/**
 * Writer-independent repetition: users are partitioned into a fold of
 * round(fraction * n) users and the rest. Evaluation 0 learns features on the
 * small fold and enrolls the large one; evaluation 1 swaps the roles.
 */
inline std::array<ProtocolSplit, 2> split_wi(const std::vector<SignatureRecord>& records, const WiSizes& sizes,
                                             std::uint64_t seed) {
    const auto genuine = indices_by_user(records, SignatureKind::Genuine);
    const auto skilled = indices_by_user(records, SignatureKind::Skilled);
    std::vector<std::size_t> users;
    for (const auto& [u, idx] : genuine) users.push_back(u);
    if (users.size() < 5) {
        throw DataError("writer-independent protocol needs at least 5 users, got " + std::to_string(users.size()));
    }
    Rng rng(derive_seed(seed, {0x5E}));
    rng.shuffle(users);
    const auto n_small = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(sizes.feature_fraction * static_cast<double>(users.size()))), 2,
        users.size() - 2);
    std::vector<std::size_t> fold_a(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_small));
    std::vector<std::size_t> fold_b(users.begin() + static_cast<std::ptrdiff_t>(n_small), users.end());
    std::sort(fold_a.begin(), fold_a.end());
    std::sort(fold_b.begin(), fold_b.end());

    auto make = [&](const std::vector<std::size_t>& learn, const std::vector<std::size_t>& eval, std::uint64_t tag) {
        ProtocolSplit split;
        split.feature_users = learn;
        split.eval_users = eval;
        for (auto u : learn) {
            UserSplit s;
            s.feature = genuine.at(u);
            split.per_user.emplace(u, std::move(s));
        }
        for (auto u : eval) {
            std::vector<std::size_t> idx = genuine.at(u);
            if (idx.size() < sizes.enroll + 1) {
                throw DataError("user " + std::to_string(u) + " has " + std::to_string(idx.size()) +
                                " genuine signatures, needs at least " + std::to_string(sizes.enroll + 1));
            }
            Rng r(derive_seed(seed, {0x5F, tag, u}));
            r.shuffle(idx);
            UserSplit s;
            s.extra.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(sizes.enroll));
            s.test_genuine.assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.enroll), idx.end());
            std::sort(s.extra.begin(), s.extra.end());
            std::sort(s.test_genuine.begin(), s.test_genuine.end());
            if (auto it = skilled.find(u); it != skilled.end()) s.test_skilled = it->second;
            split.per_user.emplace(u, std::move(s));
        }
        return split;
    };
    return {make(fold_a, fold_b, 0), make(fold_b, fold_a, 1)};
}

} // namespace mlse

#endif // MLSE_CORPUS_HPP
