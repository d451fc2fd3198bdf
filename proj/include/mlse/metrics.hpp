#ifndef MLSE_METRICS_HPP
#define MLSE_METRICS_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mlse/errors.hpp"

namespace mlse {

/// Verification scores; higher means more likely genuine.
struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> skilled;
    std::vector<double> random;

    void append(const ScoreSet& o) {
        genuine.insert(genuine.end(), o.genuine.begin(), o.genuine.end());
        skilled.insert(skilled.end(), o.skilled.begin(), o.skilled.end());
        random.insert(random.end(), o.random.begin(), o.random.end());
    }
};

struct ErrorRates {
    double frr = 0.0;
    double far_sf = 0.0;
    double far_rf = std::numeric_limits<double>::quiet_NaN(); // NaN without random forgeries
};

namespace detail {

/// Fraction of `sorted` values < t.
inline double fraction_below(const std::vector<double>& sorted, double t) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

inline std::vector<double> sorted_copy(const std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    return s;
}

inline void check_scores(const ScoreSet& s) {
    if (s.genuine.empty()) {
        throw DataError("no genuine scores");
    }
    auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return !std::isnan(x); });
    };
    if (!finite(s.genuine) || !finite(s.skilled) || !finite(s.random)) {
        throw NumericError("NaN score");
    }
}

} // namespace detail

/// Accept iff score >= t.
inline ErrorRates far_frr_at_threshold(const ScoreSet& s, double t) {
    detail::check_scores(s);
    ErrorRates r;
    r.frr = detail::fraction_below(detail::sorted_copy(s.genuine), t);
    if (!s.skilled.empty()) r.far_sf = 1.0 - detail::fraction_below(detail::sorted_copy(s.skilled), t);
    if (!s.random.empty()) r.far_rf = 1.0 - detail::fraction_below(detail::sorted_copy(s.random), t);
    return r;
}

struct SweepPoint {
    double threshold = 0.0;
    ErrorRates rates;
};

/// Rates at -inf, every distinct score of any list (ascending), and +inf.
inline std::vector<SweepPoint> threshold_sweep(const ScoreSet& s) {
    detail::check_scores(s);
    std::vector<double> ts = s.genuine;
    ts.insert(ts.end(), s.skilled.begin(), s.skilled.end());
    ts.insert(ts.end(), s.random.begin(), s.random.end());
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    ts.insert(ts.begin(), -std::numeric_limits<double>::infinity());
    ts.push_back(std::numeric_limits<double>::infinity());
    const auto g = detail::sorted_copy(s.genuine), k = detail::sorted_copy(s.skilled), r = detail::sorted_copy(s.random);
    std::vector<SweepPoint> out;
    out.reserve(ts.size());
    for (double t : ts) {
        SweepPoint p{t, {}};
        p.rates.frr = detail::fraction_below(g, t);
        if (!k.empty()) p.rates.far_sf = 1.0 - detail::fraction_below(k, t);
        if (!r.empty()) p.rates.far_rf = 1.0 - detail::fraction_below(r, t);
        out.push_back(p);
    }
    return out;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/**
 * Equal error rate between genuine and skilled scores. Candidate thresholds
 * are the distinct genuine and skilled scores plus -inf and +inf; at the first
 * candidate where FAR - FRR <= 0 the crossing is either exact or linearly
 * interpolated from the previous candidate. An infinite bracket end yields the
 * finite end as threshold.
 */
inline EerResult compute_eer(const ScoreSet& s) {
    detail::check_scores(s);
    if (s.skilled.empty()) {
        throw DataError("EER needs skilled-forgery scores");
    }
    ScoreSet gs{s.genuine, s.skilled, {}};
    const auto sweep = threshold_sweep(gs);
    std::size_t k = 0;
    while (sweep[k].rates.far_sf - sweep[k].rates.frr > 0.0) ++k; // d(+inf) = -1 bounds the loop
    const auto& hi = sweep[k];
    const double d_hi = hi.rates.far_sf - hi.rates.frr;
    if (d_hi == 0.0) {
        return {hi.rates.frr, hi.threshold};
    }
    const auto& lo = sweep[k - 1];
    const double d_lo = lo.rates.far_sf - lo.rates.frr;
    const double a = d_lo / (d_lo - d_hi);
    EerResult r;
    r.eer = lo.rates.frr + a * (hi.rates.frr - lo.rates.frr);
    if (std::isinf(lo.threshold)) {
        r.threshold = hi.threshold;
    } else if (std::isinf(hi.threshold)) {
        r.threshold = lo.threshold;
    } else {
        r.threshold = lo.threshold + a * (hi.threshold - lo.threshold);
    }
    return r;
}

struct RunMetrics {
    double frr_sf = 0.0;
    double far_rf = 0.0;
    double far_sf = 0.0;
    double eer_sf = 0.0;
    double threshold = 0.0;
};

/// FRR and FARs at the EER threshold, plus the EER itself.
inline RunMetrics run_metrics(const ScoreSet& s) {
    const auto e = compute_eer(s);
    const auto r = far_frr_at_threshold(s, e.threshold);
    return {r.frr, r.far_rf, r.far_sf, e.eer, e.threshold};
}

inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Per-run metrics plus mean and unbiased standard deviation.
struct EvalReport {
    std::vector<RunMetrics> runs;

    RunMetrics mean() const {
        if (runs.empty()) throw DataError("empty report");
        RunMetrics m;
        for (const auto& r : runs) {
            m.frr_sf += r.frr_sf;
            m.far_rf += r.far_rf;
            m.far_sf += r.far_sf;
            m.eer_sf += r.eer_sf;
            m.threshold += r.threshold;
        }
        const double n = static_cast<double>(runs.size());
        return {m.frr_sf / n, m.far_rf / n, m.far_sf / n, m.eer_sf / n, m.threshold / n};
    }

    RunMetrics std_dev() const {
        if (runs.size() < 2) throw DataError("standard deviation needs at least 2 runs");
        const RunMetrics m = mean();
        RunMetrics v;
        for (const auto& r : runs) {
            v.frr_sf += (r.frr_sf - m.frr_sf) * (r.frr_sf - m.frr_sf);
            v.far_rf += (r.far_rf - m.far_rf) * (r.far_rf - m.far_rf);
            v.far_sf += (r.far_sf - m.far_sf) * (r.far_sf - m.far_sf);
            v.eer_sf += (r.eer_sf - m.eer_sf) * (r.eer_sf - m.eer_sf);
            v.threshold += (r.threshold - m.threshold) * (r.threshold - m.threshold);
        }
        const double d = static_cast<double>(runs.size() - 1);
        return {std::sqrt(v.frr_sf / d), std::sqrt(v.far_rf / d), std::sqrt(v.far_sf / d), std::sqrt(v.eer_sf / d),
                std::sqrt(v.threshold / d)};
    }

    /// `run,frr_sf,far_rf,far_sf,eer_sf,threshold` rows, then `mean` and (for 2+ runs) `std`.
    std::string to_csv() const {
        auto row = [](const std::string& label, const RunMetrics& m) {
            return label + "," + format_number(m.frr_sf) + "," + format_number(m.far_rf) + "," +
                   format_number(m.far_sf) + "," + format_number(m.eer_sf) + "," + format_number(m.threshold) + "\n";
        };
        std::string out = "run,frr_sf,far_rf,far_sf,eer_sf,threshold\n";
        for (std::size_t i = 0; i < runs.size(); ++i) out += row(std::to_string(i), runs[i]);
        out += row("mean", mean());
        if (runs.size() >= 2) out += row("std", std_dev());
        return out;
    }
};

/// `threshold,frr,far_sf,far_rf` rows for external plotting.
inline std::string sweep_csv(const ScoreSet& s) {
    std::string out = "threshold,frr,far_sf,far_rf\n";
    for (const auto& p : threshold_sweep(s)) {
        out += format_number(p.threshold) + "," + format_number(p.rates.frr) + "," + format_number(p.rates.far_sf) +
               "," + format_number(p.rates.far_rf) + "\n";
    }
    return out;
}

} // namespace mlse

#endif // MLSE_METRICS_HPP
