#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hpnet/error.hpp"
#include "hpnet/parallel.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/stats.hpp"

// Survival-evaluation statistics: C-index, Kaplan-Meier, log-rank, risk
// stratification, IPCW time-dependent ROC, classifier ROC, and the
// reproducibility statistics (Pearson, ICC, Wilcoxon rank-sum).

namespace hpnet {

enum class TieRule { strict, half };

struct ConcordanceResult {
    double c = 0.0;
    std::size_t pairs = 0;
};

// Orderable pairs (i,j): T_j < T_i and subject j progressed. C is the
// fraction where the earlier progressor carries the larger risk. Risk ties
// score 0 under the strict rule and 0.5 under the half rule.
inline ConcordanceResult concordance_index(const std::vector<double>& risk,
                                           const std::vector<double>& time,
                                           const std::vector<int>& event,
                                           TieRule rule = TieRule::strict) {
    const std::size_t n = risk.size();
    if (time.size() != n || event.size() != n)
        throw ShapeError("concordance_index: input lengths differ");
    double score = 0.0;
    std::size_t pairs = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!event[j]) continue;
        for (std::size_t i = 0; i < n; ++i) {
            if (time[j] >= time[i]) continue;
            ++pairs;
            if (risk[j] > risk[i])
                score += 1.0;
            else if (risk[j] == risk[i] && rule == TieRule::half)
                score += 0.5;
        }
    }
    if (pairs == 0) throw PreconditionError("concordance_index: no orderable pairs");
    return {score / double(pairs), pairs};
}

struct SurvivalCurve {
    std::vector<double> time;      // distinct event times, ascending
    std::vector<double> survival;  // S(t_k)
    std::vector<int> at_risk;      // n_k
    std::vector<int> events;       // d_k
};

// Product-limit estimator; at tied times events precede censorings.
inline SurvivalCurve kaplan_meier(const std::vector<double>& time, const std::vector<int>& event) {
    const std::size_t n = time.size();
    if (n == 0) throw PreconditionError("kaplan_meier: empty data");
    if (event.size() != n) throw ShapeError("kaplan_meier: input lengths differ");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });

    SurvivalCurve curve;
    double s = 1.0;
    std::size_t k = 0;
    int at_risk = int(n);
    while (k < n) {
        const double t = time[idx[k]];
        int d = 0, c = 0;
        while (k < n && time[idx[k]] == t) {
            if (event[idx[k]]) ++d; else ++c;
            ++k;
        }
        if (d > 0) {
            s *= 1.0 - double(d) / double(at_risk);
            curve.time.push_back(t);
            curve.survival.push_back(s);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(d);
        }
        at_risk -= d + c;
    }
    return curve;
}

inline double survival_at(const SurvivalCurve& curve, double t) {
    double s = 1.0;
    for (std::size_t k = 0; k < curve.time.size() && curve.time[k] <= t; ++k) s = curve.survival[k];
    return s;
}

struct LogrankResult {
    double statistic = 0.0;
    double p = 1.0;
    int df = 0;
};

// k-group log-rank; statistic ~ chi-square on k-1 df under the null.
inline LogrankResult logrank_test(const std::vector<int>& group, const std::vector<double>& time,
                                  const std::vector<int>& event) {
    const std::size_t n = group.size();
    if (time.size() != n || event.size() != n) throw ShapeError("logrank_test: input lengths differ");
    int k = 0;
    for (int g : group) {
        if (g < 0) throw PreconditionError("logrank_test: negative group label");
        k = std::max(k, g + 1);
    }
    if (k < 2) throw PreconditionError("logrank_test: need at least 2 groups");
    std::vector<int> sizes(k, 0);
    for (int g : group) ++sizes[g];
    for (int g = 0; g < k; ++g)
        if (sizes[g] == 0) throw PreconditionError("logrank_test: empty group " + std::to_string(g));

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });

    const int m = k - 1;
    std::vector<double> ome(m, 0.0);      // observed - expected, first k-1 groups
    std::vector<double> cov(m * m, 0.0);  // covariance of (O-E)

    std::vector<int> at_risk_g(sizes);
    int at_risk = int(n);
    std::size_t i = 0;
    while (i < n) {
        const double t = time[idx[i]];
        std::vector<int> d_g(k, 0), c_g(k, 0);
        int d = 0;
        while (i < n && time[idx[i]] == t) {
            const int g = group[idx[i]];
            if (event[idx[i]]) { ++d_g[g]; ++d; } else { ++c_g[g]; }
            ++i;
        }
        if (d > 0 && at_risk > 1) {
            const double nn = double(at_risk);
            const double dd = double(d);
            const double hyper = dd * (nn - dd) / (nn - 1.0);
            for (int g = 0; g < m; ++g) {
                const double ng = double(at_risk_g[g]);
                ome[g] += double(d_g[g]) - dd * ng / nn;
                for (int h = 0; h < m; ++h) {
                    const double nh = double(at_risk_g[h]);
                    const double delta = g == h ? 1.0 : 0.0;
                    cov[g * m + h] += hyper * (ng / nn) * (delta - nh / nn);
                }
            }
        }
        for (int g = 0; g < k; ++g) at_risk_g[g] -= d_g[g] + c_g[g];
        at_risk = 0;
        for (int g = 0; g < k; ++g) at_risk += at_risk_g[g];
    }

    LogrankResult r;
    r.df = m;
    double stat = 0.0;
    try {
        auto x = solve_spd(cov, ome);
        for (int g = 0; g < m; ++g) stat += ome[g] * x[g];
    } catch (const NumericError&) {
        stat = 0.0;  // degenerate variance (e.g. no events): no evidence against the null
    }
    r.statistic = std::max(0.0, stat);
    r.p = chisq_sf(r.statistic, r.df);
    return r;
}

enum class RiskGroup { Low, Middle, High };

inline std::string to_string(RiskGroup g) {
    switch (g) {
        case RiskGroup::Low: return "Low";
        case RiskGroup::Middle: return "Middle";
        default: return "High";
    }
}

// Low: below the 1st quartile; High: at or above the 3rd; Middle: the rest.
inline std::vector<RiskGroup> stratify_by_risk(const std::vector<double>& risk) {
    if (risk.size() < 4) throw PreconditionError("stratify_by_risk: need at least 4 subjects");
    const double q1 = quantile(risk, 0.25);
    const double q3 = quantile(risk, 0.75);
    std::vector<RiskGroup> out(risk.size());
    for (std::size_t i = 0; i < risk.size(); ++i)
        out[i] = risk[i] < q1 ? RiskGroup::Low : (risk[i] >= q3 ? RiskGroup::High : RiskGroup::Middle);
    return out;
}

struct RocPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

namespace detail {

// Weighted ROC sweep + Mann-Whitney AUC (ties count 1/2). "Positive" means
// score >= threshold; thresholds are the distinct scores, descending.
inline RocCurve weighted_roc(const std::vector<double>& case_scores,
                             const std::vector<double>& case_w,
                             const std::vector<double>& control_scores,
                             const std::vector<double>& control_w) {
    double w1 = 0.0, w0 = 0.0;
    for (double w : case_w) w1 += w;
    for (double w : control_w) w0 += w;

    RocCurve roc;
    double num = 0.0;
    for (std::size_t i = 0; i < case_scores.size(); ++i)
        for (std::size_t j = 0; j < control_scores.size(); ++j) {
            if (case_scores[i] > control_scores[j])
                num += case_w[i] * control_w[j];
            else if (case_scores[i] == control_scores[j])
                num += 0.5 * case_w[i] * control_w[j];
        }
    roc.auc = num / (w1 * w0);

    std::vector<double> thresholds;
    thresholds.reserve(case_scores.size() + control_scores.size());
    thresholds.insert(thresholds.end(), case_scores.begin(), case_scores.end());
    thresholds.insert(thresholds.end(), control_scores.begin(), control_scores.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    for (double c : thresholds) {
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < case_scores.size(); ++i)
            if (case_scores[i] >= c) tp += case_w[i];
        for (std::size_t j = 0; j < control_scores.size(); ++j)
            if (control_scores[j] >= c) fp += control_w[j];
        roc.points.push_back({c, tp / w1, 1.0 - fp / w0});
    }
    return roc;
}

}  // namespace detail

inline RocCurve binary_roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("binary_roc_auc: input lengths differ");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        (labels[i] ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty())
        throw PreconditionError("binary_roc_auc: both classes must be present");
    std::vector<double> wp(pos.size(), 1.0), wn(neg.size(), 1.0);
    return detail::weighted_roc(pos, wp, neg, wn);
}

struct TdRoc {
    RocCurve roc;
    double horizon = 0.0;
    std::size_t cases = 0, controls = 0;
};

// Time-dependent ROC at horizon t with inverse-probability-of-censoring
// weights. Cases {T <= t, event} weigh 1/G(T-); controls {T > t} weigh
// 1/G(t), with G the Kaplan-Meier estimator of the censoring distribution.
inline TdRoc td_roc_ipcw(const std::vector<double>& risk, const std::vector<double>& time,
                         const std::vector<int>& event, double horizon) {
    const std::size_t n = risk.size();
    if (time.size() != n || event.size() != n) throw ShapeError("td_roc_ipcw: input lengths differ");
    std::vector<int> censor_event(n);
    for (std::size_t i = 0; i < n; ++i) censor_event[i] = event[i] ? 0 : 1;
    const SurvivalCurve g = kaplan_meier(time, censor_event);

    auto g_at = [&](double t) { return survival_at(g, t); };
    auto g_before = [&](double t) {  // left limit G(t-)
        double s = 1.0;
        for (std::size_t k = 0; k < g.time.size() && g.time[k] < t; ++k) s = g.survival[k];
        return s;
    };

    std::vector<double> case_scores, case_w, control_scores, control_w;
    for (std::size_t i = 0; i < n; ++i) {
        if (time[i] <= horizon && event[i]) {
            const double gi = g_before(time[i]);
            if (gi <= 0.0)
                throw NumericError("td_roc_ipcw: censoring survival is 0 at t=" +
                                   std::to_string(time[i]) + "; IPCW weight undefined");
            case_scores.push_back(risk[i]);
            case_w.push_back(1.0 / gi);
        } else if (time[i] > horizon) {
            const double gt = g_at(horizon);
            if (gt <= 0.0)
                throw NumericError("td_roc_ipcw: censoring survival is 0 at the horizon; "
                                   "IPCW weight undefined");
            control_scores.push_back(risk[i]);
            control_w.push_back(1.0 / gt);
        }
    }
    if (case_scores.empty())
        throw PreconditionError("td_roc_ipcw: no events observed by the horizon");
    if (control_scores.empty())
        throw PreconditionError("td_roc_ipcw: no subjects at risk beyond the horizon");

    TdRoc out;
    out.horizon = horizon;
    out.cases = case_scores.size();
    out.controls = control_scores.size();
    out.roc = detail::weighted_roc(case_scores, case_w, control_scores, control_w);
    return out;
}

inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw ShapeError("pearson_r: input lengths differ");
    if (n < 3) throw PreconditionError("pearson_r: need n >= 3");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
    mx /= double(n);
    my /= double(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson_r: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

// One-way random-effects, absolute-agreement ICC(1,1) for two raters.
inline double icc(const std::vector<double>& rater1, const std::vector<double>& rater2) {
    const std::size_t n = rater1.size();
    if (rater2.size() != n) throw ShapeError("icc: input lengths differ");
    if (n < 3) throw PreconditionError("icc: need n >= 3");
    const double k = 2.0;
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) grand += rater1[i] + rater2[i];
    grand /= k * double(n);
    double bss = 0.0, wss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mi = (rater1[i] + rater2[i]) / k;
        bss += k * (mi - grand) * (mi - grand);
        wss += (rater1[i] - mi) * (rater1[i] - mi) + (rater2[i] - mi) * (rater2[i] - mi);
    }
    const double bms = bss / double(n - 1);
    const double wms = wss / (double(n) * (k - 1.0));
    if (bms == 0.0 && wms == 0.0) throw NumericError("icc: zero variance");
    return (bms - wms) / (bms + (k - 1.0) * wms);
}

struct WilcoxonResult {
    double statistic = 0.0;  // rank sum of the first sample
    double p = 1.0;
};

// Normal approximation with tie correction and continuity correction.
inline WilcoxonResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw PreconditionError("wilcoxon_rank_sum: empty sample");
    const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
    std::vector<std::pair<double, int>> all;  // value, sample id
    all.reserve(n);
    for (double v : a) all.push_back({v, 0});
    for (double v : b) all.push_back({v, 1});
    std::sort(all.begin(), all.end());

    double w = 0.0, tie_term = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const double t = double(j - i);
        const double midrank = (double(i + 1) + double(j)) / 2.0;
        for (std::size_t kk = i; kk < j; ++kk)
            if (all[kk].second == 0) w += midrank;
        tie_term += t * t * t - t;
        i = j;
    }

    const double mu = double(n1) * double(n + 1) / 2.0;
    const double var = double(n1) * double(n2) / 12.0 *
                       (double(n + 1) - tie_term / (double(n) * double(n - 1)));
    WilcoxonResult r;
    r.statistic = w;
    if (var <= 0.0) return r;  // all values tied
    double z = w - mu;
    z -= z > 0 ? 0.5 : (z < 0 ? -0.5 : 0.0);
    z /= std::sqrt(var);
    r.p = normal_two_sided_p(z);
    return r;
}

enum class AmyloidStatus { positive, negative, unknown };

inline std::string to_string(AmyloidStatus s) {
    switch (s) {
        case AmyloidStatus::positive: return "positive";
        case AmyloidStatus::negative: return "negative";
        default: return "unknown";
    }
}

// CSF abeta42 below 192 pg/mL, or SUVR above 1.11 when CSF is unavailable.
inline AmyloidStatus amyloid_status(std::optional<double> csf_abeta42, std::optional<double> suvr) {
    if (csf_abeta42)
        return *csf_abeta42 < 192.0 ? AmyloidStatus::positive : AmyloidStatus::negative;
    if (suvr) return *suvr > 1.11 ? AmyloidStatus::positive : AmyloidStatus::negative;
    return AmyloidStatus::unknown;
}

struct BootstrapCi {
    double estimate = 0.0;
    double lo = 0.0, hi = 0.0;
    int resamples_used = 0;
};

// Percentile bootstrap over subjects. `statistic` receives resampled subject
// indices and may throw (degenerate resamples are skipped). Per-resample
// seeds derive from the master seed, so resamples are order-independent.
inline BootstrapCi bootstrap_percentile_ci(std::size_t n,
                                           const std::function<double(const std::vector<std::size_t>&)>& statistic,
                                           int resamples, std::uint64_t seed, double level = 0.95) {
    if (n == 0) throw PreconditionError("bootstrap: empty sample");
    std::vector<std::size_t> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    BootstrapCi ci;
    ci.estimate = statistic(identity);

    std::vector<double> stats(resamples, std::numeric_limits<double>::quiet_NaN());
    parallel_for(std::size_t(resamples), [&](std::size_t r) {
        Rng rng(derive_seed(seed, r));
        std::vector<std::size_t> idx(n);
        for (auto& v : idx) v = std::size_t(rng.below(n));
        try {
            stats[r] = statistic(idx);
        } catch (const std::exception&) {
            // leave NaN; skipped below
        }
    });
    std::vector<double> ok;
    ok.reserve(stats.size());
    for (double v : stats)
        if (std::isfinite(v)) ok.push_back(v);
    if (ok.empty()) throw NumericError("bootstrap: every resample was degenerate");
    ci.resamples_used = int(ok.size());
    const double alpha = (1.0 - level) / 2.0;
    ci.lo = quantile(ok, alpha);
    ci.hi = quantile(ok, 1.0 - alpha);
    return ci;
}

}  // namespace hpnet
