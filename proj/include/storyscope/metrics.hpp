#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace storyscope::metrics {

// ---------------------------------------------------------------------------
// Classification report
// ---------------------------------------------------------------------------

struct ClassificationReport {
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;

    Json to_json() const {
        return Json{{"confusion", confusion}, {"precision", precision},     {"recall", recall},
                    {"f1", f1},               {"macro_f1", macro_f1},       {"accuracy", accuracy},
                    {"balanced_accuracy", balanced_accuracy}};
    }
};

/// Zero-denominator precision/recall/F1 are defined as 0, never NaN.
inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline ClassificationReport classification_report(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                                  int n_classes) {
    if (y_true.size() != y_pred.size()) throw ValidationError("label vectors differ in length");
    ClassificationReport r;
    r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] < 0 || y_true[i] >= n_classes || y_pred[i] < 0 || y_pred[i] >= n_classes)
            throw ValidationError("label out of range at index " + std::to_string(i));
        r.confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])]++;
    }
    std::size_t correct = 0;
    for (int k = 0; k < n_classes; ++k) {
        auto ks = static_cast<std::size_t>(k);
        double tp = static_cast<double>(r.confusion[ks][ks]);
        double pred_k = 0, true_k = 0;
        for (int j = 0; j < n_classes; ++j) {
            pred_k += static_cast<double>(r.confusion[static_cast<std::size_t>(j)][ks]);
            true_k += static_cast<double>(r.confusion[ks][static_cast<std::size_t>(j)]);
        }
        correct += r.confusion[ks][ks];
        double p = safe_div(tp, pred_k);
        double rc = safe_div(tp, true_k);
        r.precision.push_back(p);
        r.recall.push_back(rc);
        r.f1.push_back(safe_div(2 * p * rc, p + rc));
    }
    r.accuracy = safe_div(static_cast<double>(correct), static_cast<double>(y_true.size()));
    for (int k = 0; k < n_classes; ++k) {
        r.macro_f1 += r.f1[static_cast<std::size_t>(k)] / n_classes;
        r.balanced_accuracy += r.recall[static_cast<std::size_t>(k)] / n_classes;
    }
    return r;
}

inline double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred, int n_classes) {
    return classification_report(y_true, y_pred, n_classes).macro_f1;
}

/// Row-normalized percentage layout: one row per true class.
inline std::string confusion_csv(const ClassificationReport& r, const std::vector<std::string>& class_names) {
    std::string out = "true\\pred";
    for (const auto& n : class_names) out += "," + n;
    out += '\n';
    char buf[64];
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        out += class_names[i];
        double total = 0;
        for (auto v : r.confusion[i]) total += static_cast<double>(v);
        for (auto v : r.confusion[i]) {
            std::snprintf(buf, sizeof(buf), ",%.1f", 100.0 * safe_div(static_cast<double>(v), total));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Average precision (AUPRC)
// ---------------------------------------------------------------------------

/// Step-wise AP over descending-score thresholds with ties grouped: each
/// distinct score is one threshold, AP = sum over thresholds of
/// (R_i - R_{i-1}) * P_i.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& y_true) {
    if (scores.size() != y_true.size()) throw ValidationError("scores and labels differ in length");
    std::size_t n_pos = 0;
    for (int y : y_true) n_pos += (y == 1);
    if (n_pos == 0) throw ValidationError("average_precision needs at least one positive");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        // Group all items sharing this score into one threshold.
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (y_true[order[j]] == 1)
                tp += 1;
            else
                fp += 1;
            ++j;
        }
        double recall = tp / static_cast<double>(n_pos);
        double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

// ---------------------------------------------------------------------------
// Agreement statistics
// ---------------------------------------------------------------------------

inline double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ValidationError("rater vectors differ in length");
    if (a.empty()) throw ValidationError("cohen_kappa needs at least one item");
    const double n = static_cast<double>(a.size());
    std::map<int, double> ma, mb;
    double agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma[a[i]] += 1;
        mb[b[i]] += 1;
        if (a[i] == b[i]) agree += 1;
    }
    double p_o = agree / n;
    double p_e = 0;
    for (const auto& [label, ca] : ma) {
        auto it = mb.find(label);
        if (it != mb.end()) p_e += (ca / n) * (it->second / n);
    }
    if (1.0 - p_e == 0.0) return p_o == 1.0 ? 1.0 : 0.0;
    return (p_o - p_e) / (1.0 - p_e);
}

/// Nominal Krippendorff's alpha over a units x raters table; std::nullopt
/// marks a missing rating. Uses the coincidence-matrix formulation.
inline double krippendorff_alpha_nominal(const std::vector<std::vector<std::optional<int>>>& ratings) {
    std::map<int, double> totals;                 // n_c
    std::map<std::pair<int, int>, double> coinc;  // o_{cc'}
    double n = 0;
    for (const auto& unit : ratings) {
        std::vector<int> vals;
        for (const auto& r : unit)
            if (r) vals.push_back(*r);
        if (vals.size() < 2) continue;
        const double m = static_cast<double>(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) {
            totals[vals[i]] += 1;
            n += 1;
            for (std::size_t j = 0; j < vals.size(); ++j) {
                if (i == j) continue;
                coinc[{vals[i], vals[j]}] += 1.0 / (m - 1.0);
            }
        }
    }
    if (n < 2) throw ValidationError("krippendorff_alpha needs at least one unit with two ratings");
    double observed_agree = 0;
    for (const auto& [cc, o] : coinc)
        if (cc.first == cc.second) observed_agree += o;
    double a_o = observed_agree / n;
    double a_e = 0;
    for (const auto& [c, nc] : totals) a_e += nc * (nc - 1.0);
    a_e /= n * (n - 1.0);
    if (1.0 - a_e == 0.0) return a_o == 1.0 ? 1.0 : 0.0;
    return (a_o - a_e) / (1.0 - a_e);
}

// ---------------------------------------------------------------------------
// Prompt-level bootstrap confidence interval for a metric difference
// ---------------------------------------------------------------------------

struct BootstrapResult {
    double delta = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> replicates;
};

/// Metric receives (predictions, labels) restricted to the resampled rows.
using MetricFn = std::function<double(const std::vector<int>&, const std::vector<int>&)>;

inline double quantile_nearest_rank(std::vector<double> sorted_values, double p) {
    if (sorted_values.empty()) throw ValidationError("quantile of empty sample");
    double rank = std::ceil(p * static_cast<double>(sorted_values.size()));
    auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
    idx = std::min(idx, sorted_values.size() - 1);
    return sorted_values[idx];
}

inline BootstrapResult bootstrap_delta_ci(const MetricFn& metric, const std::vector<int>& preds_a,
                                          const std::vector<int>& preds_b, const std::vector<int>& y_true,
                                          const std::vector<std::string>& prompt_ids, std::size_t B,
                                          double level, std::uint64_t seed, int threads = 1) {
    if (preds_a.size() != y_true.size() || preds_b.size() != y_true.size() || prompt_ids.size() != y_true.size())
        throw ValidationError("bootstrap inputs differ in length");
    std::map<std::string, std::vector<std::size_t>> by_prompt;
    for (std::size_t i = 0; i < prompt_ids.size(); ++i) by_prompt[prompt_ids[i]].push_back(i);
    std::vector<const std::vector<std::size_t>*> groups;
    for (const auto& [pid, idx] : by_prompt) groups.push_back(&idx);

    BootstrapResult res;
    res.delta = metric(preds_a, y_true) - metric(preds_b, y_true);
    res.replicates.assign(B, 0.0);
    parallel_for(std::size_t{0}, B, threads, [&](std::size_t b) {
        Rng rng(derive_seed(seed, b));
        std::vector<int> pa, pb, y;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const auto& idx = *groups[rng.bounded(groups.size())];
            for (std::size_t i : idx) {
                pa.push_back(preds_a[i]);
                pb.push_back(preds_b[i]);
                y.push_back(y_true[i]);
            }
        }
        res.replicates[b] = metric(pa, y) - metric(pb, y);
    });
    auto sorted = res.replicates;
    std::sort(sorted.begin(), sorted.end());
    res.lo = quantile_nearest_rank(sorted, (1.0 - level) / 2.0);
    res.hi = quantile_nearest_rank(sorted, (1.0 + level) / 2.0);
    return res;
}

// ---------------------------------------------------------------------------
// Chi-squared tail & Kruskal-Wallis
// ---------------------------------------------------------------------------

namespace detail {

/// Regularized lower incomplete gamma P(a, x) by series expansion.
inline double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 1000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction.
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 1000; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Upper tail of the regularized incomplete gamma: Q(a, x).
inline double regularized_gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw ValidationError("regularized_gamma_q domain error");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_cf(a, x);
}

/// P(Chi2_df >= x).
inline double chi_squared_upper_tail(double x, double df) {
    if (x <= 0.0) return 1.0;
    return regularized_gamma_q(df / 2.0, x / 2.0);
}

struct KruskalWallisResult {
    double H = 0.0;
    double p = 1.0;
};

/// Rank-based H with midrank ties and tie correction; p from the chi-squared
/// upper tail at (#groups - 1) degrees of freedom.
inline KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw ValidationError("kruskal_wallis needs at least two groups");
    for (const auto& g : groups)
        if (g.empty()) throw ValidationError("kruskal_wallis groups must be non-empty");
    std::vector<std::pair<double, std::size_t>> pooled;  // (value, group)
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (double v : groups[g]) pooled.push_back({v, g});
    const double N = static_cast<double>(pooled.size());
    std::sort(pooled.begin(), pooled.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<double> rank_sum(groups.size(), 0.0);
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < pooled.size()) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
        double t = static_cast<double>(j - i);
        double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].second] += midrank;
        tie_term += t * t * t - t;
        i = j;
    }
    double h = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g)
        h += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
    h = 12.0 / (N * (N + 1.0)) * h - 3.0 * (N + 1.0);
    double correction = 1.0 - tie_term / (N * N * N - N);
    if (correction <= 0.0) return {0.0, 1.0};  // every pooled value identical
    h /= correction;
    double df = static_cast<double>(groups.size()) - 1.0;
    return {h, chi_squared_upper_tail(h, df)};
}

}  // namespace storyscope::metrics
