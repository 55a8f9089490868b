#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "storyscope/boosting.hpp"
#include "storyscope/encoding.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/io.hpp"
#include "storyscope/matrix.hpp"
#include "storyscope/metrics.hpp"
#include "storyscope/parallel.hpp"
#include "storyscope/rng.hpp"
#include "storyscope/taxonomy.hpp"
#include "storyscope/treeshap.hpp"

namespace storyscope::attribution {

/// Bootstrap stability of one feature's importance.
struct FeatureStability {
    std::string feature_id;
    double boot_mean = 0.0;
    double boot_std = 0.0;   // sample std over bootstrap iterations
    double stab = 0.0;       // max(0, 1 - boot_std/boot_mean); 0 when boot_mean is 0
    double top25 = 0.0;      // fraction of iterations ranked in the top quartile
    std::size_t B = 0;       // successful iterations
};

namespace detail {

inline std::size_t top_quartile_count(std::size_t d) {
    return (d + 3) / 4;  // ceil(d/4)
}

/// Indices in the top importance quartile, requiring a strictly positive importance.
/// Ties at the cut resolve to the lower feature index.
inline std::vector<std::size_t> top_quartile_members(std::span<const double> imp) {
    std::vector<std::size_t> order(imp.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
    std::vector<std::size_t> out;
    const std::size_t k = top_quartile_count(imp.size());
    for (std::size_t pos = 0; pos < order.size() && pos < k; ++pos)
        if (imp[order[pos]] > 0.0) out.push_back(order[pos]);
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::infinity();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// stab/top25 summary of a [iterations x features] importance matrix.
inline std::vector<FeatureStability> compute_stability(const Matrix& boot_importances,
                                                       const std::vector<std::string>& feature_ids) {
    if (boot_importances.cols != feature_ids.size())
        throw ValidationError("bootstrap importance width does not match feature count");
    if (boot_importances.rows < 2) throw ConfigError("stability needs at least 2 bootstrap iterations");
    const std::size_t B = boot_importances.rows;
    const std::size_t d = boot_importances.cols;

    std::vector<std::size_t> top_hits(d, 0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t fi : detail::top_quartile_members(boot_importances.row(b))) ++top_hits[fi];

    std::vector<FeatureStability> out(d);
    for (std::size_t fi = 0; fi < d; ++fi) {
        double mean = 0.0;
        for (std::size_t b = 0; b < B; ++b) mean += boot_importances.at(b, fi);
        mean /= static_cast<double>(B);
        double ss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double dlt = boot_importances.at(b, fi) - mean;
            ss += dlt * dlt;
        }
        const double sd = std::sqrt(ss / static_cast<double>(B - 1));
        auto& s = out[fi];
        s.feature_id = feature_ids[fi];
        s.boot_mean = mean;
        s.boot_std = sd;
        s.stab = mean > 0.0 ? std::max(0.0, 1.0 - sd / mean) : 0.0;
        s.top25 = static_cast<double>(top_hits[fi]) / static_cast<double>(B);
        s.B = B;
    }
    return out;
}

/// Output of the bootstrap + null-permutation stability analysis.
struct BootstrapRolesResult {
    std::vector<FeatureStability> stability;  // ordered as column_map features
    std::vector<double> observed;             // full-data importance per feature
    std::vector<double> null_p;               // add-one permutation p-value per feature
    double null_threshold95 = std::numeric_limits<double>::infinity();
    Matrix boot_importances;                  // successful iterations only
    Matrix null_importances;                  // successful permutations only
    std::vector<std::string> errors;          // failed iteration/permutation messages
};

/// Prompt-level bootstrap (B retrains) plus prompt-level label-permutation null (n_perm retrains).
/// Importance is evaluated on each iteration's full resample unless use_oob is set, in which
/// case rows of unsampled prompts are used (falling back to the resample when none exist).
/// With n_perm = 0 every null_p is 1 and the null threshold is +infinity.
inline BootstrapRolesResult bootstrap_roles(const Matrix& X, const std::vector<int>& y,
                                            const std::vector<std::string>& prompts,
                                            const encoding::ColumnMap& map,
                                            const boosting::TrainConfig& config, std::size_t B,
                                            std::size_t n_perm, std::uint64_t seed, int threads = 1,
                                            bool use_oob = false) {
    if (B < 2) throw ConfigError("bootstrap_roles needs B >= 2");
    if (y.size() != X.rows || prompts.size() != X.rows)
        throw ValidationError("labels/prompts do not match matrix rows");
    if (map.width() != X.cols) throw ValidationError("column map width does not match matrix");

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < X.rows; ++r) groups[prompts[r]].push_back(r);
    std::vector<const std::vector<std::size_t>*> prompt_rows;
    for (const auto& [id, rows] : groups) prompt_rows.push_back(&rows);
    const std::size_t n_prompts = prompt_rows.size();

    const std::size_t d = map.n_features();
    const auto importance_of = [&](const boosting::TreeEnsemble& ens, const Matrix& eval) {
        const ShapMatrix shap = tree_shap(ens, eval, 1);
        const auto agg = aggregate_shap(shap, map);
        std::vector<double> imp(d);
        for (std::size_t fi = 0; fi < d; ++fi) imp[fi] = scalar_importance(agg[fi]);
        return imp;
    };

    BootstrapRolesResult res;
    {
        const auto full = boosting::train(X, y, config, threads);
        res.observed = importance_of(full, X);
    }

    std::vector<std::vector<double>> boot(B);
    std::vector<std::string> boot_err(B);
    parallel_for(0, B, static_cast<unsigned>(threads), [&](std::size_t b) {
        try {
            Rng rng(derive_seed(seed, b));
            const auto picks = rng.sample_with_replacement(n_prompts, n_prompts);
            std::vector<std::size_t> rows;
            std::vector<std::uint8_t> in_bag(n_prompts, 0);
            for (std::size_t p : picks) {
                in_bag[p] = 1;
                rows.insert(rows.end(), prompt_rows[p]->begin(), prompt_rows[p]->end());
            }
            Matrix Xb = X.gather_rows(rows);
            std::vector<int> yb(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) yb[i] = y[rows[i]];
            const auto ens = boosting::train(Xb, yb, config, 1);

            if (use_oob) {
                std::vector<std::size_t> oob;
                for (std::size_t p = 0; p < n_prompts; ++p)
                    if (!in_bag[p]) oob.insert(oob.end(), prompt_rows[p]->begin(), prompt_rows[p]->end());
                if (!oob.empty()) {
                    boot[b] = importance_of(ens, X.gather_rows(oob));
                    return;
                }
            }
            boot[b] = importance_of(ens, Xb);
        } catch (const Error& e) {
            boot_err[b] = "bootstrap iteration " + std::to_string(b) + ": " + e.what();
        }
    });

    std::vector<std::vector<double>> null_rows(n_perm);
    std::vector<std::string> null_err(n_perm);
    parallel_for(0, n_perm, static_cast<unsigned>(threads), [&](std::size_t p) {
        try {
            Rng rng(derive_seed(seed, B + p));
            std::vector<int> yp = y;
            for (const auto* rows : prompt_rows) {
                std::vector<int> labels(rows->size());
                for (std::size_t i = 0; i < rows->size(); ++i) labels[i] = yp[(*rows)[i]];
                rng.shuffle(labels);
                for (std::size_t i = 0; i < rows->size(); ++i) yp[(*rows)[i]] = labels[i];
            }
            const auto ens = boosting::train(X, yp, config, 1);
            null_rows[p] = importance_of(ens, X);
        } catch (const Error& e) {
            null_err[p] = "null permutation " + std::to_string(p) + ": " + e.what();
        }
    });

    std::vector<const std::vector<double>*> ok_boot;
    for (std::size_t b = 0; b < B; ++b) {
        if (boot_err[b].empty()) ok_boot.push_back(&boot[b]);
        else res.errors.push_back(boot_err[b]);
    }
    if (ok_boot.size() < 2) throw TrainError("fewer than 2 bootstrap iterations succeeded");
    res.boot_importances = Matrix(ok_boot.size(), d);
    for (std::size_t b = 0; b < ok_boot.size(); ++b)
        for (std::size_t fi = 0; fi < d; ++fi) res.boot_importances.at(b, fi) = (*ok_boot[b])[fi];

    std::vector<const std::vector<double>*> ok_null;
    for (std::size_t p = 0; p < n_perm; ++p) {
        if (null_err[p].empty()) ok_null.push_back(&null_rows[p]);
        else res.errors.push_back(null_err[p]);
    }
    res.null_importances = Matrix(ok_null.size(), d);
    for (std::size_t p = 0; p < ok_null.size(); ++p)
        for (std::size_t fi = 0; fi < d; ++fi) res.null_importances.at(p, fi) = (*ok_null[p])[fi];

    std::vector<std::string> ids(d);
    for (std::size_t fi = 0; fi < d; ++fi) ids[fi] = map.features[fi].feature_id;
    res.stability = compute_stability(res.boot_importances, ids);

    res.null_p.assign(d, 1.0);
    if (!ok_null.empty()) {
        for (std::size_t fi = 0; fi < d; ++fi) {
            std::size_t exceed = 0;
            for (std::size_t p = 0; p < ok_null.size(); ++p)
                if (res.null_importances.at(p, fi) >= res.observed[fi]) ++exceed;
            res.null_p[fi] =
                static_cast<double>(1 + exceed) / static_cast<double>(ok_null.size() + 1);
        }
        std::vector<double> pooled(res.null_importances.data);
        std::sort(pooled.begin(), pooled.end());
        res.null_threshold95 = metrics::quantile_nearest_rank(pooled, 0.95);
    }
    return res;
}

/// How encoded columns are placed on a common scale before gap/spread thresholds apply.
enum class GapNormalization { minmax, prevalence_only };

inline const char* to_string(GapNormalization g) {
    return g == GapNormalization::minmax ? "minmax" : "prevalence_only";
}

inline GapNormalization parse_gap_normalization(const std::string& s) {
    if (s == "minmax") return GapNormalization::minmax;
    if (s == "prevalence_only") return GapNormalization::prevalence_only;
    throw ConfigError("unknown gap normalization: " + s);
}

/// Human-vs-AI separation of one feature on its most separating encoded column.
struct FeatureGapStats {
    std::string feature_id;
    std::size_t column = 0;       // qualifying encoded column (largest |gap|)
    double human_mean = 0.0;      // normalized means on that column
    double ai_mean = 0.0;
    double gap = 0.0;             // human_mean - ai_mean, normalized scale
    double ai_spread = 0.0;       // max-min over per-AI-source normalized means
    double human_mean_raw = 0.0;
    double ai_mean_raw = 0.0;
    double gap_raw = 0.0;
    std::map<std::string, double> per_source_means;  // raw means on the qualifying column
};

/// Per-feature human/AI gap statistics over the pooled matrix.
/// minmax rescales each column to [0,1] over all rows; prevalence_only keeps raw values
/// (one-hot column means are already prevalences).
inline std::vector<FeatureGapStats> per_source_gaps(const Matrix& X,
                                                    const std::vector<std::string>& row_sources,
                                                    const encoding::ColumnMap& map,
                                                    GapNormalization mode = GapNormalization::minmax,
                                                    const std::string& human_source = "human") {
    if (row_sources.size() != X.rows) throw ValidationError("row sources do not match matrix rows");
    if (map.width() != X.cols) throw ValidationError("column map width does not match matrix");
    if (X.rows == 0) throw ValidationError("gap statistics need at least one row");

    std::vector<std::string> ai_sources;
    {
        std::set<std::string> seen;
        bool any_human = false;
        for (const auto& s : row_sources) {
            if (s == human_source) any_human = true;
            else if (seen.insert(s).second) ai_sources.push_back(s);
        }
        if (!any_human) throw ValidationError("no rows from source '" + human_source + "'");
        if (ai_sources.empty()) throw ValidationError("no AI-source rows for gap statistics");
        std::sort(ai_sources.begin(), ai_sources.end());
    }

    // Per-column raw means by source plus pooled min/max for normalization.
    const std::size_t D = X.cols;
    std::vector<double> col_min(D, std::numeric_limits<double>::infinity());
    std::vector<double> col_max(D, -std::numeric_limits<double>::infinity());
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, std::size_t> counts;
    for (std::size_t r = 0; r < X.rows; ++r) {
        auto& s = sums[row_sources[r]];
        if (s.empty()) s.assign(D, 0.0);
        ++counts[row_sources[r]];
        for (std::size_t c = 0; c < D; ++c) {
            const double v = X.at(r, c);
            s[c] += v;
            col_min[c] = std::min(col_min[c], v);
            col_max[c] = std::max(col_max[c], v);
        }
    }
    std::vector<double> ai_sum(D, 0.0);
    std::size_t ai_count = 0;
    for (const auto& s : ai_sources) {
        for (std::size_t c = 0; c < D; ++c) ai_sum[c] += sums[s][c];
        ai_count += counts[s];
    }
    const auto norm = [&](double v, std::size_t c) {
        if (mode == GapNormalization::prevalence_only) return v;
        const double span = col_max[c] - col_min[c];
        return span > 0.0 ? (v - col_min[c]) / span : 0.0;
    };

    std::vector<FeatureGapStats> out;
    out.reserve(map.n_features());
    for (const auto& f : map.features) {
        FeatureGapStats g;
        g.feature_id = f.feature_id;
        double best = -1.0;
        for (std::size_t c = f.begin; c < f.begin + f.width; ++c) {
            const double hm = sums[human_source][c] / static_cast<double>(counts[human_source]);
            const double am = ai_sum[c] / static_cast<double>(ai_count);
            const double gap = norm(hm, c) - norm(am, c);
            if (std::abs(gap) > best) {
                best = std::abs(gap);
                g.column = c;
                g.human_mean = norm(hm, c);
                g.ai_mean = norm(am, c);
                g.gap = gap;
                g.human_mean_raw = hm;
                g.ai_mean_raw = am;
                g.gap_raw = hm - am;
            }
        }
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        g.per_source_means.clear();
        g.per_source_means[human_source] = g.human_mean_raw;
        for (const auto& s : ai_sources) {
            const double m = sums[s][g.column] / static_cast<double>(counts[s]);
            g.per_source_means[s] = m;
            const double nm = norm(m, g.column);
            lo = std::min(lo, nm);
            hi = std::max(hi, nm);
        }
        g.ai_spread = hi - lo;
        out.push_back(std::move(g));
    }
    return out;
}

/// App-style role thresholds; defaults are the reported operating point.
struct RoleThresholds {
    double stab_min = 0.55;
    double top25_min = 0.60;
    double gap_min = 0.20;
    double ai_spread_max = 0.35;
    double p_max = 0.10;
};

enum class Quadrant { stable_important, unstable_important, stable_weak, noise };

inline const char* to_string(Quadrant q) {
    switch (q) {
        case Quadrant::stable_important: return "stable_important";
        case Quadrant::unstable_important: return "unstable_important";
        case Quadrant::stable_weak: return "stable_weak";
        case Quadrant::noise: return "noise";
    }
    return "?";
}

inline Quadrant parse_quadrant(const std::string& s) {
    if (s == "stable_important") return Quadrant::stable_important;
    if (s == "unstable_important") return Quadrant::unstable_important;
    if (s == "stable_weak") return Quadrant::stable_weak;
    if (s == "noise") return Quadrant::noise;
    throw ConfigError("unknown quadrant: " + s);
}

/// A feature whose multiclass importance is concentrated in one source class.
struct Fingerprint {
    std::string source;
    double uniqueness_ratio = 0.0;
    std::size_t column = 0;  // qualifying encoded column
    double source_mean = 0.0;
    double other_mean = 0.0;
    double other_std = 0.0;
};

struct FeatureRole {
    std::string feature_id;
    Quadrant quadrant = Quadrant::noise;
    double importance = 0.0;  // observed full-data importance
    double boot_mean = 0.0;
    double boot_std = 0.0;
    double stab = 0.0;
    double top25 = 0.0;
    double null_p = 1.0;
    bool core = false;
    std::string core_sign;  // "human_leaning", "ai_leaning", or empty
    double human_ai_gap = 0.0;  // normalized
    double ai_spread = 0.0;     // normalized
    double human_mean_raw = 0.0;
    double ai_mean_raw = 0.0;
    double gap_raw = 0.0;
    std::size_t gap_column = 0;
    std::map<std::string, double> per_source_means;
    std::optional<Fingerprint> fingerprint;
};

struct RoleReport {
    std::vector<FeatureRole> features;
    double null_threshold95 = std::numeric_limits<double>::infinity();
    double importance_cut = 0.0;    // lowest observed importance inside the important set
    double stability_median = 0.0;  // median stab over features with any bootstrap importance

    std::size_t count(Quadrant q) const {
        std::size_t n = 0;
        for (const auto& f : features)
            if (f.quadrant == q) ++n;
        return n;
    }
    std::size_t n_core() const {
        std::size_t n = 0;
        for (const auto& f : features)
            if (f.core) ++n;
        return n;
    }
    std::size_t n_fingerprints() const {
        std::size_t n = 0;
        for (const auto& f : features)
            if (f.fingerprint) ++n;
        return n;
    }

    Json to_json() const;
    static RoleReport from_json(const Json& j);
};

/// Quadrant + core assignment from bootstrap stability and gap statistics.
/// Important = top quartile by observed importance (positive importance required).
/// The stability reference is the median stab over every feature that showed any
/// bootstrap importance at all; features that never did are noise outright.
/// Stable-important needs stab at or above that median, observed importance above
/// the pooled null 95th percentile, and null_p <= p_max. Non-important features at
/// or above the median are stable_weak.
/// Core = stable_important plus the stab/top25/gap/spread/p thresholds; sign follows the gap.
inline RoleReport assign_roles(const BootstrapRolesResult& boot,
                               const std::vector<FeatureGapStats>& gaps,
                               const RoleThresholds& th = RoleThresholds{}) {
    const std::size_t d = boot.stability.size();
    if (boot.observed.size() != d || boot.null_p.size() != d)
        throw ValidationError("bootstrap result fields disagree on feature count");
    if (gaps.size() != d) throw ValidationError("gap statistics do not match feature count");
    for (std::size_t fi = 0; fi < d; ++fi)
        if (gaps[fi].feature_id != boot.stability[fi].feature_id)
            throw ValidationError("gap statistics are ordered differently from stability results");

    const auto important = detail::top_quartile_members(boot.observed);
    std::vector<std::uint8_t> is_important(d, 0);
    double cut = std::numeric_limits<double>::infinity();
    for (std::size_t fi : important) {
        is_important[fi] = 1;
        cut = std::min(cut, boot.observed[fi]);
    }
    std::vector<double> stab_pop;
    for (std::size_t fi = 0; fi < d; ++fi)
        if (boot.stability[fi].boot_mean > 0.0) stab_pop.push_back(boot.stability[fi].stab);
    const double stab_median = detail::median(stab_pop);

    RoleReport report;
    report.null_threshold95 = boot.null_threshold95;
    report.importance_cut = important.empty() ? 0.0 : cut;
    report.stability_median = std::isfinite(stab_median) ? stab_median : 0.0;
    report.features.resize(d);
    for (std::size_t fi = 0; fi < d; ++fi) {
        auto& f = report.features[fi];
        const auto& s = boot.stability[fi];
        const auto& g = gaps[fi];
        f.feature_id = s.feature_id;
        f.importance = boot.observed[fi];
        f.boot_mean = s.boot_mean;
        f.boot_std = s.boot_std;
        f.stab = s.stab;
        f.top25 = s.top25;
        f.null_p = boot.null_p[fi];
        f.human_ai_gap = g.gap;
        f.ai_spread = g.ai_spread;
        f.human_mean_raw = g.human_mean_raw;
        f.ai_mean_raw = g.ai_mean_raw;
        f.gap_raw = g.gap_raw;
        f.gap_column = g.column;
        f.per_source_means = g.per_source_means;

        if (is_important[fi]) {
            const bool beats_null = f.importance > boot.null_threshold95 && f.null_p <= th.p_max;
            f.quadrant = (f.stab >= stab_median && beats_null) ? Quadrant::stable_important
                                                               : Quadrant::unstable_important;
        } else if (s.boot_mean > 0.0) {
            f.quadrant = f.stab >= stab_median ? Quadrant::stable_weak : Quadrant::noise;
        } else {
            f.quadrant = Quadrant::noise;  // never showed any importance
        }
        f.core = f.quadrant == Quadrant::stable_important && f.stab >= th.stab_min &&
                 f.top25 >= th.top25_min && std::abs(f.human_ai_gap) >= th.gap_min &&
                 f.ai_spread <= th.ai_spread_max && f.null_p <= th.p_max;
        if (f.core) f.core_sign = f.human_ai_gap > 0.0 ? "human_leaning" : "ai_leaning";
    }
    return report;
}

struct FingerprintThresholds {
    double uniqueness_min = 2.0;
    double effect_min = 0.5;
};

/// Fingerprint detection on a multiclass model: a feature marks source s when importance is
/// concentrated in class s (>= uniqueness_min x next best) and s's values on the feature's most
/// separating column differ from the pooled others by >= effect_min pooled-other stds.
inline std::vector<std::optional<Fingerprint>> assign_fingerprints(
    const std::vector<FeatureImportance>& per_class_importances,
    const std::vector<std::string>& class_names, const Matrix& X,
    const std::vector<std::string>& row_sources, const encoding::ColumnMap& map,
    const FingerprintThresholds& th = FingerprintThresholds{}) {
    if (per_class_importances.size() != map.n_features())
        throw ValidationError("per-class importances do not match feature count");
    if (row_sources.size() != X.rows) throw ValidationError("row sources do not match matrix rows");
    if (map.width() != X.cols) throw ValidationError("column map width does not match matrix");
    const std::size_t C = class_names.size();
    for (const auto& f : per_class_importances)
        if (f.per_class.size() != C)
            throw ValidationError("importance for '" + f.feature_id + "' does not cover all classes");

    std::vector<std::size_t> class_of_row(X.rows, C);
    for (std::size_t r = 0; r < X.rows; ++r)
        for (std::size_t k = 0; k < C; ++k)
            if (row_sources[r] == class_names[k]) {
                class_of_row[r] = k;
                break;
            }

    std::vector<std::optional<Fingerprint>> out(map.n_features());
    for (std::size_t fi = 0; fi < map.n_features(); ++fi) {
        const auto& imp = per_class_importances[fi].per_class;
        std::size_t best = 0;
        for (std::size_t k = 1; k < C; ++k)
            if (imp[k] > imp[best]) best = k;
        double next = 0.0;
        bool has_next = false;
        for (std::size_t k = 0; k < C; ++k)
            if (k != best && (!has_next || imp[k] > next)) {
                next = imp[k];
                has_next = true;
            }
        if (!(imp[best] > 0.0) || !has_next) continue;
        if (next > 0.0 && imp[best] < th.uniqueness_min * next) continue;

        // Most separating column for the winning class, in pooled-other std units.
        const auto& slice = map.features[fi];
        double best_score = -1.0;
        Fingerprint fp;
        for (std::size_t c = slice.begin; c < slice.begin + slice.width; ++c) {
            double s_sum = 0.0, o_sum = 0.0, o_sq = 0.0;
            std::size_t s_n = 0, o_n = 0;
            for (std::size_t r = 0; r < X.rows; ++r) {
                const double v = X.at(r, c);
                if (class_of_row[r] == best) {
                    s_sum += v;
                    ++s_n;
                } else {
                    o_sum += v;
                    o_sq += v * v;
                    ++o_n;
                }
            }
            if (s_n == 0 || o_n == 0) continue;
            const double s_mean = s_sum / static_cast<double>(s_n);
            const double o_mean = o_sum / static_cast<double>(o_n);
            const double o_var = std::max(0.0, o_sq / static_cast<double>(o_n) - o_mean * o_mean);
            const double o_std = std::sqrt(o_var);
            const double diff = std::abs(s_mean - o_mean);
            const double score = o_std > 0.0 ? diff / o_std
                                             : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
            if (score > best_score) {
                best_score = score;
                fp.column = c;
                fp.source_mean = s_mean;
                fp.other_mean = o_mean;
                fp.other_std = o_std;
            }
        }
        if (best_score < 0.0) continue;
        const double diff = std::abs(fp.source_mean - fp.other_mean);
        if (!(diff > 0.0) || diff < th.effect_min * fp.other_std) continue;
        fp.source = class_names[best];
        fp.uniqueness_ratio =
            next > 0.0 ? imp[best] / next : std::numeric_limits<double>::infinity();
        out[fi] = std::move(fp);
    }
    return out;
}

/// Attach fingerprint entries (aligned by feature order) to a role report.
inline void attach_fingerprints(RoleReport& report,
                                const std::vector<std::optional<Fingerprint>>& fingerprints) {
    if (fingerprints.size() != report.features.size())
        throw ValidationError("fingerprint list does not match report feature count");
    for (std::size_t fi = 0; fi < fingerprints.size(); ++fi)
        report.features[fi].fingerprint = fingerprints[fi];
}

/// Core/fingerprint id sets in the shape variant selection expects.
inline taxonomy::RoleSets role_sets(const RoleReport& report) {
    taxonomy::RoleSets rs;
    for (const auto& f : report.features) {
        if (f.core) rs.core_ids.insert(f.feature_id);
        if (f.fingerprint) rs.fingerprint_ids.insert(f.feature_id);
    }
    return rs;
}

namespace detail {

inline double json_safe(double v) {
    if (std::isfinite(v)) return v;
    return v > 0.0 ? 1e300 : -1e300;
}

}  // namespace detail

inline Json RoleReport::to_json() const {
    Json feats = Json::array();
    for (const auto& f : features) {
        Json jf{{"feature_id", f.feature_id},
                {"quadrant", to_string(f.quadrant)},
                {"importance", f.importance},
                {"boot_mean", f.boot_mean},
                {"boot_std", f.boot_std},
                {"stab", f.stab},
                {"top25", f.top25},
                {"null_p", f.null_p},
                {"core", f.core},
                {"core_sign", f.core_sign},
                {"human_ai_gap", f.human_ai_gap},
                {"ai_spread", f.ai_spread},
                {"human_mean_raw", f.human_mean_raw},
                {"ai_mean_raw", f.ai_mean_raw},
                {"gap_raw", f.gap_raw},
                {"gap_column", f.gap_column},
                {"per_source_means", f.per_source_means}};
        if (f.fingerprint) {
            const auto& fp = *f.fingerprint;
            jf["fingerprint"] = Json{{"source", fp.source},
                                     {"uniqueness_ratio", detail::json_safe(fp.uniqueness_ratio)},
                                     {"column", fp.column},
                                     {"source_mean", fp.source_mean},
                                     {"other_mean", fp.other_mean},
                                     {"other_std", fp.other_std}};
        } else {
            jf["fingerprint"] = nullptr;
        }
        feats.push_back(std::move(jf));
    }
    return Json{{"features", feats},
                {"null_threshold95", detail::json_safe(null_threshold95)},
                {"importance_cut", importance_cut},
                {"stability_median", stability_median}};
}

inline RoleReport RoleReport::from_json(const Json& j) {
    RoleReport r;
    r.null_threshold95 = j.at("null_threshold95").get<double>();
    r.importance_cut = j.at("importance_cut").get<double>();
    r.stability_median = j.at("stability_median").get<double>();
    for (const auto& jf : j.at("features")) {
        FeatureRole f;
        f.feature_id = jf.at("feature_id").get<std::string>();
        f.quadrant = parse_quadrant(jf.at("quadrant").get<std::string>());
        f.importance = jf.at("importance").get<double>();
        f.boot_mean = jf.at("boot_mean").get<double>();
        f.boot_std = jf.at("boot_std").get<double>();
        f.stab = jf.at("stab").get<double>();
        f.top25 = jf.at("top25").get<double>();
        f.null_p = jf.at("null_p").get<double>();
        f.core = jf.at("core").get<bool>();
        f.core_sign = jf.at("core_sign").get<std::string>();
        f.human_ai_gap = jf.at("human_ai_gap").get<double>();
        f.ai_spread = jf.at("ai_spread").get<double>();
        f.human_mean_raw = jf.at("human_mean_raw").get<double>();
        f.ai_mean_raw = jf.at("ai_mean_raw").get<double>();
        f.gap_raw = jf.at("gap_raw").get<double>();
        f.gap_column = jf.at("gap_column").get<std::size_t>();
        f.per_source_means = jf.at("per_source_means").get<std::map<std::string, double>>();
        if (!jf.at("fingerprint").is_null()) {
            const auto& jp = jf.at("fingerprint");
            Fingerprint fp;
            fp.source = jp.at("source").get<std::string>();
            fp.uniqueness_ratio = jp.at("uniqueness_ratio").get<double>();
            fp.column = jp.at("column").get<std::size_t>();
            fp.source_mean = jp.at("source_mean").get<double>();
            fp.other_mean = jp.at("other_mean").get<double>();
            fp.other_std = jp.at("other_std").get<double>();
            f.fingerprint = std::move(fp);
        }
        r.features.push_back(std::move(f));
    }
    return r;
}

/// Core-feature table (feature, human value, AI value, gap), strongest raw gaps first.
inline std::string core_table_csv(const RoleReport& report) {
    std::vector<const FeatureRole*> core;
    for (const auto& f : report.features)
        if (f.core) core.push_back(&f);
    std::sort(core.begin(), core.end(), [](const FeatureRole* a, const FeatureRole* b) {
        if (std::abs(a->gap_raw) != std::abs(b->gap_raw)) return std::abs(a->gap_raw) > std::abs(b->gap_raw);
        return a->feature_id < b->feature_id;
    });
    std::string out = "feature,human_value,ai_value,gap\n";
    char buf[128];
    for (const auto* f : core) {
        std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f\n", f->human_mean_raw, f->ai_mean_raw, f->gap_raw);
        out += f->feature_id;
        out += buf;
    }
    return out;
}

}  // namespace storyscope::attribution
