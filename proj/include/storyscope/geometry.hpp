#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "storyscope/errors.hpp"
#include "storyscope/io.hpp"
#include "storyscope/matrix.hpp"
#include "storyscope/parallel.hpp"

namespace storyscope::geometry {

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Mean of the k smallest values: select, then sum in ascending order so the
/// result is bit-identical to a fully sorted oracle.
inline double mean_of_k_smallest(std::vector<double>& dists, std::size_t k) {
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k - 1), dists.end());
    std::sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k));
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += dists[i];
    return s / static_cast<double>(k);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Centroids
// ---------------------------------------------------------------------------

struct CentroidReport {
    std::vector<std::string> sources;       // sorted
    Matrix centroids;                       // [source][dim]
    Matrix distance;                        // pairwise centroid distances
    std::vector<double> dispersion;         // mean distance of a source's rows to its centroid
    std::vector<double> knn_radius_median;  // per-source median k-NN radius over the pooled rows
    std::size_t knn_k = 10;

    std::size_t index(const std::string& source) const {
        const auto it = std::find(sources.begin(), sources.end(), source);
        if (it == sources.end()) throw ValidationError("unknown source in centroid report: " + source);
        return static_cast<std::size_t>(it - sources.begin());
    }

    /// Mean centroid distance from the human source to every other source.
    double mean_human_ai_distance(const std::string& human = "human") const {
        const std::size_t h = index(human);
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t j = 0; j < sources.size(); ++j)
            if (j != h) {
                s += distance.at(h, j);
                ++n;
            }
        if (n == 0) throw ValidationError("no AI sources in centroid report");
        return s / static_cast<double>(n);
    }

    /// Mean centroid distance over unordered pairs of non-human sources.
    double mean_ai_ai_distance(const std::string& human = "human") const {
        const std::size_t h = index(human);
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < sources.size(); ++i)
            for (std::size_t j = i + 1; j < sources.size(); ++j)
                if (i != h && j != h) {
                    s += distance.at(i, j);
                    ++n;
                }
        if (n == 0) throw ValidationError("fewer than two AI sources in centroid report");
        return s / static_cast<double>(n);
    }

    Json to_json() const {
        Json dist = Json::array();
        for (std::size_t i = 0; i < sources.size(); ++i) {
            Json row = Json::array();
            for (std::size_t j = 0; j < sources.size(); ++j) row.push_back(distance.at(i, j));
            dist.push_back(std::move(row));
        }
        return Json{{"sources", sources},
                    {"distance", dist},
                    {"dispersion", dispersion},
                    {"knn_radius_median", knn_radius_median},
                    {"knn_k", knn_k}};
    }
};

/// Per-source centroids in the given (typically z-scored) space, their pairwise
/// distances, within-source dispersion, and the per-source median k-NN radius
/// over the pooled rows (k shrinks to n-1 when rows are scarce).
inline CentroidReport centroid_stats(const Matrix& Z, const std::vector<std::string>& labels,
                                     std::size_t knn_k = 10, int threads = 1) {
    if (labels.size() != Z.rows) throw ValidationError("labels do not match matrix rows");
    if (Z.rows < 2) throw ValidationError("centroid statistics need at least two rows");

    CentroidReport rep;
    rep.knn_k = knn_k;
    {
        std::set<std::string> uniq(labels.begin(), labels.end());
        rep.sources.assign(uniq.begin(), uniq.end());
    }
    const std::size_t S = rep.sources.size();
    std::map<std::string, std::size_t> source_index;
    for (std::size_t s = 0; s < S; ++s) source_index[rep.sources[s]] = s;

    rep.centroids = Matrix(S, Z.cols);
    std::vector<std::size_t> counts(S, 0);
    for (std::size_t r = 0; r < Z.rows; ++r) {
        const std::size_t s = source_index[labels[r]];
        ++counts[s];
        for (std::size_t c = 0; c < Z.cols; ++c) rep.centroids.at(s, c) += Z.at(r, c);
    }
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < Z.cols; ++c)
            rep.centroids.at(s, c) /= static_cast<double>(counts[s]);

    rep.distance = Matrix(S, S);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = i + 1; j < S; ++j) {
            const double d = euclidean(rep.centroids.row(i), rep.centroids.row(j));
            rep.distance.at(i, j) = d;
            rep.distance.at(j, i) = d;
        }

    rep.dispersion.assign(S, 0.0);
    for (std::size_t r = 0; r < Z.rows; ++r) {
        const std::size_t s = source_index[labels[r]];
        rep.dispersion[s] += euclidean(Z.row(r), rep.centroids.row(s));
    }
    for (std::size_t s = 0; s < S; ++s) rep.dispersion[s] /= static_cast<double>(counts[s]);

    const std::size_t k_eff = std::min(knn_k, Z.rows - 1);
    std::vector<double> radius(Z.rows, 0.0);
    parallel_for(0, Z.rows, static_cast<unsigned>(threads), [&](std::size_t r) {
        std::vector<double> dists;
        dists.reserve(Z.rows - 1);
        for (std::size_t o = 0; o < Z.rows; ++o)
            if (o != r) dists.push_back(euclidean(Z.row(r), Z.row(o)));
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k_eff - 1),
                         dists.end());
        radius[r] = dists[k_eff - 1];
    });
    rep.knn_radius_median.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> own;
        for (std::size_t r = 0; r < Z.rows; ++r)
            if (source_index[labels[r]] == s) own.push_back(radius[r]);
        rep.knn_radius_median[s] = detail::median(std::move(own));
    }
    return rep;
}

/// Centroid distance matrix as CSV (sources as both header and row labels).
inline std::string centroid_csv(const CentroidReport& rep) {
    std::string out = "source";
    for (const auto& s : rep.sources) out += "," + s;
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < rep.sources.size(); ++i) {
        out += rep.sources[i];
        for (std::size_t j = 0; j < rep.sources.size(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.6f", rep.distance.at(i, j));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear discriminant projection
// ---------------------------------------------------------------------------

struct LdaProjection {
    Matrix axes;    // [2][dim], unit norm, first nonzero entry positive
    Matrix coords;  // [row][2]
    double ridge = 0.0;
};

/// Top-2 discriminant axes of (S_W + ridge I)^-1 S_B via Cholesky whitening.
/// ridge < 0 selects the default 1e-3 * trace(S_W)/D.
inline LdaProjection lda_project(const Matrix& Z, const std::vector<std::string>& labels,
                                 double ridge = -1.0) {
    if (labels.size() != Z.rows) throw ValidationError("labels do not match matrix rows");
    std::set<std::string> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw ValidationError("LDA needs at least two classes");
    const auto D = static_cast<Eigen::Index>(Z.cols);
    const auto n = static_cast<Eigen::Index>(Z.rows);
    if (D < 2) throw ValidationError("LDA needs at least two columns");

    Eigen::MatrixXd X(n, D);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < D; ++c) X(r, c) = Z.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));

    std::map<std::string, std::vector<Eigen::Index>> by_class;
    for (Eigen::Index r = 0; r < n; ++r) by_class[labels[static_cast<std::size_t>(r)]].push_back(r);

    const Eigen::VectorXd grand_mean = X.colwise().mean();
    Eigen::MatrixXd SW = Eigen::MatrixXd::Zero(D, D);
    Eigen::MatrixXd SB = Eigen::MatrixXd::Zero(D, D);
    for (const auto& [name, rows] : by_class) {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
        for (Eigen::Index r : rows) mu += X.row(r).transpose();
        mu /= static_cast<double>(rows.size());
        for (Eigen::Index r : rows) {
            const Eigen::VectorXd d = X.row(r).transpose() - mu;
            SW.noalias() += d * d.transpose();
        }
        const Eigen::VectorXd b = mu - grand_mean;
        SB.noalias() += static_cast<double>(rows.size()) * b * b.transpose();
    }

    if (ridge < 0.0) ridge = 1e-3 * SW.trace() / static_cast<double>(D);
    Eigen::MatrixXd A = SW + ridge * Eigen::MatrixXd::Identity(D, D);
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
        throw ValidationError("LDA solver failed: within-class scatter is not positive definite; "
                              "increase the ridge");

    // M = L^-1 S_B L^-T is symmetric; its eigenvectors whiten back to discriminant axes.
    const Eigen::MatrixXd L = llt.matrixL();
    const Eigen::MatrixXd B1 = L.triangularView<Eigen::Lower>().solve(SB);
    Eigen::MatrixXd M = L.triangularView<Eigen::Lower>().solve(B1.transpose()).transpose();
    M = 0.5 * (M + M.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw ValidationError("LDA eigen decomposition failed");

    LdaProjection proj;
    proj.ridge = ridge;
    proj.axes = Matrix(2, Z.cols);
    for (int a = 0; a < 2; ++a) {
        const Eigen::VectorXd v = es.eigenvectors().col(D - 1 - a);  // eigenvalues ascend
        Eigen::VectorXd w = L.transpose().triangularView<Eigen::Upper>().solve(v);
        w.normalize();
        for (Eigen::Index i = 0; i < D; ++i)
            if (std::abs(w(i)) > 1e-12) {
                if (w(i) < 0.0) w = -w;
                break;
            }
        for (std::size_t c = 0; c < Z.cols; ++c) proj.axes.at(static_cast<std::size_t>(a), c) = w(static_cast<Eigen::Index>(c));
    }

    proj.coords = Matrix(Z.rows, 2);
    for (std::size_t r = 0; r < Z.rows; ++r)
        for (std::size_t a = 0; a < 2; ++a) {
            double dot = 0.0;
            for (std::size_t c = 0; c < Z.cols; ++c) dot += Z.at(r, c) * proj.axes.at(a, c);
            proj.coords.at(r, a) = dot;
        }
    return proj;
}

/// 2-D projection coordinates as CSV for external plotting.
inline std::string coords_csv(const LdaProjection& proj, const std::vector<std::string>& ids,
                              const std::vector<std::string>& labels) {
    if (ids.size() != proj.coords.rows || labels.size() != proj.coords.rows)
        throw ValidationError("ids/labels do not match projection rows");
    std::string out = "story_id,source,x,y\n";
    char buf[96];
    for (std::size_t r = 0; r < proj.coords.rows; ++r) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", proj.coords.at(r, 0), proj.coords.at(r, 1));
        out += ids[r] + "," + labels[r] + buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rarity
// ---------------------------------------------------------------------------

struct RarityConfig {
    std::size_t k = 25;
};

struct RarityReport {
    std::size_t k = 25;
    std::vector<double> reference_rarity;  // self-excluded k-NN mean per reference row
    std::vector<double> query_rarity;      // k-NN mean against the full reference
    std::vector<double> query_percentile;  // fraction of reference rarities <= query rarity
};

/// Exact k-NN rarity: mean Euclidean distance to the k nearest reference rows.
/// Reference rows exclude themselves; query rows see the whole reference.
inline RarityReport rarity(const Matrix& reference, const Matrix& query, RarityConfig cfg = {},
                           int threads = 1) {
    if (cfg.k == 0) throw ConfigError("rarity needs k >= 1");
    if (reference.rows <= cfg.k)
        throw ConfigError("rarity needs more than k=" + std::to_string(cfg.k) + " reference rows, got " +
                          std::to_string(reference.rows));
    if (query.cols != reference.cols) throw ValidationError("query width does not match reference");

    RarityReport rep;
    rep.k = cfg.k;
    rep.reference_rarity.assign(reference.rows, 0.0);
    parallel_for(0, reference.rows, static_cast<unsigned>(threads), [&](std::size_t r) {
        std::vector<double> dists;
        dists.reserve(reference.rows - 1);
        for (std::size_t o = 0; o < reference.rows; ++o)
            if (o != r) dists.push_back(euclidean(reference.row(r), reference.row(o)));
        rep.reference_rarity[r] = detail::mean_of_k_smallest(dists, cfg.k);
    });

    std::vector<double> sorted_ref = rep.reference_rarity;
    std::sort(sorted_ref.begin(), sorted_ref.end());

    rep.query_rarity.assign(query.rows, 0.0);
    rep.query_percentile.assign(query.rows, 0.0);
    parallel_for(0, query.rows, static_cast<unsigned>(threads), [&](std::size_t r) {
        std::vector<double> dists(reference.rows);
        for (std::size_t o = 0; o < reference.rows; ++o)
            dists[o] = euclidean(query.row(r), reference.row(o));
        rep.query_rarity[r] = detail::mean_of_k_smallest(dists, cfg.k);
        const auto it = std::upper_bound(sorted_ref.begin(), sorted_ref.end(), rep.query_rarity[r]);
        rep.query_percentile[r] =
            static_cast<double>(it - sorted_ref.begin()) / static_cast<double>(sorted_ref.size());
    });
    return rep;
}

/// Per-story rarity table as CSV.
inline std::string rarity_csv(const RarityReport& rep, const std::vector<std::string>& ids,
                              const std::vector<std::string>& labels) {
    if (ids.size() != rep.query_rarity.size() || labels.size() != rep.query_rarity.size())
        throw ValidationError("ids/labels do not match rarity rows");
    std::string out = "story_id,source,rarity,percentile\n";
    char buf[96];
    for (std::size_t r = 0; r < rep.query_rarity.size(); ++r) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", rep.query_rarity[r], rep.query_percentile[r]);
        out += ids[r] + "," + labels[r] + buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rarity summary statistics
// ---------------------------------------------------------------------------

struct GroupStats {
    double mean = 0.0;
    double sd = 0.0;  // sample SD, n-1 denominator
    std::size_t n = 0;
};

inline GroupStats group_stats(std::span<const double> values) {
    GroupStats g;
    g.n = values.size();
    if (g.n == 0) throw ValidationError("group statistics of an empty set");
    for (double v : values) g.mean += v;
    g.mean /= static_cast<double>(g.n);
    if (g.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - g.mean) * (v - g.mean);
        g.sd = std::sqrt(ss / static_cast<double>(g.n - 1));
    }
    return g;
}

/// Sample-size-weighted pooled SD of two groups.
inline double pooled_sd(const GroupStats& a, const GroupStats& b) {
    if (a.n + b.n < 3) throw ValidationError("pooled SD needs at least 3 observations");
    const double num = static_cast<double>(a.n - 1) * a.sd * a.sd +
                       static_cast<double>(b.n - 1) * b.sd * b.sd;
    return std::sqrt(num / static_cast<double>(a.n + b.n - 2));
}

/// Cohen's d = (mean_a - mean_b) / pooled SD, guarded to 0 for a zero pooled SD.
inline double cohens_d(const GroupStats& a, const GroupStats& b) {
    const double sd = pooled_sd(a, b);
    return sd > 0.0 ? (a.mean - b.mean) / sd : 0.0;
}

/// Rank-sum AUC: probability a random value from `pos` exceeds one from `neg`, ties at 1/2.
inline double rank_auc(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty()) throw ValidationError("AUC needs both groups non-empty");
    struct Entry {
        double v;
        bool is_pos;
    };
    std::vector<Entry> all;
    all.reserve(pos.size() + neg.size());
    for (double v : pos) all.push_back({v, true});
    for (double v : neg) all.push_back({v, false});
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.v < b.v; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (all[t].is_pos) pos_rank_sum += midrank;
        i = j;
    }
    const auto np = static_cast<double>(pos.size());
    const auto nn = static_cast<double>(neg.size());
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct SourceRarity {
    std::string source;
    std::size_t n = 0;
    double mean_percentile = 0.0;
    double mean_rarity = 0.0;
    std::size_t tail_count = 0;  // stories in the top-q rarity tail
};

struct RaritySummary {
    std::string human_source;
    double tail_q = 0.10;
    std::size_t tail_size = 0;
    std::vector<SourceRarity> per_source;  // sorted by source name
    double human_mean_percentile = 0.0;
    double ai_mean_percentile = 0.0;
    double pooled_sd = 0.0;  // over percentiles, human vs pooled AI
    double cohens_d = 0.0;
    double auc = 0.0;  // on raw rarity, human vs AI
    double rarest_rate = 0.0;
    std::size_t n_complete_prompts = 0;

    Json to_json() const {
        Json src = Json::array();
        for (const auto& s : per_source)
            src.push_back(Json{{"source", s.source},
                               {"n", s.n},
                               {"mean_percentile", s.mean_percentile},
                               {"mean_rarity", s.mean_rarity},
                               {"tail_count", s.tail_count}});
        return Json{{"human_source", human_source},
                    {"tail_q", tail_q},
                    {"tail_size", tail_size},
                    {"per_source", src},
                    {"human_mean_percentile", human_mean_percentile},
                    {"ai_mean_percentile", ai_mean_percentile},
                    {"pooled_sd", pooled_sd},
                    {"cohens_d", cohens_d},
                    {"auc", auc},
                    {"rarest_rate", rarest_rate},
                    {"n_complete_prompts", n_complete_prompts}};
    }
};

/// Human-vs-AI rarity summary: per-source means, Cohen's d on percentiles,
/// rank-sum AUC on raw rarity, top-q tail composition, and the fraction of
/// complete prompts (all sources present) whose strictly rarest story is human.
inline RaritySummary rarity_summary(const RarityReport& rep, const std::vector<std::string>& labels,
                                    const std::vector<std::string>& prompts,
                                    const std::string& human_source = "human", double tail_q = 0.10) {
    const std::size_t n = rep.query_rarity.size();
    if (labels.size() != n || prompts.size() != n)
        throw ValidationError("labels/prompts do not match rarity rows");
    if (n == 0) throw ValidationError("rarity summary needs at least one story");
    if (!(tail_q > 0.0 && tail_q <= 1.0)) throw ConfigError("tail_q must be in (0, 1]");

    RaritySummary sum;
    sum.human_source = human_source;
    sum.tail_q = tail_q;

    std::set<std::string> uniq(labels.begin(), labels.end());
    if (uniq.count(human_source) == 0)
        throw ValidationError("no rows from source '" + human_source + "'");
    if (uniq.size() < 2) throw ValidationError("rarity summary needs at least one AI source");

    std::map<std::string, std::vector<std::size_t>> rows_by_source;
    for (std::size_t r = 0; r < n; ++r) rows_by_source[labels[r]].push_back(r);

    // top-q tail membership: highest rarities first, ties to the lower row index
    sum.tail_size = static_cast<std::size_t>(std::ceil(tail_q * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rep.query_rarity[a] > rep.query_rarity[b];
    });
    std::map<std::string, std::size_t> tail_counts;
    for (std::size_t i = 0; i < sum.tail_size; ++i) ++tail_counts[labels[order[i]]];

    std::vector<double> human_pct, ai_pct, human_rar, ai_rar;
    for (const auto& [source, rows] : rows_by_source) {
        SourceRarity s;
        s.source = source;
        s.n = rows.size();
        for (std::size_t r : rows) {
            s.mean_percentile += rep.query_percentile[r];
            s.mean_rarity += rep.query_rarity[r];
            if (source == human_source) {
                human_pct.push_back(rep.query_percentile[r]);
                human_rar.push_back(rep.query_rarity[r]);
            } else {
                ai_pct.push_back(rep.query_percentile[r]);
                ai_rar.push_back(rep.query_rarity[r]);
            }
        }
        s.mean_percentile /= static_cast<double>(s.n);
        s.mean_rarity /= static_cast<double>(s.n);
        s.tail_count = tail_counts.count(source) != 0 ? tail_counts[source] : 0;
        sum.per_source.push_back(std::move(s));
    }

    const GroupStats h = group_stats(human_pct);
    const GroupStats a = group_stats(ai_pct);
    sum.human_mean_percentile = h.mean;
    sum.ai_mean_percentile = a.mean;
    sum.pooled_sd = pooled_sd(h, a);
    sum.cohens_d = cohens_d(h, a);
    sum.auc = rank_auc(human_rar, ai_rar);

    // complete prompts: one where every source seen anywhere is present
    std::map<std::string, std::vector<std::size_t>> by_prompt;
    for (std::size_t r = 0; r < n; ++r) by_prompt[prompts[r]].push_back(r);
    std::size_t complete = 0, human_rarest = 0;
    for (const auto& [pid, rows] : by_prompt) {
        std::set<std::string> present;
        for (std::size_t r : rows) present.insert(labels[r]);
        if (present != uniq) continue;
        ++complete;
        std::size_t best = rows[0];
        bool unique_max = true;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rep.query_rarity[rows[i]] > rep.query_rarity[best]) {
                best = rows[i];
                unique_max = true;
            } else if (rep.query_rarity[rows[i]] == rep.query_rarity[best]) {
                unique_max = false;
            }
        }
        if (unique_max && labels[best] == human_source) ++human_rarest;
    }
    sum.n_complete_prompts = complete;
    sum.rarest_rate = complete == 0 ? 0.0 : static_cast<double>(human_rarest) / static_cast<double>(complete);
    return sum;
}

}  // namespace storyscope::geometry
