#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "storyscope/boosting.hpp"
#include "storyscope/encoding.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/matrix.hpp"
#include "storyscope/parallel.hpp"

namespace storyscope::attribution {

/// Exact per-column attributions for every (row, model output) pair.
/// Local accuracy: sum of a row's phi plus base[k] equals the raw margin k.
struct ShapMatrix {
    std::size_t n_rows = 0;
    std::size_t n_columns = 0;
    std::size_t n_outputs = 1;
    std::vector<double> values;  // [row][output][column]
    std::vector<double> base;    // expected margin per output

    double& at(std::size_t r, std::size_t k, std::size_t c) {
        return values[(r * n_outputs + k) * n_columns + c];
    }
    double at(std::size_t r, std::size_t k, std::size_t c) const {
        return values[(r * n_outputs + k) * n_columns + c];
    }
    std::span<const double> row_output(std::size_t r, std::size_t k) const {
        return {values.data() + (r * n_outputs + k) * n_columns, n_columns};
    }
};

namespace detail {

/// One step of the weighted decision path used by the SHAP recursion.
struct PathElement {
    int feature_index = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double pweight = 0.0;
};

inline void extend_path(PathElement* unique_path, unsigned unique_depth, double zero_fraction,
                        double one_fraction, int feature_index) {
    unique_path[unique_depth].feature_index = feature_index;
    unique_path[unique_depth].zero_fraction = zero_fraction;
    unique_path[unique_depth].one_fraction = one_fraction;
    unique_path[unique_depth].pweight = unique_depth == 0 ? 1.0 : 0.0;
    for (int i = static_cast<int>(unique_depth) - 1; i >= 0; --i) {
        unique_path[i + 1].pweight +=
            one_fraction * unique_path[i].pweight * (i + 1) / static_cast<double>(unique_depth + 1);
        unique_path[i].pweight =
            zero_fraction * unique_path[i].pweight * (unique_depth - i) / static_cast<double>(unique_depth + 1);
    }
}

inline void unwind_path(PathElement* unique_path, unsigned unique_depth, unsigned path_index) {
    const double one_fraction = unique_path[path_index].one_fraction;
    const double zero_fraction = unique_path[path_index].zero_fraction;
    double next_one_portion = unique_path[unique_depth].pweight;
    for (int i = static_cast<int>(unique_depth) - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp = unique_path[i].pweight;
            unique_path[i].pweight =
                next_one_portion * (unique_depth + 1) / static_cast<double>((i + 1) * one_fraction);
            next_one_portion = tmp - unique_path[i].pweight * zero_fraction * (unique_depth - i) /
                                         static_cast<double>(unique_depth + 1);
        } else {
            unique_path[i].pweight = unique_path[i].pweight * (unique_depth + 1) /
                                     (zero_fraction * (unique_depth - i));
        }
    }
    for (unsigned i = path_index; i < unique_depth; ++i) {
        unique_path[i].feature_index = unique_path[i + 1].feature_index;
        unique_path[i].zero_fraction = unique_path[i + 1].zero_fraction;
        unique_path[i].one_fraction = unique_path[i + 1].one_fraction;
    }
}

/// Total permutation weight if element path_index were unwound.
inline double unwound_path_sum(const PathElement* unique_path, unsigned unique_depth, unsigned path_index) {
    const double one_fraction = unique_path[path_index].one_fraction;
    const double zero_fraction = unique_path[path_index].zero_fraction;
    double next_one_portion = unique_path[unique_depth].pweight;
    double total = 0.0;
    for (int i = static_cast<int>(unique_depth) - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp =
                next_one_portion * (unique_depth + 1) / static_cast<double>((i + 1) * one_fraction);
            total += tmp;
            next_one_portion = unique_path[i].pweight -
                               tmp * zero_fraction * (unique_depth - i) / static_cast<double>(unique_depth + 1);
        } else {
            total += unique_path[i].pweight /
                     (zero_fraction * (unique_depth - i) / static_cast<double>(unique_depth + 1));
        }
    }
    return total;
}

inline int tree_depth(const boosting::Tree& tree, int node = 0) {
    const auto& n = tree[static_cast<std::size_t>(node)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(tree_depth(tree, n.left), tree_depth(tree, n.right));
}

inline void check_covers(const boosting::Tree& tree) {
    for (const auto& n : tree)
        if (!(n.cover > 0.0))
            throw ValidationError("tree node lacks a positive training cover; SHAP needs per-node covers");
}

/// Cover-weighted expectation of the tree's raw leaf weights.
inline double expected_leaf_value(const boosting::Tree& tree, int node = 0) {
    const auto& n = tree[static_cast<std::size_t>(node)];
    if (n.is_leaf()) return n.weight;
    return (tree[static_cast<std::size_t>(n.left)].cover * expected_leaf_value(tree, n.left) +
            tree[static_cast<std::size_t>(n.right)].cover * expected_leaf_value(tree, n.right)) /
           n.cover;
}

inline void shap_recurse(const boosting::Tree& tree, std::span<const double> x, double* phi, double scale,
                         int node_index, unsigned unique_depth, PathElement* parent_path,
                         double parent_zero_fraction, double parent_one_fraction, int parent_feature_index) {
    PathElement* unique_path = parent_path + unique_depth + 1;
    std::copy(parent_path, parent_path + unique_depth + 1, unique_path);
    extend_path(unique_path, unique_depth, parent_zero_fraction, parent_one_fraction, parent_feature_index);

    const auto& node = tree[static_cast<std::size_t>(node_index)];
    if (node.is_leaf()) {
        for (unsigned i = 1; i <= unique_depth; ++i) {
            const double w = unwound_path_sum(unique_path, unique_depth, i);
            const PathElement& el = unique_path[i];
            phi[el.feature_index] += w * (el.one_fraction - el.zero_fraction) * node.weight * scale;
        }
        return;
    }

    const int hot = x[static_cast<std::size_t>(node.col)] < node.thr ? node.left : node.right;
    const int cold = hot == node.left ? node.right : node.left;
    const double hot_zero_fraction = tree[static_cast<std::size_t>(hot)].cover / node.cover;
    const double cold_zero_fraction = tree[static_cast<std::size_t>(cold)].cover / node.cover;
    double incoming_zero_fraction = 1.0;
    double incoming_one_fraction = 1.0;

    // Undo any earlier split on the same column so it can be re-extended here.
    unsigned path_index = 0;
    for (; path_index <= unique_depth; ++path_index)
        if (unique_path[path_index].feature_index == node.col) break;
    if (path_index != unique_depth + 1) {
        incoming_zero_fraction = unique_path[path_index].zero_fraction;
        incoming_one_fraction = unique_path[path_index].one_fraction;
        unwind_path(unique_path, unique_depth, path_index);
        unique_depth -= 1;
    }

    shap_recurse(tree, x, phi, scale, hot, unique_depth + 1, unique_path,
                 hot_zero_fraction * incoming_zero_fraction, incoming_one_fraction, node.col);
    shap_recurse(tree, x, phi, scale, cold, unique_depth + 1, unique_path,
                 cold_zero_fraction * incoming_zero_fraction, 0.0, node.col);
}

}  // namespace detail

/// Exact path-dependent SHAP values for every row of `rows`, one slice per model output.
inline ShapMatrix tree_shap(const boosting::TreeEnsemble& ens, const Matrix& rows, int threads = 1) {
    if (rows.cols != static_cast<std::size_t>(ens.n_columns))
        throw ValidationError("row width " + std::to_string(rows.cols) + " does not match ensemble columns " +
                              std::to_string(ens.n_columns));
    const auto n_outputs = static_cast<std::size_t>(ens.n_margins());

    ShapMatrix out;
    out.n_rows = rows.rows;
    out.n_columns = rows.cols;
    out.n_outputs = n_outputs;
    out.values.assign(rows.rows * n_outputs * rows.cols, 0.0);
    out.base.assign(ens.base_scores.begin(), ens.base_scores.end());

    int max_depth = 0;
    for (const auto& tree : ens.trees) {
        detail::check_covers(tree);
        max_depth = std::max(max_depth, detail::tree_depth(tree));
    }
    for (std::size_t r = 0; r < ens.n_rounds(); ++r)
        for (std::size_t k = 0; k < n_outputs; ++k)
            out.base[k] += ens.learning_rate * detail::expected_leaf_value(ens.tree_at(r, static_cast<int>(k)));

    const auto maxd = static_cast<std::size_t>(max_depth) + 2;
    parallel_for(0, rows.rows, static_cast<unsigned>(threads), [&](std::size_t r) {
        std::vector<detail::PathElement> path(maxd * (maxd + 1) / 2 + maxd);
        const auto x = rows.row(r);
        for (std::size_t round = 0; round < ens.n_rounds(); ++round)
            for (std::size_t k = 0; k < n_outputs; ++k) {
                double* phi = out.values.data() + (r * n_outputs + k) * rows.cols;
                detail::shap_recurse(ens.tree_at(round, static_cast<int>(k)), x, phi, ens.learning_rate, 0,
                                     0, path.data(), 1.0, 1.0, -1);
            }
    });
    return out;
}

/// Mean-|attribution| importance of one taxonomy feature, per model output.
struct FeatureImportance {
    std::string feature_id;
    std::vector<double> per_class;

    double importance(std::size_t k = 0) const { return per_class.at(k); }
};

/// Signed per-row feature attributions for output k: phi summed over each feature's columns.
inline Matrix feature_attributions(const ShapMatrix& shap, const encoding::ColumnMap& map, std::size_t k) {
    if (map.width() != shap.n_columns)
        throw ValidationError("column map width does not match SHAP matrix width");
    if (k >= shap.n_outputs) throw ValidationError("SHAP output index out of range");
    Matrix out(shap.n_rows, map.n_features());
    for (std::size_t r = 0; r < shap.n_rows; ++r) {
        const auto phi = shap.row_output(r, k);
        for (std::size_t fi = 0; fi < map.features.size(); ++fi) {
            const auto& f = map.features[fi];
            double s = 0.0;
            for (std::size_t c = f.begin; c < f.begin + f.width; ++c) s += phi[c];
            out.at(r, fi) = s;
        }
    }
    return out;
}

/// Collapse encoded-column attributions back to taxonomy features:
/// per row the feature's phi are summed (signed), then |.| is averaged over rows.
inline std::vector<FeatureImportance> aggregate_shap(const ShapMatrix& shap, const encoding::ColumnMap& map) {
    if (shap.n_rows == 0) throw ValidationError("cannot aggregate SHAP over zero rows");
    std::vector<FeatureImportance> out(map.n_features());
    for (std::size_t fi = 0; fi < map.n_features(); ++fi) {
        out[fi].feature_id = map.features[fi].feature_id;
        out[fi].per_class.assign(shap.n_outputs, 0.0);
    }
    for (std::size_t k = 0; k < shap.n_outputs; ++k) {
        Matrix attr = feature_attributions(shap, map, k);
        for (std::size_t fi = 0; fi < map.n_features(); ++fi) {
            double acc = 0.0;
            for (std::size_t r = 0; r < attr.rows; ++r) acc += std::abs(attr.at(r, fi));
            out[fi].per_class[k] = acc / static_cast<double>(attr.rows);
        }
    }
    return out;
}

/// Importance collapsed to one number per feature (mean across outputs).
inline double scalar_importance(const FeatureImportance& f) {
    double s = 0.0;
    for (double v : f.per_class) s += v;
    return f.per_class.empty() ? 0.0 : s / static_cast<double>(f.per_class.size());
}

}  // namespace storyscope::attribution
