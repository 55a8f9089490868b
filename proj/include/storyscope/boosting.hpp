#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "parallel.hpp"

namespace storyscope::boosting {

enum class Objective { binary_logistic, multiclass_softmax };

inline std::string to_string(Objective o) {
    return o == Objective::binary_logistic ? "binary_logistic" : "multiclass_softmax";
}

inline Objective parse_objective(const std::string& s) {
    if (s == "binary_logistic") return Objective::binary_logistic;
    if (s == "multiclass_softmax") return Objective::multiclass_softmax;
    throw ParseError("unknown objective: " + s);
}

struct TrainConfig {
    std::size_t n_estimators = 420;
    std::size_t max_depth = 8;
    double lambda = 2.0;
    double learning_rate = 0.1;
    double scale_pos_weight = 1.0;  // binary only; weight on the positive class
    Objective objective = Objective::binary_logistic;
    int n_classes = 2;
    std::uint64_t seed = 0;
    double min_child_hessian = 1.0;

    Json to_json() const {
        return Json{{"n_estimators", n_estimators},
                    {"max_depth", max_depth},
                    {"lambda", lambda},
                    {"learning_rate", learning_rate},
                    {"scale_pos_weight", scale_pos_weight},
                    {"objective", boosting::to_string(objective)},
                    {"n_classes", n_classes},
                    {"seed", seed},
                    {"min_child_hessian", min_child_hessian}};
    }

    static TrainConfig from_json(const Json& j) {
        TrainConfig c;
        c.n_estimators = j.at("n_estimators").get<std::size_t>();
        c.max_depth = j.at("max_depth").get<std::size_t>();
        c.lambda = j.at("lambda").get<double>();
        c.learning_rate = j.value("learning_rate", 0.1);
        c.scale_pos_weight = j.value("scale_pos_weight", 1.0);
        c.objective = parse_objective(j.value("objective", std::string("binary_logistic")));
        c.n_classes = j.value("n_classes", 2);
        c.seed = j.value("seed", std::uint64_t{0});
        c.min_child_hessian = j.value("min_child_hessian", 1.0);
        return c;
    }
};

struct TreeNode {
    int col = -1;  // -1 marks a leaf
    double thr = 0.0;
    int left = -1;
    int right = -1;
    double weight = 0.0;  // leaf value before learning-rate scaling
    double cover = 0.0;   // hessian sum routed through this node at fit time

    bool is_leaf() const { return col < 0; }
};

using Tree = std::vector<TreeNode>;

/// Route rule: go left iff value < threshold. Returns the leaf node index.
inline std::size_t route(const Tree& tree, std::span<const double> row) {
    std::size_t node = 0;
    while (!tree[node].is_leaf())
        node = static_cast<std::size_t>(row[static_cast<std::size_t>(tree[node].col)] < tree[node].thr
                                            ? tree[node].left
                                            : tree[node].right);
    return node;
}

inline double tree_value(const Tree& tree, std::span<const double> row) { return tree[route(tree, row)].weight; }

struct TreeEnsemble {
    Objective objective = Objective::binary_logistic;
    int n_classes = 2;
    std::size_t n_columns = 0;
    double learning_rate = 0.1;
    std::vector<double> base_scores;  // one margin for binary, n_classes for multiclass
    std::vector<Tree> trees;          // round-major; n_margins() trees per round
    TrainConfig config;
    std::string column_map_ref;
    std::vector<double> round_losses;  // [0] = loss before boosting, then one per round

    int n_margins() const { return objective == Objective::binary_logistic ? 1 : n_classes; }
    std::size_t n_rounds() const { return trees.empty() ? 0 : trees.size() / static_cast<std::size_t>(n_margins()); }
    const Tree& tree_at(std::size_t round, int k) const {
        return trees[round * static_cast<std::size_t>(n_margins()) + static_cast<std::size_t>(k)];
    }
};

struct Prediction {
    std::vector<double> margins;        // per class
    std::vector<double> probabilities;  // per class, sums to 1
    int label = 0;
};

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Raw additive margins (one for binary, n_classes for multiclass) using the
/// first `n_rounds` rounds; pass SIZE_MAX for the full ensemble.
inline std::vector<double> raw_margins(const TreeEnsemble& ens, std::span<const double> row,
                                       std::size_t n_rounds = std::numeric_limits<std::size_t>::max()) {
    if (row.size() != ens.n_columns) throw ValidationError("row width does not match the trained ensemble");
    std::vector<double> m = ens.base_scores;
    const std::size_t rounds = std::min(n_rounds, ens.n_rounds());
    for (std::size_t r = 0; r < rounds; ++r)
        for (int k = 0; k < ens.n_margins(); ++k) m[static_cast<std::size_t>(k)] +=
            ens.learning_rate * tree_value(ens.tree_at(r, k), row);
    return m;
}

inline Prediction predict_row(const TreeEnsemble& ens, std::span<const double> row) {
    Prediction p;
    auto raw = raw_margins(ens, row);
    if (ens.objective == Objective::binary_logistic) {
        // Present per-class margins with class 0 as the reference.
        p.margins = {0.0, raw[0]};
    } else {
        p.margins = raw;
    }
    double mx = *std::max_element(p.margins.begin(), p.margins.end());
    double z = 0;
    p.probabilities.resize(p.margins.size());
    for (std::size_t k = 0; k < p.margins.size(); ++k) {
        p.probabilities[k] = std::exp(p.margins[k] - mx);
        z += p.probabilities[k];
    }
    for (auto& q : p.probabilities) q /= z;
    p.label = 0;
    for (std::size_t k = 1; k < p.probabilities.size(); ++k)
        if (p.probabilities[k] > p.probabilities[static_cast<std::size_t>(p.label)]) p.label = static_cast<int>(k);
    return p;
}

inline std::vector<Prediction> predict(const TreeEnsemble& ens, const Matrix& X, int threads = 1) {
    std::vector<Prediction> out(X.rows);
    parallel_for(std::size_t{0}, X.rows, threads, [&](std::size_t r) { out[r] = predict_row(ens, X.row(r)); });
    return out;
}

inline std::vector<int> predict_labels(const TreeEnsemble& ens, const Matrix& X, int threads = 1) {
    auto preds = predict(ens, X, threads);
    std::vector<int> labels(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) labels[i] = preds[i].label;
    return labels;
}

/// Positive-class probability per row (binary ensembles).
inline std::vector<double> predict_positive_proba(const TreeEnsemble& ens, const Matrix& X, int threads = 1) {
    if (ens.objective != Objective::binary_logistic)
        throw ValidationError("positive-class probabilities are a binary-objective concept");
    auto preds = predict(ens, X, threads);
    std::vector<double> out(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i].probabilities[1];
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Weighted binary logistic gradients at the given margins: g = w(p - y),
/// h = w p(1-p), with w = scale_pos_weight on the positive class.
inline void binary_gradients(const std::vector<double>& margins, const std::vector<int>& y,
                             double scale_pos_weight, std::vector<double>& g, std::vector<double>& h) {
    g.resize(y.size());
    h.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        double p = 1.0 / (1.0 + std::exp(-margins[i]));
        double w = y[i] == 1 ? scale_pos_weight : 1.0;
        g[i] = w * (p - static_cast<double>(y[i]));
        h[i] = w * p * (1.0 - p);
    }
}

namespace detail {

struct SplitCand {
    double gain = 0.0;
    int col = -1;
    double thr = 0.0;
    bool valid = false;
};

struct NodeState {
    double G = 0.0;
    double H = 0.0;
};

/// Exact greedy level-wise tree fit on presorted columns. `order[c]` holds all
/// row indices sorted by column value (ties by row index).
inline Tree fit_tree(const Matrix& X, const std::vector<double>& g, const std::vector<double>& h,
                     const TrainConfig& cfg, const std::vector<std::vector<std::uint32_t>>& order,
                     int threads) {
    const std::size_t n = X.rows, D = X.cols;
    Tree tree(1);
    std::vector<NodeState> state(1);
    for (std::size_t i = 0; i < n; ++i) {
        state[0].G += g[i];
        state[0].H += h[i];
    }
    tree[0].cover = state[0].H;
    std::vector<int> row_node(n, 0);
    std::vector<int> active = {0};

    auto finalize = [&](int nd) {
        tree[static_cast<std::size_t>(nd)].col = -1;
        double denom = state[static_cast<std::size_t>(nd)].H + cfg.lambda;
        tree[static_cast<std::size_t>(nd)].weight = denom > 0.0 ? -state[static_cast<std::size_t>(nd)].G / denom : 0.0;
    };

    for (std::size_t depth = 0; depth < cfg.max_depth && !active.empty(); ++depth) {
        const std::size_t n_active = active.size();
        const std::size_t n_nodes_before = tree.size();
        std::vector<int> node_slot(n_nodes_before, -1);
        for (std::size_t i = 0; i < n_active; ++i) node_slot[static_cast<std::size_t>(active[i])] = static_cast<int>(i);

        std::vector<SplitCand> cand(D * n_active);
        parallel_for(std::size_t{0}, D, threads, [&](std::size_t c) {
            struct Acc {
                double gl = 0, hl = 0, last = 0;
                bool seen = false;
            };
            std::vector<Acc> accs(n_active);
            SplitCand* my = cand.data() + c * n_active;
            for (std::uint32_t r : order[c]) {
                int slot = node_slot[static_cast<std::size_t>(row_node[r])];
                if (slot < 0) continue;
                Acc& a = accs[static_cast<std::size_t>(slot)];
                double v = X.at(r, c);
                if (a.seen && v > a.last) {
                    double t = 0.5 * (a.last + v);
                    // Guard: the midpoint must strictly separate the two values
                    // under "left iff value < threshold".
                    if (t > a.last) {
                        const NodeState& st = state[static_cast<std::size_t>(row_node[r])];
                        double gr = st.G - a.gl, hr = st.H - a.hl;
                        if (a.hl >= cfg.min_child_hessian && hr >= cfg.min_child_hessian) {
                            double gain = 0.5 * (a.gl * a.gl / (a.hl + cfg.lambda) + gr * gr / (hr + cfg.lambda) -
                                                 st.G * st.G / (st.H + cfg.lambda));
                            // Strict > keeps the lowest qualifying threshold on ties.
                            if (gain > 0.0 && gain > my[slot].gain)
                                my[slot] = SplitCand{gain, static_cast<int>(c), t, true};
                        }
                    }
                }
                a.gl += g[r];
                a.hl += h[r];
                a.last = v;
                a.seen = true;
            }
        });

        // Deterministic reduction: ascending column order, strict improvement,
        // so equal gains resolve to the lowest column index.
        std::vector<SplitCand> best(n_active);
        for (std::size_t c = 0; c < D; ++c)
            for (std::size_t s = 0; s < n_active; ++s) {
                const SplitCand& sc = cand[c * n_active + s];
                if (sc.valid && sc.gain > best[s].gain) best[s] = sc;
            }

        std::vector<int> next_active;
        for (std::size_t s = 0; s < n_active; ++s) {
            int nd = active[s];
            if (!best[s].valid) {
                finalize(nd);
                continue;
            }
            int li = static_cast<int>(tree.size()), ri = li + 1;
            tree[static_cast<std::size_t>(nd)].col = best[s].col;
            tree[static_cast<std::size_t>(nd)].thr = best[s].thr;
            tree[static_cast<std::size_t>(nd)].left = li;
            tree[static_cast<std::size_t>(nd)].right = ri;
            tree.emplace_back();
            tree.emplace_back();
            state.emplace_back();
            state.emplace_back();
            next_active.push_back(li);
            next_active.push_back(ri);
        }
        if (!next_active.empty()) {
            for (std::size_t r = 0; r < n; ++r) {
                int nd = row_node[r];
                int slot = static_cast<std::size_t>(nd) < n_nodes_before ? node_slot[static_cast<std::size_t>(nd)] : -1;
                if (slot < 0 || !best[static_cast<std::size_t>(slot)].valid) continue;
                const TreeNode& sp = tree[static_cast<std::size_t>(nd)];
                int child = X.at(r, static_cast<std::size_t>(sp.col)) < sp.thr ? sp.left : sp.right;
                row_node[r] = child;
                state[static_cast<std::size_t>(child)].G += g[r];
                state[static_cast<std::size_t>(child)].H += h[r];
            }
            for (int child : next_active)
                tree[static_cast<std::size_t>(child)].cover = state[static_cast<std::size_t>(child)].H;
        }
        active = std::move(next_active);
    }
    for (int nd : active) finalize(nd);
    return tree;
}

inline std::vector<std::vector<std::uint32_t>> presort_columns(const Matrix& X, int threads) {
    std::vector<std::vector<std::uint32_t>> order(X.cols);
    parallel_for(std::size_t{0}, X.cols, threads, [&](std::size_t c) {
        auto& idx = order[c];
        idx.resize(X.rows);
        for (std::uint32_t r = 0; r < X.rows; ++r) idx[r] = r;
        std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
            double va = X.at(a, c), vb = X.at(b, c);
            return va < vb || (va == vb && a < b);
        });
    });
    return order;
}

inline double clamp_p(double p) { return std::min(1.0 - 1e-15, std::max(1e-15, p)); }

}  // namespace detail

inline TreeEnsemble train(const Matrix& X, const std::vector<int>& y, const TrainConfig& cfg, int threads = 1,
                          const std::string& column_map_ref = "") {
    if (X.rows < 2) throw TrainError("training needs at least two rows");
    if (X.rows != y.size()) throw TrainError("labels do not match matrix rows");
    if (cfg.n_estimators < 1 || cfg.max_depth < 1) throw ConfigError("n_estimators and max_depth must be positive");
    if (cfg.lambda < 0 || cfg.min_child_hessian < 0) throw ConfigError("lambda and min_child_hessian must be >= 0");
    if (cfg.learning_rate <= 0 || cfg.learning_rate > 1) throw ConfigError("learning_rate must be in (0, 1]");
    if (cfg.scale_pos_weight <= 0) throw ConfigError("scale_pos_weight must be positive");
    const int K = cfg.objective == Objective::binary_logistic ? 2 : cfg.n_classes;
    if (cfg.objective == Objective::multiclass_softmax && cfg.n_classes < 2)
        throw ConfigError("multiclass requires n_classes >= 2");
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0 || y[i] >= K) throw TrainError("label out of range at row " + std::to_string(i));
    if (*std::max_element(y.begin(), y.end()) == *std::min_element(y.begin(), y.end()))
        throw TrainError("degenerate labels: training needs at least two distinct classes");
    parallel_for(std::size_t{0}, X.rows, threads, [&](std::size_t r) {
        for (std::size_t c = 0; c < X.cols; ++c)
            if (std::isnan(X.at(r, c))) throw TrainError("matrix contains NaN at row " + std::to_string(r));
    });

    TreeEnsemble ens;
    ens.objective = cfg.objective;
    ens.n_classes = K;
    ens.n_columns = X.cols;
    ens.learning_rate = cfg.learning_rate;
    ens.config = cfg;
    ens.column_map_ref = column_map_ref;
    ens.base_scores.assign(static_cast<std::size_t>(ens.n_margins()), 0.0);

    auto order = detail::presort_columns(X, threads);
    const std::size_t n = X.rows;

    if (cfg.objective == Objective::binary_logistic) {
        std::vector<double> margin(n, 0.0), g, h;
        auto loss = [&]() {
            double total = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double p = detail::clamp_p(1.0 / (1.0 + std::exp(-margin[i])));
                double w = y[i] == 1 ? cfg.scale_pos_weight : 1.0;
                total += -w * (y[i] == 1 ? std::log(p) : std::log(1.0 - p));
            }
            return total;
        };
        ens.round_losses.push_back(loss());
        for (std::size_t round = 0; round < cfg.n_estimators; ++round) {
            binary_gradients(margin, y, cfg.scale_pos_weight, g, h);
            Tree tree = detail::fit_tree(X, g, h, cfg, order, threads);
            for (std::size_t i = 0; i < n; ++i) margin[i] += cfg.learning_rate * tree_value(tree, X.row(i));
            ens.trees.push_back(std::move(tree));
            ens.round_losses.push_back(loss());
        }
    } else {
        Matrix margin(n, static_cast<std::size_t>(K), 0.0);
        Matrix prob(n, static_cast<std::size_t>(K), 0.0);
        auto refresh_prob = [&]() {
            for (std::size_t i = 0; i < n; ++i) {
                auto m = margin.row(i);
                double mx = *std::max_element(m.begin(), m.end());
                double z = 0;
                for (int k = 0; k < K; ++k) {
                    prob.at(i, static_cast<std::size_t>(k)) = std::exp(m[static_cast<std::size_t>(k)] - mx);
                    z += prob.at(i, static_cast<std::size_t>(k));
                }
                for (int k = 0; k < K; ++k) prob.at(i, static_cast<std::size_t>(k)) /= z;
            }
        };
        auto loss = [&]() {
            double total = 0;
            for (std::size_t i = 0; i < n; ++i)
                total += -std::log(detail::clamp_p(prob.at(i, static_cast<std::size_t>(y[i]))));
            return total;
        };
        refresh_prob();
        ens.round_losses.push_back(loss());
        std::vector<double> g(n), h(n);
        for (std::size_t round = 0; round < cfg.n_estimators; ++round) {
            std::vector<Tree> round_trees;
            for (int k = 0; k < K; ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    double p = prob.at(i, static_cast<std::size_t>(k));
                    g[i] = p - (y[i] == k ? 1.0 : 0.0);
                    h[i] = p * (1.0 - p);
                }
                round_trees.push_back(detail::fit_tree(X, g, h, cfg, order, threads));
            }
            for (int k = 0; k < K; ++k)
                for (std::size_t i = 0; i < n; ++i)
                    margin.at(i, static_cast<std::size_t>(k)) +=
                        cfg.learning_rate * tree_value(round_trees[static_cast<std::size_t>(k)], X.row(i));
            for (auto& t : round_trees) ens.trees.push_back(std::move(t));
            refresh_prob();
            ens.round_losses.push_back(loss());
        }
    }
    return ens;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const TreeEnsemble& ens) {
    Json trees = Json::array();
    for (const auto& tree : ens.trees) {
        Json nodes = Json::array();
        for (const auto& nd : tree) {
            if (nd.is_leaf())
                nodes.push_back(Json{{"leaf", nd.weight}, {"cover", nd.cover}});
            else
                nodes.push_back(Json{{"col", nd.col}, {"thr", nd.thr}, {"left", nd.left}, {"right", nd.right}});
        }
        trees.push_back(std::move(nodes));
    }
    return Json{{"schema_version", 1},
                {"objective", to_string(ens.objective)},
                {"n_classes", ens.n_classes},
                {"n_columns", ens.n_columns},
                {"base_scores", ens.base_scores},
                {"learning_rate", ens.learning_rate},
                {"column_map_ref", ens.column_map_ref},
                {"config", ens.config.to_json()},
                {"round_losses", ens.round_losses},
                {"trees", trees}};
}

inline TreeEnsemble ensemble_from_json(const Json& j) {
    if (j.value("schema_version", 0) != 1) throw ParseError("unsupported ensemble schema version");
    TreeEnsemble ens;
    ens.objective = parse_objective(j.at("objective").get<std::string>());
    ens.n_classes = j.at("n_classes").get<int>();
    ens.n_columns = j.at("n_columns").get<std::size_t>();
    ens.base_scores = j.at("base_scores").get<std::vector<double>>();
    ens.learning_rate = j.at("learning_rate").get<double>();
    ens.column_map_ref = j.value("column_map_ref", std::string());
    ens.config = TrainConfig::from_json(j.at("config"));
    ens.round_losses = j.value("round_losses", std::vector<double>{});
    for (const auto& jt : j.at("trees")) {
        Tree tree;
        for (const auto& jn : jt) {
            TreeNode nd;
            if (jn.contains("leaf")) {
                nd.weight = jn.at("leaf").get<double>();
                nd.cover = jn.at("cover").get<double>();
            } else {
                nd.col = jn.at("col").get<int>();
                nd.thr = jn.at("thr").get<double>();
                nd.left = jn.at("left").get<int>();
                nd.right = jn.at("right").get<int>();
            }
            tree.push_back(nd);
        }
        // Internal covers are serialized implicitly: recompute as child sums.
        for (std::size_t i = tree.size(); i-- > 0;)
            if (!tree[i].is_leaf())
                tree[i].cover = tree[static_cast<std::size_t>(tree[i].left)].cover +
                                tree[static_cast<std::size_t>(tree[i].right)].cover;
        ens.trees.push_back(std::move(tree));
    }
    return ens;
}

inline void save_ensemble(const std::filesystem::path& path, const TreeEnsemble& ens) {
    save_json(path, to_json(ens));
}

inline TreeEnsemble load_ensemble(const std::filesystem::path& path) { return ensemble_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridCell {
    TrainConfig config;
    double val_macro_f1 = -1.0;
    std::string error;
};

struct GridSearchResult {
    TrainConfig best;
    std::size_t best_index = 0;
    std::vector<GridCell> table;
};

/// Trains each grid cell on the train rows and scores macro-F1 on the val
/// rows. Ties prefer smaller n_estimators, then smaller max_depth, then the
/// earlier grid entry. Per-cell training errors are recorded, not fatal.
inline GridSearchResult grid_search(const Matrix& X, const std::vector<int>& y,
                                    const std::vector<std::size_t>& train_rows,
                                    const std::vector<std::size_t>& val_rows,
                                    const std::vector<TrainConfig>& grid, int threads = 1) {
    if (grid.empty()) throw ConfigError("grid search needs at least one configuration");
    Matrix Xtr = X.gather_rows(train_rows);
    Matrix Xva = X.gather_rows(val_rows);
    std::vector<int> ytr, yva;
    for (auto r : train_rows) ytr.push_back(y[r]);
    for (auto r : val_rows) yva.push_back(y[r]);

    GridSearchResult res;
    bool found = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        GridCell cell;
        cell.config = grid[i];
        try {
            auto ens = train(Xtr, ytr, grid[i], threads);
            auto preds = predict_labels(ens, Xva, threads);
            int K = ens.n_classes;
            cell.val_macro_f1 = metrics::macro_f1(yva, preds, K);
        } catch (const Error& e) {
            cell.error = e.what();
        }
        res.table.push_back(cell);
        if (cell.error.empty()) {
            bool better = !found;
            if (found) {
                const auto& b = res.table[res.best_index];
                if (cell.val_macro_f1 > b.val_macro_f1)
                    better = true;
                else if (cell.val_macro_f1 == b.val_macro_f1) {
                    if (cell.config.n_estimators < b.config.n_estimators)
                        better = true;
                    else if (cell.config.n_estimators == b.config.n_estimators &&
                             cell.config.max_depth < b.config.max_depth)
                        better = true;
                }
            }
            if (better) {
                res.best_index = i;
                found = true;
            }
        }
    }
    if (!found) throw TrainError("every grid cell failed to train");
    res.best = res.table[res.best_index].config;
    return res;
}

}  // namespace storyscope::boosting
