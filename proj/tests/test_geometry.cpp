#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "storyscope/errors.hpp"
#include "storyscope/geometry.hpp"
#include "storyscope/matrix.hpp"
#include "storyscope/rng.hpp"

using namespace storyscope;
using namespace storyscope::geometry;
using Catch::Approx;

namespace {

Matrix mk(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

Matrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) m.at(r, c) = rng.unit() * 10.0 - 5.0;
    return m;
}

// Independent oracle: full sort of all distances, mean of the first k.
std::vector<double> brute_rarity(const Matrix& reference, const Matrix& query, std::size_t k,
                                 bool self_exclude) {
    std::vector<double> out(query.rows);
    for (std::size_t q = 0; q < query.rows; ++q) {
        std::vector<double> dists;
        for (std::size_t o = 0; o < reference.rows; ++o) {
            if (self_exclude && o == q) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < reference.cols; ++c) {
                const double d = query.at(q, c) - reference.at(o, c);
                s += d * d;
            }
            dists.push_back(std::sqrt(s));
        }
        std::sort(dists.begin(), dists.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += dists[i];
        out[q] = sum / static_cast<double>(k);
    }
    return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("centroid report on hand-built points", "[geometry]") {
    SECTION("two singleton sources") {
        const Matrix Z = mk({{0.0, 0.0}, {1.0, 0.0}});
        const auto rep = centroid_stats(Z, {"a", "b"});
        REQUIRE(rep.sources == std::vector<std::string>{"a", "b"});
        REQUIRE(rep.distance.at(0, 1) == Approx(1.0));
        REQUIRE(rep.distance.at(1, 0) == Approx(1.0));
        REQUIRE(rep.distance.at(0, 0) == 0.0);
        REQUIRE(rep.dispersion[0] == 0.0);
        REQUIRE(rep.dispersion[1] == 0.0);
        // only one neighbour each, so the k-NN radius collapses to that distance
        REQUIRE(rep.knn_radius_median[0] == Approx(1.0));
        REQUIRE(rep.knn_radius_median[1] == Approx(1.0));
    }
    SECTION("dispersion is the mean distance to the centroid") {
        const Matrix Z = mk({{0.0, 0.0}, {2.0, 0.0}});
        const auto rep = centroid_stats(Z, {"a", "a"});
        REQUIRE(rep.centroids.at(0, 0) == Approx(1.0));
        REQUIRE(rep.centroids.at(0, 1) == 0.0);
        REQUIRE(rep.dispersion[0] == Approx(1.0));
    }
    SECTION("unit right triangle of singleton sources") {
        const Matrix Z = mk({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
        const auto rep = centroid_stats(Z, {"a", "b", "c"});
        REQUIRE(rep.distance.at(0, 1) == Approx(1.0));
        REQUIRE(rep.distance.at(0, 2) == Approx(1.0));
        REQUIRE(rep.distance.at(1, 2) == Approx(std::sqrt(2.0)));
    }
}

TEST_CASE("centroid distance matrix is symmetric with a zero diagonal", "[geometry]") {
    const Matrix Z = random_matrix(40, 5, 99);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < 40; ++r) labels.push_back(r % 3 == 0 ? "x" : (r % 3 == 1 ? "y" : "z"));
    const auto rep = centroid_stats(Z, labels);
    for (std::size_t i = 0; i < rep.sources.size(); ++i) {
        REQUIRE(rep.distance.at(i, i) == 0.0);
        for (std::size_t j = 0; j < rep.sources.size(); ++j)
            REQUIRE(rep.distance.at(i, j) == rep.distance.at(j, i));
    }
}

TEST_CASE("median k-NN radius over pooled rows", "[geometry]") {
    // collinear points 0, 1, 3; k capped at n-1 = 2
    const Matrix Z = mk({{0.0}, {1.0}, {3.0}});
    SECTION("single source") {
        const auto rep = centroid_stats(Z, {"s", "s", "s"});
        // radii: 3 (point 0), 2 (point 1), 3 (point 3) -> median 3
        REQUIRE(rep.knn_radius_median[0] == Approx(3.0));
    }
    SECTION("split sources share the pooled neighbourhood") {
        const auto rep = centroid_stats(Z, {"x", "x", "y"});
        REQUIRE(rep.knn_radius_median[rep.index("x")] == Approx(2.5));
        REQUIRE(rep.knn_radius_median[rep.index("y")] == Approx(3.0));
    }
    SECTION("explicit smaller k") {
        const auto rep = centroid_stats(Z, {"s", "s", "s"}, 1);
        // nearest-neighbour distances: 1, 1, 2 -> median 1
        REQUIRE(rep.knn_radius_median[0] == Approx(1.0));
    }
}

TEST_CASE("mean centroid distances human vs AI", "[geometry]") {
    const Matrix Z = mk({{0.0, 0.0}, {3.0, 0.0}, {0.0, 4.0}});
    const auto rep = centroid_stats(Z, {"human", "m1", "m2"});
    REQUIRE(rep.mean_human_ai_distance() == Approx(3.5));  // (3 + 4) / 2
    REQUIRE(rep.mean_ai_ai_distance() == Approx(5.0));     // 3-4-5 triangle
    const Matrix Z2 = mk({{0.0}, {1.0}});
    const auto rep2 = centroid_stats(Z2, {"human", "m1"});
    REQUIRE_THROWS_AS(rep2.mean_ai_ai_distance(), ValidationError);
}

TEST_CASE("centroid input validation", "[geometry]") {
    const Matrix Z = mk({{0.0}, {1.0}});
    REQUIRE_THROWS_AS(centroid_stats(Z, {"a"}), ValidationError);
    REQUIRE_THROWS_AS(centroid_stats(mk({{0.0}}), {"a"}), ValidationError);
    const auto rep = centroid_stats(Z, {"a", "b"});
    REQUIRE_THROWS_AS(rep.index("missing"), ValidationError);
}

TEST_CASE("centroid stats are thread-count invariant", "[geometry]") {
    const Matrix Z = random_matrix(60, 4, 7);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < 60; ++r) labels.push_back(r % 2 == 0 ? "a" : "b");
    const auto one = centroid_stats(Z, labels, 10, 1);
    const auto four = centroid_stats(Z, labels, 10, 4);
    REQUIRE(one.knn_radius_median == four.knn_radius_median);
    REQUIRE(one.dispersion == four.dispersion);
    REQUIRE(one.distance.data == four.distance.data);
}

TEST_CASE("LDA separates two classes along the informative axis", "[geometry]") {
    Rng rng(11);
    const std::size_t n = 200, d = 4;
    Matrix Z(n, d);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < n; ++r) {
        const bool pos = r % 2 == 0;
        labels.push_back(pos ? "p" : "q");
        Z.at(r, 0) = (pos ? 3.0 : -3.0) + rng.unit() - 0.5;
        for (std::size_t c = 1; c < d; ++c) Z.at(r, c) = rng.unit() - 0.5;
    }
    const auto proj = lda_project(Z, labels);
    std::vector<double> e0(d, 0.0);
    e0[0] = 1.0;
    REQUIRE(std::abs(cosine(proj.axes.row(0), e0)) >= 0.99);
    // both axes unit norm and linearly independent
    for (std::size_t a = 0; a < 2; ++a) {
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) norm += proj.axes.at(a, c) * proj.axes.at(a, c);
        REQUIRE(std::sqrt(norm) == Approx(1.0).epsilon(1e-9));
    }
    REQUIRE(std::abs(cosine(proj.axes.row(0), proj.axes.row(1))) < 0.999);
    // coordinates really are dot products with the axes
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t a = 0; a < 2; ++a) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += Z.at(r, c) * proj.axes.at(a, c);
            REQUIRE(proj.coords.at(r, a) == Approx(dot));
        }
}

TEST_CASE("LDA first axis matches the two-class closed form", "[geometry]") {
    // anisotropic within-class noise so the whitening actually matters
    Rng rng(23);
    const std::size_t n = 400, d = 3;
    Matrix Z(n, d);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < n; ++r) {
        const bool pos = r % 2 == 0;
        labels.push_back(pos ? "p" : "q");
        Z.at(r, 0) = (pos ? 1.0 : -1.0) + 4.0 * (rng.unit() - 0.5);
        Z.at(r, 1) = (pos ? 0.5 : -0.5) + 0.2 * (rng.unit() - 0.5);
        Z.at(r, 2) = rng.unit() - 0.5;
    }
    const auto proj = lda_project(Z, labels);

    // oracle: w ~ (S_W + ridge I)^-1 (mu_p - mu_q)
    Eigen::VectorXd mu_p = Eigen::VectorXd::Zero(d), mu_q = Eigen::VectorXd::Zero(d);
    std::size_t np = 0, nq = 0;
    for (std::size_t r = 0; r < n; ++r) {
        Eigen::Vector3d x(Z.at(r, 0), Z.at(r, 1), Z.at(r, 2));
        if (labels[r] == "p") {
            mu_p += x;
            ++np;
        } else {
            mu_q += x;
            ++nq;
        }
    }
    mu_p /= static_cast<double>(np);
    mu_q /= static_cast<double>(nq);
    Eigen::MatrixXd SW = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t r = 0; r < n; ++r) {
        Eigen::Vector3d x(Z.at(r, 0), Z.at(r, 1), Z.at(r, 2));
        const Eigen::Vector3d dev = x - (labels[r] == "p" ? mu_p : mu_q);
        SW += dev * dev.transpose();
    }
    const Eigen::MatrixXd A = SW + proj.ridge * Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd w = A.ldlt().solve(mu_p - mu_q);
    std::vector<double> oracle(w.data(), w.data() + d);
    REQUIRE(std::abs(cosine(proj.axes.row(0), oracle)) >= 0.999);
}

TEST_CASE("LDA axes are deterministic with a fixed sign convention", "[geometry]") {
    const Matrix Z = random_matrix(80, 5, 31);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < 80; ++r) labels.push_back(r % 3 == 0 ? "a" : (r % 3 == 1 ? "b" : "c"));
    const auto p1 = lda_project(Z, labels);
    const auto p2 = lda_project(Z, labels);
    REQUIRE(p1.axes.data == p2.axes.data);
    REQUIRE(p1.coords.data == p2.coords.data);
    for (std::size_t a = 0; a < 2; ++a) {
        double first = 0.0;
        for (std::size_t c = 0; c < Z.cols; ++c)
            if (std::abs(p1.axes.at(a, c)) > 1e-12) {
                first = p1.axes.at(a, c);
                break;
            }
        REQUIRE(first > 0.0);
    }
}

TEST_CASE("LDA handles identical class means", "[geometry]") {
    Rng rng(5);
    Matrix Z(60, 3);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < 60; ++r) {
        labels.push_back(r % 2 == 0 ? "a" : "b");
        for (std::size_t c = 0; c < 3; ++c) Z.at(r, c) = rng.unit() - 0.5;
    }
    // centre each class on exactly the same mean
    for (const char* cls : {"a", "b"}) {
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            std::size_t cnt = 0;
            for (std::size_t r = 0; r < 60; ++r)
                if (labels[r] == cls) {
                    mean += Z.at(r, c);
                    ++cnt;
                }
            mean /= static_cast<double>(cnt);
            for (std::size_t r = 0; r < 60; ++r)
                if (labels[r] == cls) Z.at(r, c) -= mean;
        }
    }
    const auto p1 = lda_project(Z, labels);
    const auto p2 = lda_project(Z, labels);
    REQUIRE(p1.axes.data == p2.axes.data);
    for (std::size_t a = 0; a < 2; ++a) {
        double norm = 0.0;
        for (std::size_t c = 0; c < 3; ++c) norm += p1.axes.at(a, c) * p1.axes.at(a, c);
        REQUIRE(std::sqrt(norm) == Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("LDA axes are invariant to row permutation", "[geometry]") {
    // three well-separated classes so both discriminant eigenvalues are
    // distinct and the axes are identifiable up to sign
    Rng noise(47);
    const std::size_t n = 90;
    Matrix Z(n, 4);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t cls = r % 3;
        labels.push_back(cls == 0 ? "a" : (cls == 1 ? "b" : "c"));
        const double mx = cls == 1 ? 5.0 : 0.0;
        const double my = cls == 2 ? 3.0 : 0.0;
        Z.at(r, 0) = mx + 0.5 * (noise.unit() - 0.5);
        Z.at(r, 1) = my + 0.5 * (noise.unit() - 0.5);
        Z.at(r, 2) = noise.unit() - 0.5;
        Z.at(r, 3) = noise.unit() - 0.5;
    }
    const auto base = lda_project(Z, labels);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    rng.shuffle(perm);
    Matrix Zp(n, 4);
    std::vector<std::string> lp(n);
    for (std::size_t r = 0; r < n; ++r) {
        lp[r] = labels[perm[r]];
        for (std::size_t c = 0; c < 4; ++c) Zp.at(r, c) = Z.at(perm[r], c);
    }
    const auto permuted = lda_project(Zp, lp);
    for (std::size_t a = 0; a < 2; ++a)
        REQUIRE(std::abs(cosine(base.axes.row(a), permuted.axes.row(a))) >= 1.0 - 1e-6);
}

TEST_CASE("projecting the axes of an isotropic problem gives identity coordinates", "[geometry]") {
    // four points per class in a perfect cross make S_W exactly isotropic,
    // so the discriminant axes come out orthonormal
    std::vector<std::vector<double>> rows;
    std::vector<std::string> labels;
    const double mu[2][2] = {{0.0, 0.0}, {4.0, 1.0}};
    for (int cls = 0; cls < 2; ++cls)
        for (const auto& off : {std::pair{0.7, 0.0}, std::pair{-0.7, 0.0}, std::pair{0.0, 0.7},
                                std::pair{0.0, -0.7}}) {
            rows.push_back({mu[cls][0] + off.first, mu[cls][1] + off.second});
            labels.push_back(cls == 0 ? "a" : "b");
        }
    const auto proj = lda_project(mk(rows), labels);
    const auto self = lda_project(mk(rows), labels);  // deterministic
    Matrix axes_as_rows = proj.axes;
    // coordinates of the axes themselves: dot(a_i, a_j) should be the identity
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 2; ++c) dot += axes_as_rows.at(i, c) * self.axes.at(j, c);
            REQUIRE(dot == Approx(i == j ? 1.0 : 0.0).margin(1e-9));
        }
}

TEST_CASE("LDA input validation", "[geometry]") {
    const Matrix Z = mk({{0.0, 1.0}, {1.0, 0.0}});
    REQUIRE_THROWS_AS(lda_project(Z, {"a", "a"}), ValidationError);   // one class
    REQUIRE_THROWS_AS(lda_project(Z, {"a"}), ValidationError);        // label mismatch
    REQUIRE_THROWS_AS(lda_project(mk({{0.0}, {1.0}}), {"a", "b"}), ValidationError);  // one column
}

TEST_CASE("rarity of collinear reference points", "[geometry]") {
    const Matrix ref = mk({{0.0}, {1.0}, {10.0}});
    SECTION("reference rarities self-exclude") {
        const auto rep = rarity(ref, ref, {.k = 1});
        REQUIRE(rep.reference_rarity == std::vector<double>{1.0, 1.0, 9.0});
    }
    SECTION("a query duplicating a reference point has rarity zero") {
        const auto rep = rarity(ref, mk({{10.0}}), {.k = 1});
        REQUIRE(rep.query_rarity[0] == 0.0);
        REQUIRE(rep.query_percentile[0] == 0.0);  // no reference rarity is <= 0
    }
    SECTION("percentile counts reference rarities at or below") {
        const auto rep = rarity(ref, mk({{0.5}}), {.k = 1});
        REQUIRE(rep.query_rarity[0] == Approx(0.5));
        REQUIRE(rep.query_percentile[0] == 0.0);
        const auto rep2 = rarity(ref, mk({{-1.0}}), {.k = 1});
        REQUIRE(rep2.query_rarity[0] == Approx(1.0));
        REQUIRE(rep2.query_percentile[0] == Approx(2.0 / 3.0));
    }
}

TEST_CASE("rarity hand table with k=2", "[geometry]") {
    const Matrix ref = mk({{0.0}, {1.0}, {2.0}, {4.0}, {8.0}});
    const auto rep = rarity(ref, ref, {.k = 2});
    REQUIRE(rep.reference_rarity[0] == Approx(1.5));
    REQUIRE(rep.reference_rarity[1] == Approx(1.0));
    REQUIRE(rep.reference_rarity[2] == Approx(1.5));
    REQUIRE(rep.reference_rarity[3] == Approx(2.5));
    REQUIRE(rep.reference_rarity[4] == Approx(5.0));
    // queries include their own zero distance, pulling the mean down
    REQUIRE(rep.query_rarity[0] == Approx(0.5));
    REQUIRE(rep.query_rarity[4] == Approx(2.0));
}

TEST_CASE("rarity matches the brute-force oracle exactly", "[geometry]") {
    const Matrix ref = random_matrix(300, 8, 1234);
    const Matrix query = random_matrix(100, 8, 4321);
    const auto rep = rarity(ref, query, {.k = 25});
    REQUIRE(rep.reference_rarity == brute_rarity(ref, ref, 25, true));
    REQUIRE(rep.query_rarity == brute_rarity(ref, query, 25, false));

    const Matrix small_ref = random_matrix(60, 3, 9);
    const auto small = rarity(small_ref, small_ref, {.k = 7});
    REQUIRE(small.reference_rarity == brute_rarity(small_ref, small_ref, 7, true));
}

TEST_CASE("rarity percentiles are monotone in rarity and bounded", "[geometry]") {
    const Matrix ref = random_matrix(120, 4, 55);
    const Matrix query = random_matrix(80, 4, 66);
    const auto rep = rarity(ref, query, {.k = 10});
    std::vector<std::size_t> order(80);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rep.query_rarity[a] < rep.query_rarity[b];
    });
    for (std::size_t i = 1; i < order.size(); ++i)
        REQUIRE(rep.query_percentile[order[i - 1]] <= rep.query_percentile[order[i]]);
    for (double p : rep.query_percentile) {
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("rarity is translation invariant", "[geometry]") {
    const Matrix ref = random_matrix(90, 5, 77);
    const Matrix query = random_matrix(40, 5, 88);
    const auto base = rarity(ref, query, {.k = 9});

    Matrix ref_shift = ref, query_shift = query;
    const std::vector<double> shift{13.5, -2.0, 0.25, 100.0, -7.0};
    for (std::size_t r = 0; r < ref.rows; ++r)
        for (std::size_t c = 0; c < 5; ++c) ref_shift.at(r, c) += shift[c];
    for (std::size_t r = 0; r < query.rows; ++r)
        for (std::size_t c = 0; c < 5; ++c) query_shift.at(r, c) += shift[c];
    const auto moved = rarity(ref_shift, query_shift, {.k = 9});
    for (std::size_t i = 0; i < base.query_rarity.size(); ++i) {
        REQUIRE(moved.query_rarity[i] == Approx(base.query_rarity[i]).margin(1e-9));
        REQUIRE(moved.query_percentile[i] == Approx(base.query_percentile[i]).margin(1e-9));
    }
}

TEST_CASE("rarity is thread-count invariant", "[geometry]") {
    const Matrix ref = random_matrix(80, 4, 12);
    const Matrix query = random_matrix(30, 4, 13);
    const auto one = rarity(ref, query, {.k = 6}, 1);
    const auto four = rarity(ref, query, {.k = 6}, 4);
    REQUIRE(one.reference_rarity == four.reference_rarity);
    REQUIRE(one.query_rarity == four.query_rarity);
    REQUIRE(one.query_percentile == four.query_percentile);
}

TEST_CASE("rarity rejects bad configurations", "[geometry]") {
    const Matrix ref = mk({{0.0}, {1.0}, {2.0}});
    REQUIRE_THROWS_AS(rarity(ref, ref, {.k = 3}), ConfigError);   // k >= reference rows
    REQUIRE_THROWS_AS(rarity(ref, ref, {.k = 0}), ConfigError);
    REQUIRE_THROWS_AS(rarity(ref, mk({{0.0, 1.0}}), {.k = 1}), ValidationError);  // width
}

TEST_CASE("pooled SD and Cohen's d reproduce the reported group statistics", "[geometry]") {
    const GroupStats human{0.71, 0.227, 1377};
    const GroupStats ai{0.49, 0.274, 6885};
    REQUIRE(pooled_sd(human, ai) == Approx(0.267).margin(0.002));
    REQUIRE(cohens_d(human, ai) == Approx(0.824).margin(0.002));
}

TEST_CASE("Cohen's d guards a zero pooled SD", "[geometry]") {
    const GroupStats a{3.0, 0.0, 5};
    const GroupStats b{3.0, 0.0, 5};
    REQUIRE(cohens_d(a, b) == 0.0);
    REQUIRE_THROWS_AS(pooled_sd(GroupStats{1.0, 0.0, 1}, GroupStats{2.0, 0.0, 1}), ValidationError);
}

TEST_CASE("rank-sum AUC matches the pairwise oracle under ties", "[geometry]") {
    Rng rng(314);
    std::vector<double> pos(40), neg(60);
    for (auto& v : pos) v = static_cast<double>(rng.bounded(10));
    for (auto& v : neg) v = static_cast<double>(rng.bounded(10));
    double wins = 0.0;
    for (double p : pos)
        for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    const double oracle = wins / (40.0 * 60.0);
    REQUIRE(rank_auc(pos, neg) == Approx(oracle).margin(1e-12));
    const std::vector<double> one_pos{5.0}, one_neg{5.0};
    REQUIRE(rank_auc(one_pos, one_neg) == Approx(0.5));
}

TEST_CASE("rarity summary on an exhaustive toy corpus", "[geometry]") {
    RarityReport rep;
    rep.k = 1;
    rep.query_rarity = {3.0, 1.0, 2.0, 0.0};
    rep.query_percentile = {0.9, 0.3, 0.8, 0.1};
    const std::vector<std::string> labels{"human", "gpt", "human", "gpt"};
    const std::vector<std::string> prompts{"p1", "p1", "p2", "p2"};
    const auto sum = rarity_summary(rep, labels, prompts, "human", 0.5);

    REQUIRE(sum.n_complete_prompts == 2);
    REQUIRE(sum.rarest_rate == 1.0);
    REQUIRE(sum.auc == 1.0);
    REQUIRE(sum.human_mean_percentile == Approx(0.85));
    REQUIRE(sum.ai_mean_percentile == Approx(0.2));
    REQUIRE(sum.cohens_d > 0.0);
    REQUIRE(sum.tail_size == 2);
    REQUIRE(sum.per_source.size() == 2);
    const auto& gpt = sum.per_source[0];
    const auto& human = sum.per_source[1];
    REQUIRE(gpt.source == "gpt");
    REQUIRE(human.source == "human");
    REQUIRE(human.n == 2);
    REQUIRE(human.tail_count == 2);  // the two rarest stories are both human
    REQUIRE(gpt.tail_count == 0);
    REQUIRE(human.mean_rarity == Approx(2.5));
    REQUIRE(gpt.mean_rarity == Approx(0.5));
}

TEST_CASE("rarity summary tail counts sum to the tail size", "[geometry]") {
    Rng rng(2718);
    const std::size_t n = 90;
    RarityReport rep;
    std::vector<std::string> labels, prompts;
    for (std::size_t i = 0; i < n; ++i) {
        rep.query_rarity.push_back(rng.unit());
        rep.query_percentile.push_back(rng.unit());
        labels.push_back(i % 3 == 0 ? "human" : (i % 3 == 1 ? "gpt" : "claude"));
        prompts.push_back("p" + std::to_string(i / 3));
    }
    const auto sum = rarity_summary(rep, labels, prompts, "human", 0.10);
    REQUIRE(sum.tail_size == 9);
    std::size_t total = 0;
    for (const auto& s : sum.per_source) total += s.tail_count;
    REQUIRE(total == sum.tail_size);
    REQUIRE(sum.n_complete_prompts == 30);
}

TEST_CASE("rarity summary with identical stories degenerates safely", "[geometry]") {
    RarityReport rep;
    rep.query_rarity = {5.0, 5.0, 5.0, 5.0};
    rep.query_percentile = {0.5, 0.5, 0.5, 0.5};
    const std::vector<std::string> labels{"human", "gpt", "human", "gpt"};
    const std::vector<std::string> prompts{"p1", "p1", "p2", "p2"};
    const auto sum = rarity_summary(rep, labels, prompts);
    REQUIRE(sum.cohens_d == 0.0);
    REQUIRE(sum.auc == Approx(0.5));
    REQUIRE(sum.rarest_rate == 0.0);  // ties are never a strict maximum
}

TEST_CASE("rarest rate only counts complete prompts and strict maxima", "[geometry]") {
    RarityReport rep;
    rep.query_rarity = {3.0, 1.0, 2.0, 2.0, 9.0};
    rep.query_percentile = {0.9, 0.1, 0.5, 0.5, 1.0};
    //            p1 human rarest | p2 human ties AI | p3 missing gpt
    const std::vector<std::string> labels{"human", "gpt", "human", "gpt", "human"};
    const std::vector<std::string> prompts{"p1", "p1", "p2", "p2", "p3"};
    const auto sum = rarity_summary(rep, labels, prompts);
    REQUIRE(sum.n_complete_prompts == 2);
    REQUIRE(sum.rarest_rate == Approx(0.5));
}

TEST_CASE("rarity summary input validation", "[geometry]") {
    RarityReport rep;
    rep.query_rarity = {1.0, 2.0};
    rep.query_percentile = {0.1, 0.2};
    const std::vector<std::string> labels{"human", "gpt"};
    const std::vector<std::string> prompts{"p", "p"};
    REQUIRE_THROWS_AS(rarity_summary(rep, {"human"}, prompts), ValidationError);
    REQUIRE_THROWS_AS(rarity_summary(rep, labels, {"p"}), ValidationError);
    REQUIRE_THROWS_AS(rarity_summary(rep, {"gpt", "gpt"}, prompts), ValidationError);   // no human
    REQUIRE_THROWS_AS(rarity_summary(rep, {"human", "human"}, prompts), ValidationError);  // no AI
    REQUIRE_THROWS_AS(rarity_summary(rep, labels, prompts, "human", 0.0), ConfigError);
    REQUIRE_THROWS_AS(rarity_summary(rep, labels, prompts, "human", 1.5), ConfigError);
    RarityReport empty;
    REQUIRE_THROWS_AS(rarity_summary(empty, {}, {}), ValidationError);
}

TEST_CASE("geometry CSV exports", "[geometry]") {
    const Matrix Z = mk({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
    const std::vector<std::string> labels{"a", "b", "c"};
    const auto rep = centroid_stats(Z, labels);
    const std::string csv = centroid_csv(rep);
    REQUIRE(csv.rfind("source,a,b,c\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);

    const Matrix big = random_matrix(30, 3, 2);
    std::vector<std::string> big_labels;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < 30; ++i) {
        big_labels.push_back(i % 2 == 0 ? "a" : "b");
        ids.push_back("s" + std::to_string(i));
    }
    const auto proj = lda_project(big, big_labels);
    const std::string coords = coords_csv(proj, ids, big_labels);
    REQUIRE(coords.rfind("story_id,source,x,y\n", 0) == 0);
    REQUIRE(std::count(coords.begin(), coords.end(), '\n') == 31);
    REQUIRE_THROWS_AS(coords_csv(proj, {"one"}, big_labels), ValidationError);

    const auto rar = rarity(big, big, {.k = 5});
    const std::string rcsv = rarity_csv(rar, ids, big_labels);
    REQUIRE(rcsv.rfind("story_id,source,rarity,percentile\n", 0) == 0);
    REQUIRE(std::count(rcsv.begin(), rcsv.end(), '\n') == 31);
    REQUIRE_THROWS_AS(rarity_csv(rar, {"one"}, big_labels), ValidationError);

    const auto sum = rarity_summary(rar, big_labels, ids, "a");
    const Json j = sum.to_json();
    REQUIRE(j["per_source"].size() == 2);
    REQUIRE(j["auc"].is_number());
}
