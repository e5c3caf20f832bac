// Classical learners built from first principles: decision tree, random
// forest with grid-search CV, logistic regression, gradient boosting.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "otupred/eval.hpp"
#include "otupred/learners.hpp"
#include "support.hpp"

using namespace otupred;
using testsupport::make_matrix;

namespace {

// Brute-force best split: every (feature, midpoint threshold) pair, weighted
// Gini/entropy cost, ties to the lowest feature then lowest threshold.
struct BruteSplit {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double cost = std::numeric_limits<double>::infinity();
};

double impurity(double n, double c0, double c1, SplitCriterion crit) {
    if (n <= 0.0) return 0.0;
    const double p0 = c0 / n, p1 = c1 / n;
    if (crit == SplitCriterion::Gini) return 1.0 - p0 * p0 - p1 * p1;
    double h = 0.0;
    if (p0 > 0.0) h -= p0 * std::log(p0);
    if (p1 > 0.0) h -= p1 * std::log(p1);
    return h;
}

BruteSplit brute_force_split(const Matrix& X, const std::vector<int>& y,
                             SplitCriterion crit, int min_leaf) {
    BruteSplit best;
    const std::size_t n = X.rows();
    for (std::size_t f = 0; f < X.cols(); ++f) {
        std::vector<double> values;
        for (std::size_t i = 0; i < n; ++i) values.push_back(X(i, f));
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (std::size_t v = 0; v + 1 < values.size(); ++v) {
            const double thr = 0.5 * (values[v] + values[v + 1]);
            double l0 = 0, l1 = 0, r0 = 0, r1 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const bool left = X(i, f) <= thr;
                if (left)
                    (y[i] ? l1 : l0) += 1.0;
                else
                    (y[i] ? r1 : r0) += 1.0;
            }
            const double nl = l0 + l1, nr = r0 + r1;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double cost =
                nl * impurity(nl, l0, l1, crit) + nr * impurity(nr, r0, r1, crit);
            if (cost < best.cost - 1e-12) {
                best.found = true;
                best.feature = f;
                best.threshold = thr;
                best.cost = cost;
            }
        }
    }
    return best;
}

}  // namespace

TEST_CASE("decision tree: pure input collapses to a single leaf") {
    const auto X = make_matrix(4, 1, {1, 2, 3, 4});
    const std::vector<int> y = {1, 1, 1, 1};
    const auto tree = fit_decision_tree(X, y, {});
    REQUIRE(tree.root()->is_leaf);
    REQUIRE(tree.predict(X.row_ptr(0)) == 1);
    REQUIRE(tree.predict_proba(X.row_ptr(2))[1] > 0.5);
}

TEST_CASE("decision tree: separable 1D data splits at the midpoint") {
    const auto X = make_matrix(4, 1, {0, 1, 2, 3});
    const std::vector<int> y = {0, 0, 1, 1};
    const auto tree = fit_decision_tree(X, y, {});
    REQUIRE_FALSE(tree.root()->is_leaf);
    REQUIRE(tree.root()->feature == 0);
    REQUIRE(tree.root()->threshold == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("decision tree: root split matches brute force on random data") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 8, p = 3;
        Matrix X(n, p);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(rng.uniform_below(2));
            for (std::size_t j = 0; j < p; ++j)
                X(i, j) = static_cast<double>(rng.uniform_int(0, 6));
        }
        bool mixed = false;
        for (std::size_t i = 1; i < n; ++i) mixed = mixed || y[i] != y[0];
        if (!mixed) y[0] = 1 - y[0];

        for (SplitCriterion crit : {SplitCriterion::Gini, SplitCriterion::Entropy}) {
            const auto oracle = brute_force_split(X, y, crit, 1);
            TreeParams params;
            params.criterion = crit;
            params.max_depth = 1;
            const auto tree = fit_decision_tree(X, y, params);
            if (!oracle.found) {
                REQUIRE(tree.root()->is_leaf);
                continue;
            }
            REQUIRE_FALSE(tree.root()->is_leaf);
            REQUIRE(tree.root()->feature == oracle.feature);
            REQUIRE(tree.root()->threshold == Catch::Approx(oracle.threshold).margin(1e-12));
        }
    }
}

TEST_CASE("decision tree: min_samples_leaf is honored") {
    const auto X = make_matrix(6, 1, {0, 1, 2, 3, 4, 5});
    const std::vector<int> y = {0, 1, 0, 1, 0, 1};
    TreeParams params;
    params.min_samples_leaf = 3;
    const auto tree = fit_decision_tree(X, y, params);
    // Any split of 6 rows into sides of >= 3 each resolves to 3/3.
    if (!tree.root()->is_leaf) {
        REQUIRE(tree.root()->left->n >= 3);
        REQUIRE(tree.root()->right->n >= 3);
    }
}

TEST_CASE("random forest: separable data reaches perfect training score") {
    const std::size_t n = 30;
    Matrix X(n, 2);
    std::vector<int> y(n);
    Rng rng(5);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        X(i, 0) = y[i] ? 5.0 + rng.uniform() : rng.uniform();
        X(i, 1) = rng.uniform();
    }
    for (int ne : {1, 10, 50}) {
        ForestConfig cfg;
        cfg.n_estimators = ne;
        cfg.min_samples_split = 2;
        cfg.min_samples_leaf = 1;
        cfg.seed = 3;
        const auto forest = fit_random_forest(X, y, cfg);
        const auto pred = forest.predict(X);
        REQUIRE(weighted_f1(y, pred).weighted == 1.0);
    }
}

TEST_CASE("random forest: one tree without bagging equals the plain tree") {
    Rng rng(8);
    const std::size_t n = 20, p = 3;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
    }
    ForestConfig cfg;
    cfg.n_estimators = 1;
    cfg.bootstrap = false;
    cfg.features_per_split = p;
    cfg.min_samples_split = 2;
    cfg.min_samples_leaf = 1;
    cfg.max_depth = 50;
    const auto forest = fit_random_forest(X, y, cfg);

    TreeParams tp;
    tp.min_samples_split = 2;
    tp.min_samples_leaf = 1;
    tp.max_depth = 50;
    tp.features_per_split = p;
    const auto tree = fit_decision_tree(X, y, tp);
    for (std::size_t i = 0; i < n; ++i)
        REQUIRE(forest.predict(X.row_ptr(i)) == tree.predict(X.row_ptr(i)));
}

TEST_CASE("random forest: deterministic for a fixed seed") {
    Rng rng(12);
    const std::size_t n = 24, p = 4;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
    }
    ForestConfig cfg;
    cfg.n_estimators = 15;
    cfg.seed = 31;
    cfg.min_samples_split = 2;
    cfg.min_samples_leaf = 1;
    const auto a = fit_random_forest(X, y, cfg).predict(X);
    const auto b = fit_random_forest(X, y, cfg).predict(X);
    REQUIRE(a == b);
}

TEST_CASE("grid search: the default grid enumerates all 72 combinations") {
    const auto grid = default_forest_grid();
    REQUIRE(grid.size() == 72);
    // Spot-check the corners of the nesting order.
    REQUIRE(grid.front().n_estimators == 100);
    REQUIRE(grid.front().min_samples_split == 8);
    REQUIRE(grid.front().min_samples_leaf == 3);
    REQUIRE(grid.front().max_depth == 80);
    REQUIRE(grid.front().criterion == SplitCriterion::Gini);
    REQUIRE(grid.back().n_estimators == 500);
    REQUIRE(grid.back().min_samples_split == 10);
    REQUIRE(grid.back().min_samples_leaf == 5);
    REQUIRE(grid.back().max_depth == 90);
    REQUIRE(grid.back().criterion == SplitCriterion::Entropy);
}

TEST_CASE("grid search: a single config is returned as best") {
    Rng rng(17);
    const std::size_t n = 30;
    Matrix X(n, 2);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        X(i, 0) = y[i] + 0.1 * rng.uniform();
        X(i, 1) = rng.uniform();
    }
    ForestConfig only;
    only.n_estimators = 7;
    only.min_samples_split = 2;
    only.min_samples_leaf = 1;
    const auto res = grid_search_cv(X, y, {only}, 3, 99);
    REQUIRE(res.best_index == 0);
    REQUIRE(res.best.n_estimators == 7);
    REQUIRE(res.mean_scores.size() == 1);
    REQUIRE(res.folds == 3);
}

TEST_CASE("grid search: a dominant config wins") {
    // Label equals a threshold on feature 0; a depth-1 stump with one tree
    // cannot match a deeper forest on the noisy copy of the data.
    Rng rng(23);
    const std::size_t n = 60;
    Matrix X(n, 3);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(), b = rng.uniform();
        y[i] = (a > 0.5) == (b > 0.5) ? 1 : 0;  // XOR needs depth 2
        X(i, 0) = a;
        X(i, 1) = b;
        X(i, 2) = rng.uniform();
    }
    ForestConfig weak;
    weak.n_estimators = 1;
    weak.max_depth = 1;
    weak.features_per_split = 1;
    ForestConfig strong;
    strong.n_estimators = 40;
    strong.max_depth = 10;
    strong.min_samples_split = 2;
    strong.min_samples_leaf = 1;
    strong.features_per_split = 3;
    const auto res = grid_search_cv(X, y, {weak, strong}, 5, 7);
    REQUIRE(res.best_index == 1);
    REQUIRE(res.mean_scores[1] > res.mean_scores[0]);
}

TEST_CASE("logistic regression: separable data recovers the direction") {
    const auto X = make_matrix(6, 1, {-3, -2, -1, 1, 2, 3});
    const std::vector<int> y = {0, 0, 0, 1, 1, 1};
    const auto lr = fit_logistic_regression(X, y, 1.0);
    REQUIRE(lr.weights[0] > 0.0);
    const auto flipped = fit_logistic_regression(X, {1, 1, 1, 0, 0, 0}, 1.0);
    REQUIRE(flipped.weights[0] < 0.0);
}

TEST_CASE("logistic regression: null data shrinks to near zero") {
    Rng rng(31);
    const std::size_t n = 1000, p = 3;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;  // balanced, independent of X
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
    }
    const auto lr = fit_logistic_regression(X, y, 1.0);
    REQUIRE(std::fabs(lr.intercept) < 0.6);
    for (double w : lr.weights) REQUIRE(std::fabs(w) < 0.9);  // ~4 sigma under the null
}

TEST_CASE("logistic regression: gradient norm at the optimum is tiny") {
    Rng rng(37);
    const std::size_t n = 40, p = 2;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.normal();
    }
    const double l2 = 1.0;
    const auto lr = fit_logistic_regression(X, y, l2);
    // Recompute the penalized-loss gradient at the returned point.
    std::vector<double> grad(p, 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = lr.intercept;
        for (std::size_t j = 0; j < p; ++j) z += lr.weights[j] * X(i, j);
        const double s = 1.0 / (1.0 + std::exp(-z));
        const double d = s - y[i];
        grad_b += d;
        for (std::size_t j = 0; j < p; ++j) grad[j] += d * X(i, j);
    }
    double norm = grad_b * grad_b;
    for (std::size_t j = 0; j < p; ++j) {
        grad[j] += l2 * lr.weights[j];
        norm += grad[j] * grad[j];
    }
    REQUIRE(std::sqrt(norm) <= 1e-5);  // stopping tolerance plus slack
}

TEST_CASE("gradient boosting: zero rounds is the constant log-odds model") {
    const auto X = make_matrix(4, 1, {0, 1, 2, 3});
    const std::vector<int> y = {0, 0, 0, 1};
    const auto gb = fit_gradient_boosting(X, y, 0);
    REQUIRE(gb.rounds() == 0);
    const double expected = std::log(0.25 / 0.75);
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(gb.decision(X.row_ptr(i)) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("gradient boosting: one full-rate round fits at least as well as a tree") {
    Rng rng(41);
    const std::size_t n = 30, p = 2;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
    }
    const auto gb = fit_gradient_boosting(X, y, 1, 8, 1.0);
    TreeParams tp;
    tp.max_depth = 8;
    const auto tree = fit_decision_tree(X, y, tp);
    int gb_err = 0, tree_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        gb_err += gb.predict(X.row_ptr(i)) != y[i];
        tree_err += tree.predict(X.row_ptr(i)) != y[i];
    }
    REQUIRE(gb_err <= tree_err);
}

TEST_CASE("gradient boosting: the planted feature gets the top importance") {
    Rng rng(43);
    const std::size_t n = 80, p = 4;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
        X(i, 2) = y[i] + 0.2 * rng.uniform();  // informative column
    }
    const auto gb = fit_gradient_boosting(X, y, 30, 3, 0.1);
    const auto& imp = gb.feature_importance();
    for (std::size_t j = 0; j < p; ++j)
        if (j != 2) REQUIRE(imp[2] > imp[j]);
}

TEST_CASE("impurity endpoints: balanced node has known gini and entropy") {
    // cls_cost returns n * impurity of the (c0, c1) composition.
    REQUIRE(tree_detail::cls_cost(2, 1, 1, SplitCriterion::Gini) / 2.0 ==
            Catch::Approx(0.5).margin(1e-15));
    REQUIRE(tree_detail::cls_cost(2, 1, 1, SplitCriterion::Entropy) / 2.0 ==
            Catch::Approx(std::log(2.0)).margin(1e-15));
    REQUIRE(tree_detail::cls_cost(5, 5, 0, SplitCriterion::Gini) == 0.0);
    REQUIRE(tree_detail::cls_cost(5, 0, 5, SplitCriterion::Entropy) == 0.0);
}

TEST_CASE("forest prediction: planted two-feature signal generalizes") {
    Rng rng(47);
    const std::size_t n = 200, p = 6;
    Matrix X(n, p);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
        if (y[i]) {
            X(i, 0) += 1.5;
            X(i, 1) += 1.5;
        }
    }
    SplitPlan plan;
    plan.seed = 4;
    const auto sp = split(n, y, plan);
    Matrix Xtr = X.take_rows(sp.train), Xte = X.take_rows(sp.test);
    std::vector<int> ytr, yte;
    for (std::size_t i : sp.train) ytr.push_back(y[i]);
    for (std::size_t i : sp.test) yte.push_back(y[i]);
    ForestConfig cfg;
    cfg.seed = 11;
    const auto forest = fit_random_forest(Xtr, ytr, cfg);
    const auto m = weighted_f1(yte, forest.predict(Xte));
    REQUIRE(m.weighted >= 0.9);
}
