#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <thread>
#include <vector>

#include "otupred/error.hpp"
#include "otupred/eval.hpp"
#include "otupred/matrix.hpp"
#include "otupred/rng.hpp"

namespace otupred {

enum class SplitCriterion { Gini, Entropy };

inline const char* criterion_name(SplitCriterion c) {
    return c == SplitCriterion::Gini ? "gini" : "entropy";
}

namespace tree_detail {

// Node cost = node size times impurity, so parent cost minus child costs is
// the usual weighted impurity decrease. Natural log for entropy.
inline double cls_cost(double n, double c0, double c1, SplitCriterion crit) {
    if (n <= 0.0) return 0.0;
    if (crit == SplitCriterion::Gini) return n - (c0 * c0 + c1 * c1) / n;
    double cost = 0.0;
    if (c0 > 0.0) cost -= c0 * std::log(c0 / n);
    if (c1 > 0.0) cost -= c1 * std::log(c1 / n);
    return cost;
}

// Sum of squared deviations from the mean, via sums of y and y^2.
inline double sse_cost(double n, double s, double s2) {
    if (n <= 0.0) return 0.0;
    return s2 - s * s / n;
}

struct BestSplit {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double cost = std::numeric_limits<double>::infinity();
};

// Candidate thresholds are midpoints between consecutive distinct sorted
// values; rows with value <= threshold go left. Ties in cost keep the first
// candidate scanned, so the lowest feature index and lowest threshold win.
template <typename CostAt>
inline void scan_feature(const Matrix& X, const std::vector<std::size_t>& rows,
                         std::size_t feature, int min_leaf, CostAt&& cost_at,
                         std::vector<std::size_t>& order, BestSplit& best) {
    const std::size_t m = rows.size();
    order = rows;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = X(a, feature), vb = X(b, feature);
        if (va != vb) return va < vb;
        return a < b;  // total order keeps accumulation deterministic
    });
    for (std::size_t i = static_cast<std::size_t>(min_leaf); i + min_leaf <= m; ++i) {
        // cost_at must be called once per prefix position in ascending order.
        const double lo = X(order[i - 1], feature);
        const double hi = X(order[i], feature);
        const double cost = cost_at(order, i, lo != hi);
        if (lo == hi) continue;
        if (cost < best.cost) {
            best.found = true;
            best.feature = feature;
            best.threshold = lo + 0.5 * (hi - lo);
            best.cost = cost;
        }
    }
}

}  // namespace tree_detail

struct TreeParams {
    int max_depth = std::numeric_limits<int>::max();
    int min_samples_split = 2;
    int min_samples_leaf = 1;
    SplitCriterion criterion = SplitCriterion::Gini;
    std::size_t features_per_split = 0;  // 0 means all features
    std::uint64_t seed = 0;
};

struct ClsNode {
    bool is_leaf = true;
    std::size_t feature = 0;
    double threshold = 0.0;
    std::array<double, 2> proba = {0.5, 0.5};
    std::size_t n = 0;
    std::unique_ptr<ClsNode> left, right;
};

// CART binary classifier. Greedy best-split with gini or entropy; leaves
// carry Laplace-smoothed class probabilities (count+1)/(n+2).
class DecisionTree {
public:
    void fit(const Matrix& X, const std::vector<int>& y, const TreeParams& params,
             Rng* external_rng = nullptr) {
        if (X.rows() == 0) throw UsageError("DecisionTree: empty input");
        if (y.size() != X.rows()) throw UsageError("DecisionTree: label length mismatch");
        params_ = params;
        p_ = X.cols();
        importance_.assign(p_, 0.0);
        Rng own_rng(params.seed);
        Rng* rng = external_rng ? external_rng : &own_rng;
        std::vector<std::size_t> rows(X.rows());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        root_ = grow(X, y, rows, 0, *rng);
    }

    void fit_on_rows(const Matrix& X, const std::vector<int>& y,
                     const std::vector<std::size_t>& rows, const TreeParams& params,
                     Rng& rng) {
        if (rows.empty()) throw UsageError("DecisionTree: empty row set");
        params_ = params;
        p_ = X.cols();
        importance_.assign(p_, 0.0);
        std::vector<std::size_t> r = rows;
        root_ = grow(X, y, r, 0, rng);
    }

    std::array<double, 2> predict_proba(const double* row) const {
        const ClsNode* node = root_.get();
        while (!node->is_leaf)
            node = (row[node->feature] <= node->threshold) ? node->left.get()
                                                           : node->right.get();
        return node->proba;
    }

    int predict(const double* row) const {
        const auto pr = predict_proba(row);
        return pr[1] > pr[0] ? 1 : 0;
    }

    const ClsNode* root() const { return root_.get(); }
    const std::vector<double>& feature_importance() const { return importance_; }

private:
    std::unique_ptr<ClsNode> grow(const Matrix& X, const std::vector<int>& y,
                                  std::vector<std::size_t>& rows, int depth, Rng& rng) {
        auto node = std::make_unique<ClsNode>();
        node->n = rows.size();
        double c1 = 0.0;
        for (std::size_t r : rows) c1 += y[r];
        const double m = static_cast<double>(rows.size());
        const double c0 = m - c1;
        node->proba = {(c0 + 1.0) / (m + 2.0), (c1 + 1.0) / (m + 2.0)};
        const double parent_cost = tree_detail::cls_cost(m, c0, c1, params_.criterion);
        const bool splittable =
            depth < params_.max_depth &&
            rows.size() >= static_cast<std::size_t>(params_.min_samples_split) &&
            c0 > 0.0 && c1 > 0.0;
        if (!splittable) return node;

        std::vector<std::size_t> features;
        if (params_.features_per_split > 0 && params_.features_per_split < p_) {
            features = rng.sample_indices(p_, params_.features_per_split);
            std::sort(features.begin(), features.end());
        } else {
            features.resize(p_);
            for (std::size_t j = 0; j < p_; ++j) features[j] = j;
        }

        tree_detail::BestSplit best;
        std::vector<std::size_t> order;
        for (std::size_t f : features) {
            double left1 = 0.0;
            std::size_t last_i = 0;
            auto cost_at = [&](const std::vector<std::size_t>& ord, std::size_t i,
                               bool) {
                for (std::size_t t = last_i; t < i; ++t) left1 += y[ord[t]];
                last_i = i;
                const double nl = static_cast<double>(i);
                const double nr = m - nl;
                const double l1 = left1, l0 = nl - left1;
                const double r1 = c1 - l1, r0 = nr - r1;
                return tree_detail::cls_cost(nl, l0, l1, params_.criterion) +
                       tree_detail::cls_cost(nr, r0, r1, params_.criterion);
            };
            tree_detail::scan_feature(X, rows, f, params_.min_samples_leaf, cost_at,
                                      order, best);
        }
        if (!best.found || !(best.cost < parent_cost)) return node;

        importance_[best.feature] += parent_cost - best.cost;
        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows)
            (X(r, best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
        node->is_leaf = false;
        node->feature = best.feature;
        node->threshold = best.threshold;
        node->left = grow(X, y, left_rows, depth + 1, rng);
        node->right = grow(X, y, right_rows, depth + 1, rng);
        return node;
    }

    TreeParams params_;
    std::size_t p_ = 0;
    std::unique_ptr<ClsNode> root_;
    std::vector<double> importance_;
};

inline DecisionTree fit_decision_tree(const Matrix& X, const std::vector<int>& y,
                                      const TreeParams& params) {
    DecisionTree t;
    t.fit(X, y, params);
    return t;
}

struct ForestConfig {
    int n_estimators = 100;
    int min_samples_split = 8;
    int min_samples_leaf = 3;
    int max_depth = 80;
    SplitCriterion criterion = SplitCriterion::Gini;
    std::size_t features_per_split = 0;  // 0 means ceil(sqrt(p)) at fit time
    std::uint64_t seed = 0;
    bool bootstrap = true;  // test hook; the pipeline always bags
};

// Bagged CART ensemble. Votes are summed per-tree class probabilities.
// Per-tree RNG streams are derived from (seed, tree index), so a forest is
// reproducible no matter how trees are scheduled.
class RandomForest {
public:
    void fit(const Matrix& X, const std::vector<int>& y, const ForestConfig& config) {
        if (X.rows() < 2) throw UsageError("RandomForest: need at least 2 samples");
        if (y.size() != X.rows()) throw UsageError("RandomForest: label length mismatch");
        if (config.n_estimators < 1) throw UsageError("RandomForest: n_estimators >= 1");
        config_ = config;
        p_ = X.cols();
        const std::size_t fps =
            config.features_per_split > 0
                ? std::min<std::size_t>(config.features_per_split, p_)
                : static_cast<std::size_t>(
                      std::ceil(std::sqrt(static_cast<double>(p_))));
        TreeParams tp;
        tp.max_depth = config.max_depth;
        tp.min_samples_split = config.min_samples_split;
        tp.min_samples_leaf = config.min_samples_leaf;
        tp.criterion = config.criterion;
        tp.features_per_split = fps;
        trees_.clear();
        trees_.resize(static_cast<std::size_t>(config.n_estimators));
        const std::size_t n = X.rows();
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            Rng rng(derive_seed(config.seed, t));
            std::vector<std::size_t> rows;
            rows.reserve(n);
            if (config.bootstrap) {
                for (std::size_t i = 0; i < n; ++i)
                    rows.push_back(static_cast<std::size_t>(rng.uniform_below(n)));
            } else {
                for (std::size_t i = 0; i < n; ++i) rows.push_back(i);
            }
            trees_[t].fit_on_rows(X, y, rows, tp, rng);
        }
    }

    std::array<double, 2> vote(const double* row) const {
        std::array<double, 2> sum = {0.0, 0.0};
        for (const auto& t : trees_) {
            const auto pr = t.predict_proba(row);
            sum[0] += pr[0];
            sum[1] += pr[1];
        }
        return sum;
    }

    std::array<double, 2> predict_proba(const double* row) const {
        auto s = vote(row);
        const double total = s[0] + s[1];
        return {s[0] / total, s[1] / total};
    }

    int predict(const double* row) const {
        const auto s = vote(row);
        return s[1] > s[0] ? 1 : 0;
    }

    std::vector<int> predict(const Matrix& X) const {
        std::vector<int> out(X.rows());
        for (std::size_t i = 0; i < X.rows(); ++i) out[i] = predict(X.row_ptr(i));
        return out;
    }

    std::vector<double> feature_importance() const {
        std::vector<double> imp(p_, 0.0);
        for (const auto& t : trees_)
            for (std::size_t j = 0; j < p_; ++j) imp[j] += t.feature_importance()[j];
        return imp;
    }

    const std::vector<DecisionTree>& trees() const { return trees_; }

private:
    ForestConfig config_;
    std::size_t p_ = 0;
    std::vector<DecisionTree> trees_;
};

inline RandomForest fit_random_forest(const Matrix& X, const std::vector<int>& y,
                                      const ForestConfig& config) {
    RandomForest f;
    f.fit(X, y, config);
    return f;
}

// Stratified fold assignment: per class, shuffle then deal round-robin.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int folds,
                                         std::uint64_t seed) {
    if (folds < 2) throw UsageError("stratified_folds: folds must be >= 2");
    std::vector<int> fold_of(labels.size(), -1);
    std::vector<int> classes = labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == classes[c]) members.push_back(i);
        Rng rng(derive_seed(seed, c));
        rng.shuffle(members);
        for (std::size_t i = 0; i < members.size(); ++i)
            fold_of[members[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }
    return fold_of;
}

struct GridSearchResult {
    ForestConfig best;
    std::size_t best_index = 0;
    std::vector<ForestConfig> configs;
    std::vector<double> mean_scores;
    int folds = 0;
};

// The full hyperparameter grid, nested in canonical order.
inline std::vector<ForestConfig> default_forest_grid() {
    std::vector<ForestConfig> grid;
    for (int ne : {100, 200, 500})
        for (int mss : {8, 10})
            for (int msl : {3, 4, 5})
                for (int md : {80, 90})
                    for (SplitCriterion crit :
                         {SplitCriterion::Gini, SplitCriterion::Entropy}) {
                        ForestConfig c;
                        c.n_estimators = ne;
                        c.min_samples_split = mss;
                        c.min_samples_leaf = msl;
                        c.max_depth = md;
                        c.criterion = crit;
                        grid.push_back(c);
                    }
    return grid;
}

// Exhaustive grid evaluation by stratified k-fold mean weighted F1. Folds
// whose training part lacks a class are skipped with a warning. Ties keep
// the earliest grid entry.
inline GridSearchResult grid_search_cv(const Matrix& X, const std::vector<int>& y,
                                       const std::vector<ForestConfig>& grid,
                                       int folds = 10, std::uint64_t seed = 0,
                                       unsigned jobs = 1) {
    if (grid.empty()) throw UsageError("grid_search_cv: empty grid");
    const std::vector<int> fold_of = stratified_folds(y, folds, derive_seed(seed, 0));
    GridSearchResult result;
    result.configs = grid;
    result.folds = folds;
    result.mean_scores.assign(grid.size(), 0.0);

    auto eval_config = [&](std::size_t ci) {
        double sum = 0.0;
        int used = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<std::size_t> tr, va;
            for (std::size_t i = 0; i < y.size(); ++i)
                (fold_of[i] == f ? va : tr).push_back(i);
            if (va.empty()) continue;
            bool has0 = false, has1 = false;
            for (std::size_t i : tr) (y[i] ? has1 : has0) = true;
            if (!has0 || !has1) {
                warn("grid_search_cv: fold " + std::to_string(f) +
                     " lacks a class in training, skipped");
                continue;
            }
            Matrix Xtr = X.take_rows(tr);
            std::vector<int> ytr, yva;
            for (std::size_t i : tr) ytr.push_back(y[i]);
            for (std::size_t i : va) yva.push_back(y[i]);
            ForestConfig cfg = grid[ci];
            cfg.seed = derive_seed(seed, ci + 1, static_cast<std::uint64_t>(f));
            RandomForest forest;
            forest.fit(Xtr, ytr, cfg);
            std::vector<int> pred;
            pred.reserve(va.size());
            for (std::size_t i : va) pred.push_back(forest.predict(X.row_ptr(i)));
            sum += weighted_f1(yva, pred).weighted;
            ++used;
        }
        if (used == 0)
            throw DataError("grid_search_cv: every fold skipped for a config");
        result.mean_scores[ci] = sum / static_cast<double>(used);
    };

    if (jobs <= 1) {
        for (std::size_t ci = 0; ci < grid.size(); ++ci) eval_config(ci);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> threads;
        const unsigned k = std::min<unsigned>(jobs, static_cast<unsigned>(grid.size()));
        for (unsigned t = 0; t < k; ++t)
            threads.emplace_back([&] {
                for (;;) {
                    const std::size_t ci = next.fetch_add(1);
                    if (ci >= grid.size()) return;
                    eval_config(ci);
                }
            });
        for (auto& t : threads) t.join();
    }

    std::size_t best = 0;
    for (std::size_t ci = 1; ci < grid.size(); ++ci)
        if (result.mean_scores[ci] > result.mean_scores[best]) best = ci;
    result.best_index = best;
    result.best = grid[best];
    return result;
}

// L2-regularized logistic regression by gradient descent with backtracking;
// the intercept is not penalized.
class LogisticRegression {
public:
    std::vector<double> weights;
    double intercept = 0.0;

    void fit(const Matrix& X, const std::vector<int>& y, double l2 = 1.0,
             int max_iter = 10000, double tol = 1e-6) {
        if (X.rows() < 2) throw UsageError("LogisticRegression: need >= 2 samples");
        const std::size_t n = X.rows(), p = X.cols();
        weights.assign(p, 0.0);
        intercept = 0.0;
        auto softplus = [](double z) {
            return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        };
        auto loss_at = [&](const std::vector<double>& w, double b) {
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double z = b;
                for (std::size_t j = 0; j < p; ++j) z += w[j] * X(i, j);
                loss += softplus(z) - static_cast<double>(y[i]) * z;
            }
            for (std::size_t j = 0; j < p; ++j) loss += 0.5 * l2 * w[j] * w[j];
            return loss;
        };
        double step = 1.0;
        double loss = loss_at(weights, intercept);
        if (!std::isfinite(loss)) throw NumericError("LogisticRegression: non-finite loss");
        std::vector<double> grad(p, 0.0), trial_w(p, 0.0);
        for (int iter = 0; iter < max_iter; ++iter) {
            std::fill(grad.begin(), grad.end(), 0.0);
            double grad_b = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double z = intercept;
                for (std::size_t j = 0; j < p; ++j) z += weights[j] * X(i, j);
                const double s = 1.0 / (1.0 + std::exp(-z));
                const double d = s - static_cast<double>(y[i]);
                grad_b += d;
                for (std::size_t j = 0; j < p; ++j) grad[j] += d * X(i, j);
            }
            for (std::size_t j = 0; j < p; ++j) grad[j] += l2 * weights[j];
            double gnorm2 = grad_b * grad_b;
            for (std::size_t j = 0; j < p; ++j) gnorm2 += grad[j] * grad[j];
            if (std::sqrt(gnorm2) <= tol) break;
            step *= 2.0;
            for (;;) {
                for (std::size_t j = 0; j < p; ++j)
                    trial_w[j] = weights[j] - step * grad[j];
                const double trial_b = intercept - step * grad_b;
                const double trial_loss = loss_at(trial_w, trial_b);
                if (!std::isfinite(trial_loss))
                    throw NumericError("LogisticRegression: non-finite loss");
                if (trial_loss <= loss - 0.25 * step * gnorm2) {
                    weights = trial_w;
                    intercept = trial_b;
                    loss = trial_loss;
                    break;
                }
                step *= 0.5;
                if (step < 1e-18) return;  // stalled at numerical floor
            }
        }
    }

    double decision(const double* row) const {
        double z = intercept;
        for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * row[j];
        return z;
    }
    int predict(const double* row) const { return decision(row) >= 0.0 ? 1 : 0; }
};

inline LogisticRegression fit_logistic_regression(const Matrix& X,
                                                  const std::vector<int>& y,
                                                  double l2 = 1.0) {
    LogisticRegression lr;
    lr.fit(X, y, l2);
    return lr;
}

struct RegTreeParams {
    int max_depth = std::numeric_limits<int>::max();
    int min_samples_split = 2;
    int min_samples_leaf = 1;
};

struct RegNode {
    bool is_leaf = true;
    std::size_t feature = 0;
    double threshold = 0.0;
    double value = 0.0;   // mean target of covered rows
    std::size_t n = 0;
    std::unique_ptr<RegNode> left, right;
};

// CART regression tree with sum-of-squared-error splits. Every node keeps
// its coverage count and mean, which downstream exports annotate.
class RegressionTree {
public:
    void fit(const Matrix& X, const std::vector<double>& y, const RegTreeParams& params) {
        if (X.rows() == 0) throw UsageError("RegressionTree: empty input");
        if (y.size() != X.rows()) throw UsageError("RegressionTree: target length mismatch");
        params_ = params;
        p_ = X.cols();
        importance_.assign(p_, 0.0);
        std::vector<std::size_t> rows(X.rows());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        root_ = grow(X, y, rows, 0);
    }

    double predict(const double* row) const { return leaf_for(row)->value; }

    RegNode* leaf_for(const double* row) const {
        RegNode* node = root_.get();
        while (!node->is_leaf)
            node = (row[node->feature] <= node->threshold) ? node->left.get()
                                                           : node->right.get();
        return node;
    }

    const RegNode* root() const { return root_.get(); }
    RegNode* mutable_root() { return root_.get(); }
    const std::vector<double>& feature_importance() const { return importance_; }

private:
    std::unique_ptr<RegNode> grow(const Matrix& X, const std::vector<double>& y,
                                  std::vector<std::size_t>& rows, int depth) {
        auto node = std::make_unique<RegNode>();
        node->n = rows.size();
        double s = 0.0, s2 = 0.0;
        for (std::size_t r : rows) {
            s += y[r];
            s2 += y[r] * y[r];
        }
        const double m = static_cast<double>(rows.size());
        node->value = s / m;
        const double parent_cost = tree_detail::sse_cost(m, s, s2);
        const bool splittable =
            depth < params_.max_depth &&
            rows.size() >= static_cast<std::size_t>(params_.min_samples_split) &&
            parent_cost > 0.0;
        if (!splittable) return node;

        tree_detail::BestSplit best;
        std::vector<std::size_t> order;
        for (std::size_t f = 0; f < p_; ++f) {
            double ls = 0.0, ls2 = 0.0;
            std::size_t last_i = 0;
            auto cost_at = [&](const std::vector<std::size_t>& ord, std::size_t i,
                               bool) {
                for (std::size_t t = last_i; t < i; ++t) {
                    ls += y[ord[t]];
                    ls2 += y[ord[t]] * y[ord[t]];
                }
                last_i = i;
                const double nl = static_cast<double>(i);
                return tree_detail::sse_cost(nl, ls, ls2) +
                       tree_detail::sse_cost(m - nl, s - ls, s2 - ls2);
            };
            tree_detail::scan_feature(X, rows, f, params_.min_samples_leaf, cost_at,
                                      order, best);
        }
        if (!best.found || !(best.cost < parent_cost)) return node;

        importance_[best.feature] += parent_cost - best.cost;
        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows)
            (X(r, best.feature) <= best.threshold ? left_rows : right_rows).push_back(r);
        node->is_leaf = false;
        node->feature = best.feature;
        node->threshold = best.threshold;
        node->left = grow(X, y, left_rows, depth + 1);
        node->right = grow(X, y, right_rows, depth + 1);
        return node;
    }

    RegTreeParams params_;
    std::size_t p_ = 0;
    std::unique_ptr<RegNode> root_;
    std::vector<double> importance_;
};

// Stagewise logistic-loss boosting on regression trees. Leaf values are
// single Newton steps over the leaf's residuals.
class GradientBoosting {
public:
    void fit(const Matrix& X, const std::vector<int>& y, int rounds = 100,
             int depth = 3, double rate = 0.1) {
        const std::size_t n = X.rows(), p = X.cols();
        if (n == 0) throw UsageError("GradientBoosting: empty input");
        rate_ = rate;
        importance_.assign(p, 0.0);
        trees_.clear();
        double mean = 0.0;
        for (int v : y) mean += v;
        mean /= static_cast<double>(n);
        mean = std::min(1.0 - 1e-12, std::max(1e-12, mean));
        base_ = std::log(mean / (1.0 - mean));
        std::vector<double> f(n, base_);
        RegTreeParams tp;
        tp.max_depth = depth;
        for (int round = 0; round < rounds; ++round) {
            std::vector<double> residual(n), hess(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double s = 1.0 / (1.0 + std::exp(-f[i]));
                residual[i] = static_cast<double>(y[i]) - s;
                hess[i] = s * (1.0 - s);
            }
            RegressionTree tree;
            tree.fit(X, residual, tp);
            // Replace leaf means by Newton steps sum(r)/sum(h) over leaf rows.
            std::vector<std::pair<RegNode*, std::pair<double, double>>> acc;
            for (std::size_t i = 0; i < n; ++i) {
                RegNode* leaf = tree.leaf_for(X.row_ptr(i));
                bool found = false;
                for (auto& [node, sums] : acc)
                    if (node == leaf) {
                        sums.first += residual[i];
                        sums.second += hess[i];
                        found = true;
                        break;
                    }
                if (!found) acc.push_back({leaf, {residual[i], hess[i]}});
            }
            for (auto& [node, sums] : acc)
                node->value = sums.first / std::max(sums.second, 1e-12);
            for (std::size_t j = 0; j < p; ++j)
                importance_[j] += tree.feature_importance()[j];
            for (std::size_t i = 0; i < n; ++i)
                f[i] += rate_ * tree.predict(X.row_ptr(i));
            trees_.push_back(std::move(tree));
        }
    }

    double decision(const double* row) const {
        double f = base_;
        for (const auto& t : trees_) f += rate_ * t.predict(row);
        return f;
    }
    int predict(const double* row) const { return decision(row) >= 0.0 ? 1 : 0; }
    const std::vector<double>& feature_importance() const { return importance_; }
    std::size_t rounds() const { return trees_.size(); }

private:
    double base_ = 0.0;
    double rate_ = 0.1;
    std::vector<RegressionTree> trees_;
    std::vector<double> importance_;
};

inline GradientBoosting fit_gradient_boosting(const Matrix& X, const std::vector<int>& y,
                                              int rounds = 100, int depth = 3,
                                              double rate = 0.1) {
    GradientBoosting gb;
    gb.fit(X, y, rounds, depth, rate);
    return gb;
}

}  // namespace otupred
