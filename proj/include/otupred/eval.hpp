#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "otupred/error.hpp"
#include "otupred/matrix.hpp"
#include "otupred/rng.hpp"

namespace otupred {

struct SplitPlan {
    double test_fraction = 0.2;
    int folds = 10;
    bool stratified = true;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<std::size_t> train;   // ascending
    std::vector<std::size_t> test;    // ascending
    std::vector<int> fold_of_train;   // aligned with train
    int folds = 0;
};

// Stratified holdout plus stratified folds. Per class: shuffle, take
// round(count * test_fraction) for the test side, deal the rest round-robin
// across folds. Same seed gives the same partition on any platform.
inline Split split(std::size_t n, const std::vector<int>& labels, const SplitPlan& plan) {
    if (labels.size() != n) throw UsageError("split: labels length mismatch");
    if (plan.folds < 2) throw UsageError("split: folds must be >= 2");
    if (n < static_cast<std::size_t>(plan.folds) + 1)
        throw UsageError("split: need at least folds+1 samples");
    if (!(plan.test_fraction > 0.0 && plan.test_fraction < 1.0))
        throw UsageError("split: test_fraction must be in (0,1)");

    std::vector<std::vector<std::size_t>> pools;
    if (plan.stratified) {
        std::vector<int> classes = labels;
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
        for (int c : classes) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i)
                if (labels[i] == c) members.push_back(i);
            pools.push_back(std::move(members));
        }
    } else {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        pools.push_back(std::move(all));
    }

    Split out;
    out.folds = plan.folds;
    std::vector<std::pair<std::size_t, int>> train_with_fold;
    for (std::size_t c = 0; c < pools.size(); ++c) {
        auto& pool = pools[c];
        Rng rng(derive_seed(plan.seed, c));
        rng.shuffle(pool);
        const std::size_t n_test = static_cast<std::size_t>(std::floor(
            static_cast<double>(pool.size()) * plan.test_fraction + 0.5));
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i < n_test) {
                out.test.push_back(pool[i]);
            } else {
                const int fold = static_cast<int>((i - n_test) %
                                                  static_cast<std::size_t>(plan.folds));
                train_with_fold.emplace_back(pool[i], fold);
            }
        }
        if (plan.stratified &&
            pool.size() - n_test < static_cast<std::size_t>(plan.folds))
            warn("split: a class has fewer training samples than folds; some folds "
                 "will lack it");
    }
    std::sort(train_with_fold.begin(), train_with_fold.end());
    std::sort(out.test.begin(), out.test.end());
    for (const auto& [idx, fold] : train_with_fold) {
        out.train.push_back(idx);
        out.fold_of_train.push_back(fold);
    }
    return out;
}

struct Metrics {
    std::array<double, 2> precision = {0.0, 0.0};
    std::array<double, 2> recall = {0.0, 0.0};
    std::array<double, 2> f1 = {0.0, 0.0};
    std::array<std::size_t, 2> support = {0, 0};
    double weighted = 0.0;
};

// Per-class F1 weighted by true-class support; any 0/0 ratio is defined as 0.
inline Metrics weighted_f1(const std::vector<int>& y_true,
                           const std::vector<int>& y_pred) {
    if (y_true.empty()) throw DataError("weighted_f1: empty input");
    if (y_true.size() != y_pred.size())
        throw UsageError("weighted_f1: length mismatch");
    std::array<std::array<std::size_t, 2>, 2> conf = {{{0, 0}, {0, 0}}};
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if ((y_true[i] != 0 && y_true[i] != 1) || (y_pred[i] != 0 && y_pred[i] != 1))
            throw UsageError("weighted_f1: labels must be 0 or 1");
        conf[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])]++;
    }
    Metrics m;
    for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t tp = conf[c][c];
        const std::size_t fp = conf[1 - c][c];
        const std::size_t fn = conf[c][1 - c];
        m.support[c] = tp + fn;
        m.precision[c] = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                                   : 0.0;
        m.recall[c] =
            (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double pr = m.precision[c] + m.recall[c];
        m.f1[c] = (pr > 0.0) ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
        m.weighted += (static_cast<double>(m.support[c]) /
                       static_cast<double>(y_true.size())) *
                      m.f1[c];
    }
    return m;
}

enum class BaselineStrategy {
    RandomMatrix = 1,
    SparsityPreservingRandom = 2,
    PermutedLabels = 3,
    PermutedRows = 4,
};

inline const char* baseline_name(BaselineStrategy s) {
    switch (s) {
        case BaselineStrategy::RandomMatrix: return "random-matrix";
        case BaselineStrategy::SparsityPreservingRandom: return "sparsity-random";
        case BaselineStrategy::PermutedLabels: return "permuted-labels";
        case BaselineStrategy::PermutedRows: return "permuted-rows";
    }
    throw UsageError("baseline_name: invalid strategy");
}

inline BaselineStrategy parse_baseline(int s) {
    if (s < 1 || s > 4) throw UsageError("baseline strategy must be 1..4");
    return static_cast<BaselineStrategy>(s);
}

// Null datasets for the randomization test. Strategies 1 and 2 replace the
// features, 3 permutes labels, 4 permutes row order.
inline std::pair<Matrix, std::vector<int>> generate_baseline(
    BaselineStrategy strategy, const Matrix& X, const std::vector<int>& y,
    std::uint64_t seed) {
    if (X.rows() == 0 || X.cols() == 0) throw DataError("generate_baseline: empty table");
    if (y.size() != X.rows()) throw UsageError("generate_baseline: label length mismatch");
    Rng rng(seed);
    Matrix Xb = X;
    std::vector<int> yb = y;
    switch (strategy) {
        case BaselineStrategy::RandomMatrix: {
            for (std::size_t i = 0; i < X.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < X.cols(); ++j) {
                    Xb(i, j) = rng.uniform();
                    sum += Xb(i, j);
                }
                if (sum > 0.0)
                    for (std::size_t j = 0; j < X.cols(); ++j) Xb(i, j) /= sum;
            }
            break;
        }
        case BaselineStrategy::SparsityPreservingRandom: {
            for (std::size_t i = 0; i < X.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < X.cols(); ++j) {
                    if (X(i, j) != 0.0) {
                        Xb(i, j) = rng.uniform();
                        sum += Xb(i, j);
                    }
                }
                if (sum > 0.0) {
                    for (std::size_t j = 0; j < X.cols(); ++j)
                        if (Xb(i, j) != 0.0) Xb(i, j) /= sum;
                } else {
                    warn("generate_baseline: all-zero row kept as zeros");
                }
            }
            break;
        }
        case BaselineStrategy::PermutedLabels: {
            rng.shuffle(yb);
            break;
        }
        case BaselineStrategy::PermutedRows: {
            std::vector<std::size_t> perm(X.rows());
            for (std::size_t i = 0; i < X.rows(); ++i) perm[i] = i;
            rng.shuffle(perm);
            Xb = X.take_rows(perm);
            break;
        }
    }
    return {std::move(Xb), std::move(yb)};
}

struct BaselineTestResult {
    double f_original = 0.0;
    std::vector<double> f_list;     // one entry per successful replicate
    std::size_t exceed_count = 0;   // X = #{F_i > F_original}
    std::size_t n_requested = 0;
    std::size_t n_effective = 0;
    double ev = 0.0;                // X / N
    double alpha = 0.05;
    bool reject = false;
};

// Runner signature: f(features, labels, seed) -> weighted F1. Each replicate
// gets derived seeds, so results do not depend on worker scheduling. A
// replicate whose runner throws is excluded with a warning and N shrinks.
inline BaselineTestResult exceedance_test(
    double f_original, BaselineStrategy strategy, const Matrix& X,
    const std::vector<int>& y,
    const std::function<double(const Matrix&, const std::vector<int>&, std::uint64_t)>&
        runner,
    std::size_t N = 200, double alpha = 0.05, std::uint64_t seed = 0,
    unsigned jobs = 1) {
    if (N < 1) throw UsageError("exceedance_test: N must be >= 1");
    std::vector<double> scores(N);
    std::vector<char> ok(N, 0);
    auto run_one = [&](std::size_t i) {
        const auto [Xb, yb] =
            generate_baseline(strategy, X, y, derive_seed(seed, i, 0));
        scores[i] = runner(Xb, yb, derive_seed(seed, i, 1));
        ok[i] = 1;
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < N; ++i) {
            try {
                run_one(i);
            } catch (const Error& e) {
                warn("exceedance_test: replicate " + std::to_string(i) +
                     " failed: " + e.what());
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= N) return;
                try {
                    run_one(i);
                } catch (const Error& e) {
                    warn("exceedance_test: replicate " + std::to_string(i) +
                         " failed: " + e.what());
                }
            }
        };
        std::vector<std::thread> threads;
        const unsigned k = std::min<unsigned>(jobs, static_cast<unsigned>(N));
        threads.reserve(k);
        for (unsigned t = 0; t < k; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    BaselineTestResult res;
    res.f_original = f_original;
    res.alpha = alpha;
    res.n_requested = N;
    for (std::size_t i = 0; i < N; ++i) {
        if (!ok[i]) continue;
        res.f_list.push_back(scores[i]);
        if (scores[i] > f_original) ++res.exceed_count;
    }
    res.n_effective = res.f_list.size();
    if (res.n_effective == 0)
        throw NumericError("exceedance_test: every replicate failed");
    res.ev = static_cast<double>(res.exceed_count) /
             static_cast<double>(res.n_effective);
    res.reject = res.ev < alpha;
    return res;
}

}  // namespace otupred
