#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "otupred/learners.hpp"
#include "otupred/matrix.hpp"
#include "otupred/netinfer.hpp"
#include "otupred/preprocess.hpp"

namespace otupred {

inline std::size_t top_fraction_count(std::size_t p, double fraction) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(p)));
}

// Top-k column indices by descending score; ties broken by ascending name.
inline std::vector<std::size_t> top_k_by_score(const std::vector<double>& scores,
                                               const std::vector<std::string>& names,
                                               std::size_t k) {
    if (scores.size() != names.size())
        throw UsageError("top_k_by_score: length mismatch");
    std::vector<std::size_t> idx(scores.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return names[a] < names[b];
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

// Two-group one-way ANOVA F per column. A column with no between-class
// separation scores 0; zero within-class variance with separation scores
// +infinity (ranked first).
inline std::vector<double> anova_f_scores(const Matrix& X, const std::vector<int>& y) {
    const std::size_t n = X.rows();
    if (y.size() != n) throw UsageError("anova_f_scores: label length mismatch");
    std::size_t n1 = 0;
    for (int v : y) n1 += static_cast<std::size_t>(v);
    const std::size_t n0 = n - n1;
    if (n0 == 0 || n1 == 0) throw UsageError("anova_f_scores: both classes required");
    std::vector<double> scores(X.cols());
    for (std::size_t j = 0; j < X.cols(); ++j) {
        double m0 = 0.0, m1 = 0.0, m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = X(i, j);
            m += v;
            (y[i] ? m1 : m0) += v;
        }
        m0 /= static_cast<double>(n0);
        m1 /= static_cast<double>(n1);
        m /= static_cast<double>(n);
        double ssw = 0.0, sst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = X(i, j);
            const double mc = y[i] ? m1 : m0;
            ssw += (v - mc) * (v - mc);
            sst += (v - m) * (v - m);
        }
        const double ssb = static_cast<double>(n0) * (m0 - m) * (m0 - m) +
                           static_cast<double>(n1) * (m1 - m) * (m1 - m);
        if (ssb <= 0.0) {
            scores[j] = 0.0;
            continue;
        }
        const double dfw = static_cast<double>(n) - 2.0;
        if (dfw >= 1.0) {
            scores[j] = (ssw > 0.0) ? ssb / (ssw / dfw)
                                    : std::numeric_limits<double>::infinity();
        } else {
            // Both classes are singletons; fall back to the pooled variance.
            const double pooled = sst / (static_cast<double>(n) - 1.0);
            scores[j] = (pooled > 0.0) ? ssb / pooled
                                       : std::numeric_limits<double>::infinity();
        }
    }
    return scores;
}

// Plug-in mutual information in nats between each column (10 equal-frequency
// bins) and the binary label.
inline std::vector<double> mutual_information(const Matrix& X,
                                              const std::vector<int>& y,
                                              int bins = 10) {
    const std::size_t n = X.rows();
    if (y.size() != n) throw UsageError("mutual_information: label length mismatch");
    std::vector<double> scores(X.cols(), 0.0);
    for (std::size_t j = 0; j < X.cols(); ++j) {
        std::vector<double> col = X.col(j);
        std::vector<double> edges;
        for (int b = 1; b < bins; ++b)
            edges.push_back(
                detail::quantile_type7(col, static_cast<double>(b) /
                                                static_cast<double>(bins)));
        auto bin_of = [&](double x) {
            std::size_t b = 0;
            while (b < edges.size() && x > edges[b]) ++b;
            return b;
        };
        std::vector<std::array<double, 2>> joint(static_cast<std::size_t>(bins),
                                                 {0.0, 0.0});
        for (std::size_t i = 0; i < n; ++i)
            joint[bin_of(col[i])][static_cast<std::size_t>(y[i])] += 1.0;
        std::array<double, 2> class_tot = {0.0, 0.0};
        std::vector<double> bin_tot(static_cast<std::size_t>(bins), 0.0);
        for (std::size_t b = 0; b < joint.size(); ++b)
            for (std::size_t c = 0; c < 2; ++c) {
                bin_tot[b] += joint[b][c];
                class_tot[c] += joint[b][c];
            }
        double mi = 0.0;
        const double dn = static_cast<double>(n);
        for (std::size_t b = 0; b < joint.size(); ++b)
            for (std::size_t c = 0; c < 2; ++c) {
                const double nbc = joint[b][c];
                if (nbc == 0.0) continue;
                mi += (nbc / dn) * std::log(nbc * dn / (bin_tot[b] * class_tot[c]));
            }
        scores[j] = std::max(0.0, mi);
    }
    return scores;
}

enum class RfeEstimator { LogReg, DecisionTree, GradBoost, RandomForest };

inline const char* rfe_estimator_name(RfeEstimator e) {
    switch (e) {
        case RfeEstimator::LogReg: return "LR";
        case RfeEstimator::DecisionTree: return "DT";
        case RfeEstimator::GradBoost: return "GB";
        case RfeEstimator::RandomForest: return "RF";
    }
    throw UsageError("rfe_estimator_name: invalid estimator");
}

// Recursive feature elimination with step 1: fit, drop the feature with the
// smallest importance (|coefficient| for the linear model, summed impurity
// decrease for the tree models), repeat until n_select remain. Importance
// ties drop the higher column index.
inline std::vector<std::size_t> rfe(RfeEstimator estimator, const Matrix& X,
                                    const std::vector<int>& y, std::size_t n_select,
                                    std::uint64_t seed = 0) {
    const std::size_t p = X.cols();
    if (n_select == 0) throw UsageError("rfe: n_select must be >= 1");
    if (n_select > p) throw UsageError("rfe: n_select exceeds column count");
    std::vector<std::size_t> remaining(p);
    for (std::size_t j = 0; j < p; ++j) remaining[j] = j;
    std::size_t iteration = 0;
    while (remaining.size() > n_select) {
        Matrix sub = X.take_cols(remaining);
        std::vector<double> importance;
        try {
            switch (estimator) {
                case RfeEstimator::LogReg: {
                    LogisticRegression lr;
                    lr.fit(sub, y, 1.0);
                    importance.reserve(remaining.size());
                    for (double w : lr.weights) importance.push_back(std::fabs(w));
                    break;
                }
                case RfeEstimator::DecisionTree: {
                    TreeParams tp;
                    tp.max_depth = 5;
                    DecisionTree dt;
                    dt.fit(sub, y, tp);
                    importance = dt.feature_importance();
                    break;
                }
                case RfeEstimator::GradBoost: {
                    GradientBoosting gb;
                    gb.fit(sub, y, 100, 3, 0.1);
                    importance = gb.feature_importance();
                    break;
                }
                case RfeEstimator::RandomForest: {
                    ForestConfig cfg;
                    cfg.n_estimators = 100;
                    cfg.seed = derive_seed(seed, iteration);
                    RandomForest rf;
                    rf.fit(sub, y, cfg);
                    importance = rf.feature_importance();
                    break;
                }
            }
        } catch (const Error& e) {
            throw NumericError("rfe: estimator fit failed at iteration " +
                               std::to_string(iteration) + ": " + e.what());
        }
        std::size_t drop = 0;
        for (std::size_t k = 1; k < importance.size(); ++k)
            if (importance[k] <= importance[drop]) drop = k;
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(drop));
        ++iteration;
    }
    return remaining;
}

// Columns whose maximum entry ranks in the top fraction.
inline std::vector<std::size_t> max_value_rank(const Matrix& X,
                                               const std::vector<std::string>& names,
                                               double fraction = 0.3) {
    std::vector<double> maxima(X.cols(), -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < X.cols(); ++j)
        for (std::size_t i = 0; i < X.rows(); ++i)
            maxima[j] = std::max(maxima[j], X(i, j));
    return top_k_by_score(maxima, names, top_fraction_count(X.cols(), fraction));
}

inline constexpr std::array<const char*, 7> kCriterionNames = {
    "KBest", "Mutual", "LR", "DT", "GB", "RF", "Max"};

struct FeatureScore {
    std::string otu;
    std::array<bool, 7> flags = {false, false, false, false, false, false, false};
    int total = 0;
    int net_degree_diff = 0;
    bool ml_selected = false;
    bool net_selected = false;
    int combined = 0;  // 1*ml + 2*net
};

// TOTAL per column plus the top-fraction cut by TOTAL (ties by name).
inline std::pair<std::vector<int>, std::vector<std::size_t>> total_score(
    const std::vector<std::array<bool, 7>>& flags,
    const std::vector<std::string>& names, double fraction = 0.3) {
    if (flags.size() != names.size()) throw UsageError("total_score: length mismatch");
    std::vector<int> totals(flags.size(), 0);
    std::vector<double> as_scores(flags.size());
    for (std::size_t j = 0; j < flags.size(); ++j) {
        for (bool f : flags[j]) totals[j] += f ? 1 : 0;
        as_scores[j] = static_cast<double>(totals[j]);
    }
    auto selected =
        top_k_by_score(as_scores, names, top_fraction_count(names.size(), fraction));
    return {std::move(totals), std::move(selected)};
}

struct FeatureSelectionResult {
    std::vector<FeatureScore> scores;  // in column order
    std::vector<std::string> s0, s1, s2, s3;  // predictor subsets, column order
};

// Assembles per-OTU combined scores and the four predictor subsets. OTU-S0
// is truncated to |OTU-S3| by descending TOTAL (ties by name) so the two
// sets are size-matched.
inline FeatureSelectionResult combined_score(
    const std::vector<std::string>& names, const std::vector<std::array<bool, 7>>& flags,
    const std::vector<int>& totals, const std::vector<std::size_t>& ml_selected,
    const std::vector<std::size_t>& net_selected,
    const std::vector<int>& net_degree_diff) {
    const std::size_t p = names.size();
    FeatureSelectionResult res;
    std::vector<bool> in_ml(p, false), in_net(p, false);
    for (std::size_t j : ml_selected) in_ml[j] = true;
    for (std::size_t j : net_selected) in_net[j] = true;
    res.scores.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        auto& s = res.scores[j];
        s.otu = names[j];
        s.flags = flags[j];
        s.total = totals[j];
        s.net_degree_diff = net_degree_diff[j];
        s.ml_selected = in_ml[j];
        s.net_selected = in_net[j];
        s.combined = (in_ml[j] ? 1 : 0) + (in_net[j] ? 2 : 0);
    }
    std::vector<std::size_t> zero_cols;
    for (std::size_t j = 0; j < p; ++j) {
        switch (res.scores[j].combined) {
            case 0: zero_cols.push_back(j); break;
            case 1: res.s1.push_back(names[j]); break;
            case 2: res.s2.push_back(names[j]); break;
            case 3: res.s3.push_back(names[j]); break;
        }
    }
    std::vector<double> zero_totals;
    std::vector<std::string> zero_names;
    for (std::size_t j : zero_cols) {
        zero_totals.push_back(static_cast<double>(totals[j]));
        zero_names.push_back(names[j]);
    }
    const auto keep = top_k_by_score(zero_totals, zero_names, res.s3.size());
    std::vector<bool> kept(zero_cols.size(), false);
    for (std::size_t k : keep) kept[k] = true;
    for (std::size_t k = 0; k < zero_cols.size(); ++k)
        if (kept[k]) res.s0.push_back(names[zero_cols[k]]);
    return res;
}

struct FeatureSelectionOptions {
    double fraction = 0.3;
    double net_threshold = 0.2;
    double net_ridge = 0.1;
    std::uint64_t seed = 0;
};

// Runs the seven selection criteria plus the per-class network comparison on
// a training table and combines them into the 0..3 score.
inline FeatureSelectionResult run_feature_selection(
    const Matrix& X, const std::vector<int>& y, const std::vector<std::string>& names,
    const FeatureSelectionOptions& opt = {}) {
    const std::size_t p = X.cols();
    if (p == 0) throw UsageError("run_feature_selection: no columns");
    const std::size_t k = top_fraction_count(p, opt.fraction);
    std::vector<std::array<bool, 7>> flags(p);
    auto mark = [&](std::size_t criterion, const std::vector<std::size_t>& cols) {
        for (std::size_t j : cols) flags[j][criterion] = true;
    };
    mark(0, top_k_by_score(anova_f_scores(X, y), names, k));
    mark(1, top_k_by_score(mutual_information(X, y), names, k));
    mark(2, rfe(RfeEstimator::LogReg, X, y, k, derive_seed(opt.seed, 2)));
    mark(3, rfe(RfeEstimator::DecisionTree, X, y, k, derive_seed(opt.seed, 3)));
    mark(4, rfe(RfeEstimator::GradBoost, X, y, k, derive_seed(opt.seed, 4)));
    mark(5, rfe(RfeEstimator::RandomForest, X, y, k, derive_seed(opt.seed, 5)));
    mark(6, max_value_rank(X, names, opt.fraction));

    auto [totals, ml_selected] = total_score(flags, names, opt.fraction);

    std::vector<std::size_t> rows0, rows1;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? rows1 : rows0).push_back(i);
    const auto net0 = infer_network(X.take_rows(rows0), names, opt.net_threshold,
                                    opt.net_ridge);
    const auto net1 = infer_network(X.take_rows(rows1), names, opt.net_threshold,
                                    opt.net_ridge);
    const auto cmp = compare_networks(net0, net1);
    const auto net_names = select_by_degree_diff(cmp, opt.fraction);
    std::vector<std::size_t> net_selected;
    std::vector<int> degree_diff(p, 0);
    for (const auto& e : cmp.ranked)
        for (std::size_t j = 0; j < p; ++j)
            if (names[j] == e.node) degree_diff[j] = e.diff;
    for (const auto& sel : net_names)
        for (std::size_t j = 0; j < p; ++j)
            if (names[j] == sel) net_selected.push_back(j);

    return combined_score(names, flags, totals, ml_selected, net_selected, degree_diff);
}

// Score table rows for CSV export.
inline std::vector<std::vector<std::string>> featsel_score_rows(
    const FeatureSelectionResult& res) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"otu", "KBest", "Mutual", "LR", "DT", "GB", "RF", "Max", "TOTAL",
                    "net_degree_diff", "combined"});
    for (const auto& s : res.scores) {
        std::vector<std::string> row;
        row.push_back(s.otu);
        for (bool f : s.flags) row.push_back(f ? "1" : "0");
        row.push_back(std::to_string(s.total));
        row.push_back(std::to_string(s.net_degree_diff));
        row.push_back(std::to_string(s.combined));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace otupred
