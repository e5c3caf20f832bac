#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "otupred/core.hpp"
#include "otupred/error.hpp"
#include "otupred/learners.hpp"
#include "otupred/matrix.hpp"

namespace otupred {

// One pipeline-configuration grid cell with its achieved score.
struct FmsRecord {
    int aug = 0;             // augmentation off/on
    int nm_index = 1;        // 1..20 preprocessing combination
    TaxonomicLevel level = TaxonomicLevel::Genus;
    double f1 = 0.0;         // weighted F1 in [0, 1]

    void validate() const {
        if (aug != 0 && aug != 1) throw DataError("FmsRecord: aug must be 0 or 1");
        if (nm_index < 1 || nm_index > 20)
            throw DataError("FmsRecord: nm_index out of 1..20");
        if (!(f1 >= 0.0 && f1 <= 1.0))
            throw DataError("FmsRecord: f1 out of [0,1]");
    }
};

inline constexpr std::size_t kFmsFeatureCount = 26;

// Indicator layout: [Aug, NM_1..NM_20, Phylum, Class, Order, Family, Genus].
inline const std::array<std::string, kFmsFeatureCount>& fms_feature_names() {
    static const std::array<std::string, kFmsFeatureCount> names = [] {
        std::array<std::string, kFmsFeatureCount> n;
        n[0] = "Aug";
        for (std::size_t i = 1; i <= 20; ++i) n[i] = "NM_" + std::to_string(i);
        for (std::size_t l = 0; l < kAllLevels.size(); ++l)
            n[21 + l] = level_name(kAllLevels[l]);
        return n;
    }();
    return names;
}

inline std::vector<double> fms_encode(const FmsRecord& r) {
    r.validate();
    std::vector<double> x(kFmsFeatureCount, 0.0);
    x[0] = static_cast<double>(r.aug);
    x[static_cast<std::size_t>(r.nm_index)] = 1.0;
    x[21 + static_cast<std::size_t>(r.level)] = 1.0;
    return x;
}

inline Matrix fms_design_matrix(const std::vector<FmsRecord>& records) {
    Matrix X(records.size(), kFmsFeatureCount, 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto row = fms_encode(records[i]);
        for (std::size_t j = 0; j < kFmsFeatureCount; ++j) X(i, j) = row[j];
    }
    return X;
}

struct FmsModel {
    RegressionTree tree;
    std::size_t n_records = 0;
};

// Squared-error regression tree over the configuration indicators. With 0/1
// features every split threshold lands on 0.5, so the left branch holds the
// "indicator = 0" records.
inline FmsModel fit_fms(const std::vector<FmsRecord>& records, int max_depth = 4,
                        int min_split = 2, int min_leaf = 1) {
    if (records.empty()) throw UsageError("fit_fms: need at least one record");
    Matrix X = fms_design_matrix(records);
    std::vector<double> y;
    y.reserve(records.size());
    for (const auto& r : records) y.push_back(r.f1);
    RegTreeParams params;
    params.max_depth = max_depth;
    params.min_samples_split = min_split;
    params.min_samples_leaf = min_leaf;
    FmsModel model;
    model.n_records = records.size();
    model.tree.fit(X, y, params);
    return model;
}

namespace fms_detail {

inline std::string node_stats(const RegNode& node, std::size_t n_total) {
    const double cov =
        100.0 * static_cast<double>(node.n) / static_cast<double>(n_total);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f%% | mean=%.3f", cov, node.value);
    return buf;
}

inline void text_walk(const RegNode& node, std::size_t n_total,
                      const std::string& indent, std::string& out) {
    if (node.is_leaf) return;
    const std::string& name = fms_feature_names()[node.feature];
    out += indent + "|--- " + name + " = 0 [" +
           node_stats(*node.left, n_total) + "]\n";
    text_walk(*node.left, n_total, indent + "|   ", out);
    out += indent + "|--- " + name + " = 1 [" +
           node_stats(*node.right, n_total) + "]\n";
    text_walk(*node.right, n_total, indent + "|   ", out);
}

inline void dot_walk(const RegNode& node, std::size_t n_total, std::size_t& counter,
                     std::string& out) {
    const std::size_t id = counter++;
    std::string label = node_stats(node, n_total);
    if (!node.is_leaf)
        label = fms_feature_names()[node.feature] + " = 0 ?\\n" + label;
    out += "  n" + std::to_string(id) + " [label=\"" + label + "\"];\n";
    if (node.is_leaf) return;
    const std::size_t left_id = counter;
    dot_walk(*node.left, n_total, counter, out);
    const std::size_t right_id = counter;
    dot_walk(*node.right, n_total, counter, out);
    out += "  n" + std::to_string(id) + " -> n" + std::to_string(left_id) +
           " [label=\"true\"];\n";
    out += "  n" + std::to_string(id) + " -> n" + std::to_string(right_id) +
           " [label=\"false\"];\n";
}

}  // namespace fms_detail

// Indented text rendering: the root line carries overall coverage and mean,
// each further line shows the branch condition plus that child's stats.
inline std::string export_fms_text(const FmsModel& model) {
    const RegNode* root = model.tree.root();
    if (!root) throw UsageError("export_fms_text: unfitted model");
    std::string out = fms_detail::node_stats(*root, model.n_records) + "\n";
    fms_detail::text_walk(*root, model.n_records, "", out);
    return out;
}

inline std::string export_fms_dot(const FmsModel& model) {
    const RegNode* root = model.tree.root();
    if (!root) throw UsageError("export_fms_dot: unfitted model");
    std::string out = "digraph fms_tree {\n  node [shape=box];\n";
    std::size_t counter = 0;
    fms_detail::dot_walk(*root, model.n_records, counter, out);
    out += "}\n";
    return out;
}

inline std::string export_fms(const FmsModel& model, const std::string& format) {
    if (format == "text") return export_fms_text(model);
    if (format == "dot") return export_fms_dot(model);
    throw UsageError("export_fms: format must be 'text' or 'dot'");
}

}  // namespace otupred
