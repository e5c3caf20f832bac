#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "otupred/core.hpp"
#include "otupred/error.hpp"
#include "otupred/rng.hpp"

namespace otupred {

struct AugmentSpec {
    int target_per_label = 400;
    double noise_divisor = 100.0;
    std::uint64_t seed = 0;
};

struct SubsetStats {
    std::vector<double> mean;
    std::vector<double> sd;  // population form (denominator n)
};

inline SubsetStats subset_stats(const Matrix& X, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw UsageError("subset_stats: empty subset");
    SubsetStats st;
    const std::size_t p = X.cols();
    st.mean.assign(p, 0.0);
    st.sd.assign(p, 0.0);
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < p; ++j) st.mean[j] += X(r, j);
    const double m = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < p; ++j) st.mean[j] /= m;
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < p; ++j) {
            const double d = X(r, j) - st.mean[j];
            st.sd[j] += d * d;
        }
    for (std::size_t j = 0; j < p; ++j) st.sd[j] = std::sqrt(st.sd[j] / m);
    return st;
}

struct AugmentedTable {
    OtuTable table;
    BinaryLabels labels;
    std::vector<std::string> provenance;  // source sample id, "" for originals

    std::size_t n_synthetic() const {
        std::size_t k = 0;
        for (const auto& s : provenance)
            if (!s.empty()) ++k;
        return k;
    }
};

// Balances each label class up to target_per_label by sampling a source row
// within the same (variety, label) subset and adding per-OTU Gaussian noise
// with mean mu_j/divisor and sd sigma_j/divisor, clamped at zero. Originals
// are always kept; classes at or above the target are untouched. Synthetic
// quota is split across varieties proportionally to subset size (largest
// remainder), and every subset draws from its own derived RNG stream.
inline AugmentedTable augment_training(const OtuTable& train, const BinaryLabels& labels,
                                       const AugmentSpec& spec) {
    if (labels.n() != train.n()) throw UsageError("augment_training: label length mismatch");
    if (spec.target_per_label < 1) throw UsageError("augment_training: target >= 1");
    if (!(spec.noise_divisor > 0.0)) throw UsageError("augment_training: divisor > 0");

    AugmentedTable out;
    out.labels.response_name = labels.response_name;

    const std::size_t p = train.p();
    const bool has_varieties = !train.varieties.empty();
    auto variety_of = [&](std::size_t i) {
        return has_varieties ? train.varieties[i] : std::string();
    };

    // Per label: ordered variety -> member rows.
    std::array<std::map<std::string, std::vector<std::size_t>>, 2> subsets;
    std::array<std::size_t, 2> label_count = {0, 0};
    for (std::size_t i = 0; i < train.n(); ++i) {
        const int lab = labels.labels[i];
        if (lab != 0 && lab != 1)
            throw UsageError("augment_training: labels must be 0 or 1");
        subsets[static_cast<std::size_t>(lab)][variety_of(i)].push_back(i);
        ++label_count[static_cast<std::size_t>(lab)];
    }

    struct SyntheticRow {
        std::vector<double> values;
        std::string source_id;
        std::string variety;
        int label;
    };
    std::vector<SyntheticRow> synth;

    for (int lab = 0; lab < 2; ++lab) {
        const std::size_t have = label_count[static_cast<std::size_t>(lab)];
        const auto target = static_cast<std::size_t>(spec.target_per_label);
        if (have >= target) continue;
        if (have == 0)
            throw DataError("augment_training: no samples with label " +
                            std::to_string(lab) + " to generate from");
        const std::size_t need = target - have;

        // Largest-remainder allocation across this label's varieties.
        const auto& groups = subsets[static_cast<std::size_t>(lab)];
        struct Alloc {
            std::string variety;
            std::size_t quota;
            double frac;
            std::size_t order;
        };
        std::vector<Alloc> alloc;
        std::size_t assigned = 0;
        std::size_t order = 0;
        for (const auto& [variety, rows] : groups) {
            const double share = static_cast<double>(need) *
                                 static_cast<double>(rows.size()) /
                                 static_cast<double>(have);
            Alloc a;
            a.variety = variety;
            a.quota = static_cast<std::size_t>(std::floor(share));
            a.frac = share - std::floor(share);
            a.order = order++;
            assigned += a.quota;
            alloc.push_back(std::move(a));
        }
        std::vector<std::size_t> by_frac(alloc.size());
        for (std::size_t i = 0; i < alloc.size(); ++i) by_frac[i] = i;
        std::sort(by_frac.begin(), by_frac.end(), [&](std::size_t a, std::size_t b) {
            if (alloc[a].frac != alloc[b].frac) return alloc[a].frac > alloc[b].frac;
            return alloc[a].variety < alloc[b].variety;
        });
        for (std::size_t i = 0; assigned < need; ++i)
            ++alloc[by_frac[i % by_frac.size()]].quota, ++assigned;

        for (const auto& a : alloc) {
            if (a.quota == 0) continue;
            const auto& rows = groups.at(a.variety);
            const SubsetStats st = subset_stats(train.counts, rows);
            Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(lab), a.order));
            for (std::size_t s = 0; s < a.quota; ++s) {
                const std::size_t src =
                    rows[static_cast<std::size_t>(rng.uniform_below(rows.size()))];
                SyntheticRow row;
                row.values.resize(p);
                for (std::size_t j = 0; j < p; ++j) {
                    const double noise = rng.normal(st.mean[j] / spec.noise_divisor,
                                                    st.sd[j] / spec.noise_divisor);
                    row.values[j] = std::max(0.0, train.counts(src, j) + noise);
                }
                row.source_id = train.sample_ids[src];
                row.variety = variety_of(src);
                row.label = lab;
                synth.push_back(std::move(row));
            }
        }
    }

    out.table.otu_names = train.otu_names;
    out.table.level = train.level;
    out.table.counts = Matrix(train.n() + synth.size(), p);
    for (std::size_t i = 0; i < train.n(); ++i) {
        for (std::size_t j = 0; j < p; ++j) out.table.counts(i, j) = train.counts(i, j);
        out.table.sample_ids.push_back(train.sample_ids[i]);
        if (has_varieties) out.table.varieties.push_back(train.varieties[i]);
        out.labels.labels.push_back(labels.labels[i]);
        out.provenance.emplace_back();
    }
    for (std::size_t s = 0; s < synth.size(); ++s) {
        const std::size_t r = train.n() + s;
        for (std::size_t j = 0; j < p; ++j)
            out.table.counts(r, j) = synth[s].values[j];
        out.table.sample_ids.push_back(synth[s].source_id + "_synth" +
                                       std::to_string(s));
        if (has_varieties) out.table.varieties.push_back(synth[s].variety);
        out.labels.labels.push_back(synth[s].label);
        out.provenance.push_back(synth[s].source_id);
    }
    return out;
}

}  // namespace otupred
