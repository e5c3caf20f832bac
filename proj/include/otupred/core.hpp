#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "otupred/csv.hpp"
#include "otupred/error.hpp"
#include "otupred/matrix.hpp"

namespace otupred {

enum class TaxonomicLevel { Phylum, Class, Order, Family, Genus };

inline constexpr std::array<TaxonomicLevel, 5> kAllLevels = {
    TaxonomicLevel::Phylum, TaxonomicLevel::Class, TaxonomicLevel::Order,
    TaxonomicLevel::Family, TaxonomicLevel::Genus};

inline const char* level_name(TaxonomicLevel level) {
    switch (level) {
        case TaxonomicLevel::Phylum: return "Phylum";
        case TaxonomicLevel::Class: return "Class";
        case TaxonomicLevel::Order: return "Order";
        case TaxonomicLevel::Family: return "Family";
        case TaxonomicLevel::Genus: return "Genus";
    }
    throw UsageError("level_name: invalid level");
}

inline TaxonomicLevel parse_level(const std::string& s) {
    for (TaxonomicLevel l : kAllLevels)
        if (s == level_name(l)) return l;
    throw UsageError("parse_level: unknown taxonomic level '" + s + "'");
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Sample-by-OTU abundance table. Raw ingested counts are integers; the same
// shape carries real values after normalization.
struct OtuTable {
    std::vector<std::string> sample_ids;
    std::vector<std::string> otu_names;
    Matrix counts;
    TaxonomicLevel level = TaxonomicLevel::Genus;
    std::vector<std::string> varieties;  // empty until metadata is attached

    std::size_t n() const { return counts.rows(); }
    std::size_t p() const { return counts.cols(); }

    double depth(std::size_t row) const {
        double s = 0.0;
        for (std::size_t j = 0; j < p(); ++j) s += counts(row, j);
        return s;
    }

    void validate() const {
        if (sample_ids.size() != n())
            throw DataError("OtuTable: sample_ids length mismatch");
        if (otu_names.size() != p())
            throw DataError("OtuTable: otu_names length mismatch");
        if (!varieties.empty() && varieties.size() != n())
            throw DataError("OtuTable: varieties length mismatch");
        std::unordered_set<std::string> seen;
        for (const auto& id : sample_ids)
            if (!seen.insert(id).second)
                throw DataError("OtuTable: duplicate sample id '" + id + "'");
        seen.clear();
        for (const auto& name : otu_names)
            if (!seen.insert(name).second)
                throw DataError("OtuTable: duplicate OTU name '" + name + "'");
        for (std::size_t i = 0; i < n(); ++i)
            for (std::size_t j = 0; j < p(); ++j)
                if (!(counts(i, j) >= 0.0))
                    throw DataError("OtuTable: negative count at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
    }

    OtuTable take_rows(const std::vector<std::size_t>& idx) const {
        OtuTable out;
        out.otu_names = otu_names;
        out.level = level;
        out.counts = counts.take_rows(idx);
        out.sample_ids.reserve(idx.size());
        for (std::size_t i : idx) out.sample_ids.push_back(sample_ids[i]);
        if (!varieties.empty())
            for (std::size_t i : idx) out.varieties.push_back(varieties[i]);
        return out;
    }

    OtuTable take_cols(const std::vector<std::size_t>& idx) const {
        OtuTable out;
        out.sample_ids = sample_ids;
        out.level = level;
        out.varieties = varieties;
        out.counts = counts.take_cols(idx);
        out.otu_names.reserve(idx.size());
        for (std::size_t j : idx) out.otu_names.push_back(otu_names[j]);
        return out;
    }
};

// CSV schema: header `sample_id,<otu>,...`; one row per sample; values are
// non-negative decimals.
inline OtuTable load_otu_table(const std::string& path, TaxonomicLevel level) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("otu csv: empty file " + path);
    const auto& header = rows[0];
    if (header.empty() || trim(header[0]) != "sample_id")
        throw DataError("otu csv: first header column must be 'sample_id'");
    OtuTable t;
    t.level = level;
    for (std::size_t j = 1; j < header.size(); ++j) {
        const std::string name = trim(header[j]);
        if (name.empty()) throw DataError("otu csv: empty OTU name in header");
        t.otu_names.push_back(name);
    }
    const std::size_t p = t.otu_names.size();
    t.counts = Matrix(rows.size() - 1, p);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != p + 1)
            throw DataError("otu csv: row " + std::to_string(r) + " has " +
                            std::to_string(rows[r].size()) + " fields, expected " +
                            std::to_string(p + 1));
        t.sample_ids.push_back(trim(rows[r][0]));
        for (std::size_t j = 0; j < p; ++j) {
            const double v = csv::to_double(rows[r][j + 1], "otu csv");
            if (v < 0.0)
                throw DataError("otu csv: negative count at (" + std::to_string(r) +
                                "," + std::to_string(j + 1) + ")");
            t.counts(r - 1, j) = v;
        }
    }
    t.validate();
    return t;
}

inline const std::array<std::string, 6>& response_names() {
    static const std::array<std::string, 6> names = {
        "Yield_Meter", "Yield_Plant", "Scab", "Scabpit", "Scabsuper", "Black_Scurf"};
    return names;
}

inline bool is_yield_response(const std::string& name) {
    return name == "Yield_Meter" || name == "Yield_Plant";
}

// Per-sample metadata: variety, state, and the six continuous responses.
struct Metadata {
    std::vector<std::string> sample_ids;
    std::vector<std::string> varieties;
    std::vector<std::string> states;
    Matrix responses;  // n x 6, columns in response_names() order

    std::size_t n() const { return sample_ids.size(); }

    std::vector<double> response(const std::string& name) const {
        for (std::size_t c = 0; c < response_names().size(); ++c)
            if (response_names()[c] == name) return responses.col(c);
        throw UsageError("unknown response '" + name + "'");
    }
};

inline Metadata load_metadata(const std::string& path) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("metadata csv: empty file " + path);
    const auto& header = rows[0];
    std::vector<std::string> expected = {"sample_id", "variety", "state"};
    for (const auto& r : response_names()) expected.push_back(r);
    if (header.size() != expected.size())
        throw DataError("metadata csv: expected " + std::to_string(expected.size()) +
                        " columns");
    for (std::size_t j = 0; j < expected.size(); ++j)
        if (trim(header[j]) != expected[j])
            throw DataError("metadata csv: column " + std::to_string(j) +
                            " must be '" + expected[j] + "'");
    Metadata m;
    m.responses = Matrix(rows.size() - 1, 6);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != expected.size())
            throw DataError("metadata csv: row " + std::to_string(r) + " is ragged");
        m.sample_ids.push_back(trim(rows[r][0]));
        m.varieties.push_back(trim(rows[r][1]));
        m.states.push_back(trim(rows[r][2]));
        for (std::size_t c = 0; c < 6; ++c) {
            const double v = csv::to_double(rows[r][3 + c], "metadata csv");
            if (v < 0.0)
                throw DataError("metadata csv: negative response at row " +
                                std::to_string(r));
            m.responses(r - 1, c) = v;
        }
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : m.sample_ids)
        if (!seen.insert(id).second)
            throw DataError("metadata csv: duplicate sample id '" + id + "'");
    return m;
}

enum class EnvGroup { Soil, DS, Alpha };

inline const char* env_group_name(EnvGroup g) {
    switch (g) {
        case EnvGroup::Soil: return "Soil";
        case EnvGroup::DS: return "DS";
        case EnvGroup::Alpha: return "Alpha";
    }
    throw UsageError("env_group_name: invalid group");
}

inline std::size_t env_group_width(EnvGroup g) {
    switch (g) {
        case EnvGroup::Soil: return 12;
        case EnvGroup::DS: return 4;
        case EnvGroup::Alpha: return 9;
    }
    throw UsageError("env_group_width: invalid group");
}

// Environmental covariate block; the column count is fixed per group.
struct EnvTable {
    std::vector<std::string> sample_ids;
    std::vector<std::string> feature_names;
    Matrix values;
    EnvGroup group = EnvGroup::Soil;

    std::size_t n() const { return values.rows(); }
    std::size_t q() const { return values.cols(); }
};

inline EnvTable load_env_table(const std::string& path, EnvGroup group) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("env csv: empty file " + path);
    const auto& header = rows[0];
    if (header.empty() || trim(header[0]) != "sample_id")
        throw DataError("env csv: first header column must be 'sample_id'");
    EnvTable t;
    t.group = group;
    for (std::size_t j = 1; j < header.size(); ++j)
        t.feature_names.push_back(trim(header[j]));
    const std::size_t q = t.feature_names.size();
    if (q != env_group_width(group))
        throw DataError(std::string("env csv: group ") + env_group_name(group) +
                        " requires " + std::to_string(env_group_width(group)) +
                        " features, got " + std::to_string(q));
    t.values = Matrix(rows.size() - 1, q);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != q + 1)
            throw DataError("env csv: row " + std::to_string(r) + " is ragged");
        t.sample_ids.push_back(trim(rows[r][0]));
        for (std::size_t j = 0; j < q; ++j)
            t.values(r - 1, j) = csv::to_double(rows[r][j + 1], "env csv");
    }
    return t;
}

// Keeps OTUs with a nonzero count in at least min_prevalence samples, then
// drops samples whose remaining depth is zero (warned, since downstream
// normalizations divide by depth).
inline OtuTable filter_rare_otus(const OtuTable& table, int min_prevalence = 15) {
    if (min_prevalence < 1) throw UsageError("filter_rare_otus: min_prevalence >= 1");
    std::vector<std::size_t> keep_cols;
    for (std::size_t j = 0; j < table.p(); ++j) {
        int prevalence = 0;
        for (std::size_t i = 0; i < table.n(); ++i)
            if (table.counts(i, j) != 0.0) ++prevalence;
        if (prevalence >= min_prevalence) keep_cols.push_back(j);
    }
    if (keep_cols.empty()) throw DataError("filter_rare_otus: empty table after filter");
    OtuTable out = table.take_cols(keep_cols);
    std::vector<std::size_t> keep_rows;
    for (std::size_t i = 0; i < out.n(); ++i) {
        if (out.depth(i) > 0.0) {
            keep_rows.push_back(i);
        } else {
            warn("filter_rare_otus: dropping sample '" + out.sample_ids[i] +
                 "' with zero depth after filtering");
        }
    }
    if (keep_rows.size() != out.n()) out = out.take_rows(keep_rows);
    return out;
}

struct BinaryLabels {
    std::string response_name;
    std::vector<int> labels;

    std::size_t n() const { return labels.size(); }
};

inline BinaryLabels binarize_disease(const std::vector<double>& values,
                                     const std::string& response_name = "") {
    for (double v : values)
        if (v < 0.0) throw UsageError("binarize_disease: values must be >= 0");
    BinaryLabels out;
    out.response_name = response_name;
    out.labels.reserve(values.size());
    for (double v : values) out.labels.push_back(v > 0.0 ? 1 : 0);
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw UsageError("median_of: empty vector");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size();
    if (m % 2 == 1) return v[m / 2];
    return 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

// Label 1 iff the value strictly exceeds its variety's median; values equal
// to the median map to 0.
inline BinaryLabels binarize_yield(const std::vector<double>& values,
                                   const std::vector<std::string>& varieties,
                                   const std::string& response_name = "") {
    if (values.size() != varieties.size())
        throw UsageError("binarize_yield: length mismatch");
    std::unordered_map<std::string, std::vector<double>> by_variety;
    for (std::size_t i = 0; i < values.size(); ++i)
        by_variety[trim(varieties[i])].push_back(values[i]);
    std::unordered_map<std::string, double> medians;
    for (auto& [variety, vals] : by_variety) medians[variety] = median_of(vals);
    BinaryLabels out;
    out.response_name = response_name;
    out.labels.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out.labels.push_back(values[i] > medians[trim(varieties[i])] ? 1 : 0);
    return out;
}

// Dispatches on the response kind: yield responses binarize against the
// variety median, disease responses against zero.
inline BinaryLabels binarize_response(const Metadata& meta, const std::string& name) {
    const std::vector<double> values = meta.response(name);
    if (is_yield_response(name)) return binarize_yield(values, meta.varieties, name);
    return binarize_disease(values, name);
}

// Row-aligns an OTU table with metadata by sample id (metadata must cover
// every sample); fills the table's varieties.
inline void attach_metadata(OtuTable& table, const Metadata& meta) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < meta.n(); ++i) pos[meta.sample_ids[i]] = i;
    table.varieties.clear();
    table.varieties.reserve(table.n());
    for (const auto& id : table.sample_ids) {
        auto it = pos.find(id);
        if (it == pos.end())
            throw DataError("attach_metadata: sample '" + id + "' missing from metadata");
        table.varieties.push_back(meta.varieties[it->second]);
    }
}

// Metadata rows reordered to the table's sample order.
inline Metadata align_metadata(const OtuTable& table, const Metadata& meta) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < meta.n(); ++i) pos[meta.sample_ids[i]] = i;
    Metadata out;
    out.responses = Matrix(table.n(), 6);
    for (std::size_t i = 0; i < table.n(); ++i) {
        auto it = pos.find(table.sample_ids[i]);
        if (it == pos.end())
            throw DataError("align_metadata: sample '" + table.sample_ids[i] +
                            "' missing from metadata");
        const std::size_t r = it->second;
        out.sample_ids.push_back(meta.sample_ids[r]);
        out.varieties.push_back(meta.varieties[r]);
        out.states.push_back(meta.states[r]);
        for (std::size_t c = 0; c < 6; ++c) out.responses(i, c) = meta.responses(r, c);
    }
    return out;
}

}  // namespace otupred
