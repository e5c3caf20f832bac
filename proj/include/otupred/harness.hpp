#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "otupred/augment.hpp"
#include "otupred/bnn.hpp"
#include "otupred/core.hpp"
#include "otupred/csv.hpp"
#include "otupred/error.hpp"
#include "otupred/eval.hpp"
#include "otupred/featsel.hpp"
#include "otupred/fms.hpp"
#include "otupred/learners.hpp"
#include "otupred/preprocess.hpp"
#include "otupred/rng.hpp"

namespace otupred {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Synthetic data generation
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t n = 200;
    std::size_t p = 40;
    std::size_t n_signal = 5;
    double effect = 5.0;
    double imbalance = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1 || p < 1) throw UsageError("synth: n and p must be >= 1");
        if (n_signal > p) throw UsageError("synth: n_signal must be <= p");
        if (effect < 0.0) throw UsageError("synth: effect must be >= 0");
        if (!(imbalance > 0.0 && imbalance < 1.0))
            throw UsageError("synth: imbalance must be in (0,1)");
    }
};

struct SynthData {
    OtuTable table;
    BinaryLabels labels;
    Metadata meta;
    EnvTable soil, ds, alpha;
};

namespace synth_detail {

// Failures before the first success; inverse-CDF so one uniform per draw.
inline std::int64_t geometric(Rng& rng, double p_succ) {
    const double u = 1.0 - rng.uniform();  // (0, 1]
    if (p_succ >= 1.0) return 0;
    return static_cast<std::int64_t>(std::floor(std::log(u) / std::log1p(-p_succ)));
}

inline std::string pad_id(const std::string& prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04zu", prefix.c_str(), i);
    return buf;
}

// Negative-binomial counts (r = 2) with per-column means drawn U(5,50); the
// first n_signal columns get a (1+effect) mean boost for label-1 rows.
// Draw order: column means first, then cells row-major.
inline void fill_counts(Matrix& counts, const std::vector<int>& labels,
                        std::size_t n_signal, double effect, Rng& rng) {
    const std::size_t n = counts.rows();
    const std::size_t p = counts.cols();
    std::vector<double> mu(p);
    for (auto& m : mu) m = 5.0 + 45.0 * rng.uniform();
    const double r = 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            const double mean =
                mu[j] * ((labels[i] == 1 && j < n_signal) ? (1.0 + effect) : 1.0);
            const double p_nb = r / (r + mean);
            counts(i, j) =
                static_cast<double>(geometric(rng, p_nb) + geometric(rng, p_nb));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double depth = 0.0;
        for (std::size_t j = 0; j < p; ++j) depth += counts(i, j);
        if (depth == 0.0) {
            warn("synth: sample " + std::to_string(i) + " drew all zeros; set one count");
            counts(i, 0) = 1.0;
        }
    }
}

inline Metadata make_metadata(const std::vector<std::string>& ids,
                              const std::vector<int>& labels, std::uint64_t seed) {
    Metadata meta;
    meta.sample_ids = ids;
    meta.responses = Matrix(ids.size(), 6);
    static const std::array<const char*, 4> kVarieties = {"Var1", "Var2", "Var3",
                                                          "Var4"};
    static const std::array<const char*, 2> kStates = {"North", "South"};
    Rng rng(derive_seed(seed, 10));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        meta.varieties.push_back(kVarieties[i % kVarieties.size()]);
        meta.states.push_back(kStates[i % kStates.size()]);
        const double lab = static_cast<double>(labels[i]);
        // Columns follow response_names(): Yield_Meter, Yield_Plant, Scab,
        // Scabpit, Scabsuper, Black_Scurf. Scab is positive exactly for
        // label-1 rows so disease binarization round-trips.
        meta.responses(i, 0) = 2.0 + 6.0 * rng.uniform();
        meta.responses(i, 1) = 0.5 + 1.5 * rng.uniform();
        meta.responses(i, 2) = lab * (0.5 + rng.uniform());
        meta.responses(i, 3) = lab * rng.uniform();
        meta.responses(i, 4) = lab * 0.5 * rng.uniform();
        meta.responses(i, 5) = lab * rng.uniform();
    }
    return meta;
}

inline EnvTable make_env(const std::vector<std::string>& ids,
                         const std::vector<int>& labels, EnvGroup group,
                         std::uint64_t seed, std::uint64_t tag) {
    EnvTable t;
    t.group = group;
    t.sample_ids = ids;
    const std::size_t q = env_group_width(group);
    for (std::size_t j = 1; j <= q; ++j)
        t.feature_names.push_back(std::string(env_group_name(group)) + "_" +
                                  std::to_string(j));
    t.values = Matrix(ids.size(), q);
    Rng rng(derive_seed(seed, 11, tag));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double lab = static_cast<double>(labels[i]);
        for (std::size_t j = 0; j < q; ++j) {
            double v = 0.0;
            switch (group) {
                case EnvGroup::Soil: v = 10.0 * rng.uniform(); break;
                case EnvGroup::DS: v = 10.0 * rng.uniform() + 2.0 * lab; break;
                case EnvGroup::Alpha: v = 5.0 * rng.uniform(); break;
            }
            t.values(i, j) = v;
        }
    }
    return t;
}

}  // namespace synth_detail

inline SynthData synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthData d;
    Rng rng(cfg.seed);
    d.labels.response_name = "Scab";
    d.labels.labels.resize(cfg.n);
    for (auto& l : d.labels.labels) l = rng.uniform() < cfg.imbalance ? 1 : 0;

    d.table.level = TaxonomicLevel::Genus;
    for (std::size_t i = 1; i <= cfg.n; ++i)
        d.table.sample_ids.push_back(synth_detail::pad_id("S", i));
    for (std::size_t j = 1; j <= cfg.p; ++j)
        d.table.otu_names.push_back(synth_detail::pad_id("OTU_", j));
    d.table.counts = Matrix(cfg.n, cfg.p);
    synth_detail::fill_counts(d.table.counts, d.labels.labels, cfg.n_signal,
                              cfg.effect, rng);

    d.meta = synth_detail::make_metadata(d.table.sample_ids, d.labels.labels, cfg.seed);
    d.table.varieties = d.meta.varieties;
    d.soil = synth_detail::make_env(d.table.sample_ids, d.labels.labels, EnvGroup::Soil,
                                    cfg.seed, 0);
    d.ds = synth_detail::make_env(d.table.sample_ids, d.labels.labels, EnvGroup::DS,
                                  cfg.seed, 1);
    d.alpha = synth_detail::make_env(d.table.sample_ids, d.labels.labels,
                                     EnvGroup::Alpha, cfg.seed, 2);
    return d;
}

// Feature count per taxonomic level, coarser levels aggregate to fewer
// columns; all levels keep at least 6.
inline std::size_t level_feature_count(TaxonomicLevel level, std::size_t p) {
    std::size_t v = p;
    switch (level) {
        case TaxonomicLevel::Phylum: v = p / 8; break;
        case TaxonomicLevel::Class: v = p / 6; break;
        case TaxonomicLevel::Order: v = p / 4; break;
        case TaxonomicLevel::Family: v = p / 2; break;
        case TaxonomicLevel::Genus: v = p; break;
    }
    return std::max<std::size_t>(6, v);
}

struct MultiLevelSynth {
    std::map<TaxonomicLevel, OtuTable> tables;
    BinaryLabels labels;
    Metadata meta;
    EnvTable soil, ds, alpha;
};

// One shared label/metadata/environment draw plus an independent count table
// per taxonomic level (PRNG stream derived from the level index).
inline MultiLevelSynth synth_multi_level(const SynthConfig& cfg) {
    SynthData base = synth_generate(cfg);
    MultiLevelSynth out;
    out.labels = base.labels;
    out.meta = base.meta;
    out.soil = base.soil;
    out.ds = base.ds;
    out.alpha = base.alpha;
    for (std::size_t li = 0; li < kAllLevels.size(); ++li) {
        const TaxonomicLevel level = kAllLevels[li];
        OtuTable t;
        t.level = level;
        t.sample_ids = base.table.sample_ids;
        t.varieties = base.table.varieties;
        const std::size_t pl = level_feature_count(level, cfg.p);
        for (std::size_t j = 1; j <= pl; ++j)
            t.otu_names.push_back(
                synth_detail::pad_id(std::string(level_name(level)) + "_", j));
        t.counts = Matrix(cfg.n, pl);
        Rng lrng(derive_seed(cfg.seed, 20 + li));
        synth_detail::fill_counts(t.counts, out.labels.labels,
                                  std::min(cfg.n_signal, pl), cfg.effect, lrng);
        out.tables.emplace(level, std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV writers (inverses of the loaders in core.hpp)
// ---------------------------------------------------------------------------

inline std::string format_value(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_otu_csv(const OtuTable& t, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"sample_id"};
    header.insert(header.end(), t.otu_names.begin(), t.otu_names.end());
    rows.push_back(std::move(header));
    for (std::size_t i = 0; i < t.n(); ++i) {
        std::vector<std::string> row = {t.sample_ids[i]};
        for (std::size_t j = 0; j < t.p(); ++j)
            row.push_back(format_value(t.counts(i, j)));
        rows.push_back(std::move(row));
    }
    csv::write_file(path, rows);
}

inline void write_augmented_csv(const AugmentedTable& a, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"sample_id"};
    header.insert(header.end(), a.table.otu_names.begin(), a.table.otu_names.end());
    header.push_back("label");
    header.push_back("provenance");
    rows.push_back(std::move(header));
    for (std::size_t i = 0; i < a.table.n(); ++i) {
        std::vector<std::string> row = {a.table.sample_ids[i]};
        for (std::size_t j = 0; j < a.table.p(); ++j)
            row.push_back(format_value(a.table.counts(i, j)));
        row.push_back(std::to_string(a.labels.labels[i]));
        row.push_back(a.provenance[i]);
        rows.push_back(std::move(row));
    }
    csv::write_file(path, rows);
}

inline void write_metadata_csv(const Metadata& m, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"sample_id", "variety", "state"};
    for (const auto& r : response_names()) header.push_back(r);
    rows.push_back(std::move(header));
    for (std::size_t i = 0; i < m.n(); ++i) {
        std::vector<std::string> row = {m.sample_ids[i], m.varieties[i], m.states[i]};
        for (std::size_t c = 0; c < 6; ++c)
            row.push_back(format_value(m.responses(i, c)));
        rows.push_back(std::move(row));
    }
    csv::write_file(path, rows);
}

inline void write_env_csv(const EnvTable& t, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"sample_id"};
    header.insert(header.end(), t.feature_names.begin(), t.feature_names.end());
    rows.push_back(std::move(header));
    for (std::size_t i = 0; i < t.n(); ++i) {
        std::vector<std::string> row = {t.sample_ids[i]};
        for (std::size_t j = 0; j < t.q(); ++j)
            row.push_back(format_value(t.values(i, j)));
        rows.push_back(std::move(row));
    }
    csv::write_file(path, rows);
}

inline void write_matrix_csv(const std::string& path,
                             const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_names,
                             const Matrix& m) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"sample_id"};
    header.insert(header.end(), col_names.begin(), col_names.end());
    rows.push_back(std::move(header));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::vector<std::string> row = {row_ids[i]};
        for (std::size_t j = 0; j < m.cols(); ++j)
            row.push_back(format_value(m(i, j)));
        rows.push_back(std::move(row));
    }
    csv::write_file(path, rows);
}

// ---------------------------------------------------------------------------
// Predictor sets
// ---------------------------------------------------------------------------

inline const std::array<std::string, 14>& predictor_set_names() {
    static const std::array<std::string, 14> names = {
        "ALL-OTU",       "OTU-S0",     "OTU-S1",        "OTU-S2",
        "OTU-S3",        "Alpha",      "Soil",          "DS",
        "Soil+DS",       "Alpha+Soil", "Alpha+Soil+DS", "OTU-S3+Soil",
        "OTU-S3+DS",     "OTU-S3+Soil+DS"};
    return names;
}

struct PredictorSet {
    std::string name;
    bool all_otu = false;
    int otu_subset = -1;  // 0..3 for OTU-S0..S3, -1 when unused
    bool soil = false;
    bool ds = false;
    bool alpha = false;

    bool uses_otu() const { return all_otu || otu_subset >= 0; }
    bool uses_env() const { return soil || ds || alpha; }
};

inline PredictorSet parse_predictor_set(const std::string& name) {
    const auto& known = predictor_set_names();
    if (std::find(known.begin(), known.end(), name) == known.end())
        throw UsageError("unknown predictor set '" + name + "'");
    PredictorSet ps;
    ps.name = name;
    std::stringstream ss(name);
    std::string token;
    while (std::getline(ss, token, '+')) {
        if (token == "ALL-OTU")
            ps.all_otu = true;
        else if (token.rfind("OTU-S", 0) == 0)
            ps.otu_subset = token[5] - '0';
        else if (token == "Soil")
            ps.soil = true;
        else if (token == "DS")
            ps.ds = true;
        else if (token == "Alpha")
            ps.alpha = true;
        else
            throw UsageError("unknown predictor token '" + token + "'");
    }
    return ps;
}

// ---------------------------------------------------------------------------
// Run configuration (flat key = value text format)
// ---------------------------------------------------------------------------

struct RunConfig {
    std::map<TaxonomicLevel, std::string> otu_paths;
    std::string metadata_path, soil_path, ds_path, alpha_path;
    std::string response = "Scab";
    std::string predictor_set = "ALL-OTU";
    std::string model = "rf";
    int nm_index = 1;
    TaxonomicLevel level = TaxonomicLevel::Genus;
    bool augment = false;
    EnvScaler env_scaler = EnvScaler::Standardize;
    std::uint64_t seed = 0;
    int jobs = 0;  // 0: use PHENO_JOBS, else 1
    std::string out_dir = ".";
    bool grid_search = false;
    double test_fraction = 0.2;
    std::size_t min_prevalence = 0;  // 0 disables rare-feature filtering
    int target_per_label = 400;
    double fraction = 0.3;
    double net_threshold = 0.2;
    double net_ridge = 0.1;
    int bnn_chain = 2000;
    int bnn_leapfrog = 100;
    double bnn_step = 0.1;
    std::size_t bnn_capacity = 2'000'000;
    int baseline_strategy = 3;
    int baseline_n = 200;
    double alpha = 0.05;
};

namespace harness_detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("run config: boolean expected for '" + key + "', got '" + v + "'");
}

inline TaxonomicLevel parse_level_any_case(const std::string& s) {
    for (TaxonomicLevel l : kAllLevels) {
        std::string n = level_name(l);
        std::string lo = n, so = s;
        for (auto& c : lo) c = static_cast<char>(std::tolower(c));
        for (auto& c : so) c = static_cast<char>(std::tolower(c));
        if (lo == so) return l;
    }
    throw UsageError("unknown taxonomic level '" + s + "'");
}

}  // namespace harness_detail

inline void set_run_config_key(RunConfig& c, const std::string& key,
                               const std::string& value) {
    using harness_detail::parse_bool;
    if (key == "otu_phylum") c.otu_paths[TaxonomicLevel::Phylum] = value;
    else if (key == "otu_class") c.otu_paths[TaxonomicLevel::Class] = value;
    else if (key == "otu_order") c.otu_paths[TaxonomicLevel::Order] = value;
    else if (key == "otu_family") c.otu_paths[TaxonomicLevel::Family] = value;
    else if (key == "otu_genus") c.otu_paths[TaxonomicLevel::Genus] = value;
    else if (key == "metadata") c.metadata_path = value;
    else if (key == "soil") c.soil_path = value;
    else if (key == "ds") c.ds_path = value;
    else if (key == "alpha_div") c.alpha_path = value;
    else if (key == "response") c.response = value;
    else if (key == "predictors") c.predictor_set = value;
    else if (key == "model") c.model = value;
    else if (key == "nm") c.nm_index = csv::to_int(value, "run config nm");
    else if (key == "level") c.level = harness_detail::parse_level_any_case(value);
    else if (key == "augment") c.augment = parse_bool(value, key);
    else if (key == "env_scaler") c.env_scaler = parse_env_scaler(value);
    else if (key == "seed")
        c.seed = static_cast<std::uint64_t>(
            std::stoull(value));
    else if (key == "jobs") c.jobs = csv::to_int(value, "run config jobs");
    else if (key == "out") c.out_dir = value;
    else if (key == "grid_search") c.grid_search = parse_bool(value, key);
    else if (key == "test_fraction")
        c.test_fraction = csv::to_double(value, "run config test_fraction");
    else if (key == "min_prevalence")
        c.min_prevalence =
            static_cast<std::size_t>(csv::to_int(value, "run config min_prevalence"));
    else if (key == "target_per_label")
        c.target_per_label = csv::to_int(value, "run config target_per_label");
    else if (key == "fraction") c.fraction = csv::to_double(value, "run config fraction");
    else if (key == "net_threshold")
        c.net_threshold = csv::to_double(value, "run config net_threshold");
    else if (key == "net_ridge")
        c.net_ridge = csv::to_double(value, "run config net_ridge");
    else if (key == "bnn_chain") c.bnn_chain = csv::to_int(value, "run config bnn_chain");
    else if (key == "bnn_leapfrog")
        c.bnn_leapfrog = csv::to_int(value, "run config bnn_leapfrog");
    else if (key == "bnn_step") c.bnn_step = csv::to_double(value, "run config bnn_step");
    else if (key == "bnn_capacity")
        c.bnn_capacity =
            static_cast<std::size_t>(std::stoull(value));
    else if (key == "baseline_strategy")
        c.baseline_strategy = csv::to_int(value, "run config baseline_strategy");
    else if (key == "baseline_n")
        c.baseline_n = csv::to_int(value, "run config baseline_n");
    else if (key == "alpha") c.alpha = csv::to_double(value, "run config alpha");
    else
        throw UsageError("run config: unknown key '" + key + "'");
}

// Lines of `key = value`; '#' starts a comment, blank lines are skipped.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("run config line " + std::to_string(lineno) +
                             ": expected key = value");
        set_run_config_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("run config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), std::move(base));
}

inline int resolve_jobs(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PHENO_JOBS")) {
        try {
            const int j = std::stoi(env);
            if (j > 0) return j;
        } catch (const std::exception&) {
            warn("PHENO_JOBS is not a positive integer; using 1 job");
        }
    }
    return 1;
}

// ---------------------------------------------------------------------------
// Pipeline data bundle and single-cell execution
// ---------------------------------------------------------------------------

struct PipelineData {
    std::map<TaxonomicLevel, OtuTable> tables;
    Metadata meta;  // row order matches every table
    EnvTable soil, ds, alpha;  // optional; empty (n()==0) when absent
};

namespace harness_detail {

inline OtuTable reorder_to_meta(OtuTable t, const Metadata& meta) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < t.n(); ++i) pos[t.sample_ids[i]] = i;
    std::vector<std::size_t> order;
    order.reserve(meta.n());
    for (const auto& id : meta.sample_ids) {
        auto it = pos.find(id);
        if (it == pos.end())
            throw DataError("sample '" + id + "' missing from an OTU table");
        order.push_back(it->second);
    }
    if (t.n() != meta.n())
        throw DataError("OTU table and metadata list different sample sets");
    OtuTable out = t.take_rows(order);
    out.varieties = meta.varieties;
    return out;
}

inline EnvTable reorder_env_to_meta(EnvTable t, const Metadata& meta) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < t.n(); ++i) pos[t.sample_ids[i]] = i;
    EnvTable out = t;
    out.sample_ids = meta.sample_ids;
    out.values = Matrix(meta.n(), t.q());
    for (std::size_t i = 0; i < meta.n(); ++i) {
        auto it = pos.find(meta.sample_ids[i]);
        if (it == pos.end())
            throw DataError("sample '" + meta.sample_ids[i] +
                            "' missing from env table");
        for (std::size_t j = 0; j < t.q(); ++j)
            out.values(i, j) = t.values(it->second, j);
    }
    return out;
}

inline Metadata meta_subset(const Metadata& meta, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < meta.n(); ++i) pos[meta.sample_ids[i]] = i;
    Metadata out;
    out.responses = Matrix(ids.size(), 6);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = pos.find(ids[i]);
        if (it == pos.end())
            throw DataError("meta_subset: sample '" + ids[i] + "' missing");
        out.sample_ids.push_back(ids[i]);
        out.varieties.push_back(meta.varieties[it->second]);
        out.states.push_back(meta.states[it->second]);
        for (std::size_t c = 0; c < 6; ++c)
            out.responses(i, c) = meta.responses(it->second, c);
    }
    return out;
}

}  // namespace harness_detail

inline PipelineData pipeline_from_synth(MultiLevelSynth s) {
    PipelineData d;
    d.tables = std::move(s.tables);
    d.meta = std::move(s.meta);
    d.soil = std::move(s.soil);
    d.ds = std::move(s.ds);
    d.alpha = std::move(s.alpha);
    return d;
}

inline PipelineData load_pipeline_data(const RunConfig& cfg) {
    if (cfg.metadata_path.empty()) throw UsageError("run config: metadata path required");
    PipelineData d;
    d.meta = load_metadata(cfg.metadata_path);
    if (cfg.otu_paths.empty()) throw UsageError("run config: at least one OTU table");
    for (const auto& [level, path] : cfg.otu_paths)
        d.tables.emplace(level, harness_detail::reorder_to_meta(
                                    load_otu_table(path, level), d.meta));
    if (!cfg.soil_path.empty())
        d.soil = harness_detail::reorder_env_to_meta(
            load_env_table(cfg.soil_path, EnvGroup::Soil), d.meta);
    if (!cfg.ds_path.empty())
        d.ds = harness_detail::reorder_env_to_meta(
            load_env_table(cfg.ds_path, EnvGroup::DS), d.meta);
    if (!cfg.alpha_path.empty())
        d.alpha = harness_detail::reorder_env_to_meta(
            load_env_table(cfg.alpha_path, EnvGroup::Alpha), d.meta);
    return d;
}

struct CellSpec {
    int nm_index = 1;
    TaxonomicLevel level = TaxonomicLevel::Genus;
    bool augment = false;
    std::string model = "rf";
    std::string predictor_set = "ALL-OTU";
    EnvScaler env_scaler = EnvScaler::Standardize;
    std::string response = "Scab";
    std::uint64_t cell_seed = 0;
    std::uint64_t split_seed = 0;
    double test_fraction = 0.2;
    bool grid_search = false;
    int target_per_label = 400;
    std::size_t min_prevalence = 0;
    double fraction = 0.3;
    double net_threshold = 0.2;
    double net_ridge = 0.1;
    int bnn_chain = 2000;
    int bnn_leapfrog = 100;
    double bnn_step = 0.1;
    std::size_t bnn_capacity = 2'000'000;
};

struct CellOutcome {
    std::string status = "ok";  // "ok" | "skipped: capacity" | "error: ..."
    Metrics metrics;
    std::size_t n_train = 0, n_test = 0, n_features = 0, n_synthetic = 0;
    std::string model_summary;

    bool ok() const { return status == "ok"; }
};

namespace harness_detail {

inline std::vector<int> subset_labels(const std::vector<int>& labels,
                                      const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
}

// Environmental rows for the given sample ids; synthetic samples borrow the
// row of their provenance source.
inline Matrix env_rows_for(const EnvTable& env, const std::vector<std::string>& ids,
                           const std::vector<std::string>& provenance) {
    if (env.n() == 0)
        throw DataError("predictor set needs env table '" +
                        std::string(env_group_name(env.group)) + "' but none was given");
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < env.n(); ++i) pos[env.sample_ids[i]] = i;
    Matrix out(ids.size(), env.q());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::string& id =
            (!provenance.empty() && !provenance[i].empty()) ? provenance[i] : ids[i];
        auto it = pos.find(id);
        if (it == pos.end())
            throw DataError("env_rows_for: sample '" + id + "' missing from env table");
        for (std::size_t j = 0; j < env.q(); ++j) out(i, j) = env.values(it->second, j);
    }
    return out;
}

inline void append_block(Matrix& dest, std::vector<std::string>& names,
                         const Matrix& block, const std::vector<std::string>& block_names) {
    if (dest.cols() == 0 && dest.rows() == 0) {
        dest = block;
        names = block_names;
        return;
    }
    if (dest.rows() != block.rows()) throw UsageError("append_block: row mismatch");
    Matrix merged(dest.rows(), dest.cols() + block.cols());
    for (std::size_t i = 0; i < dest.rows(); ++i) {
        for (std::size_t j = 0; j < dest.cols(); ++j) merged(i, j) = dest(i, j);
        for (std::size_t j = 0; j < block.cols(); ++j)
            merged(i, dest.cols() + j) = block(i, j);
    }
    dest = std::move(merged);
    names.insert(names.end(), block_names.begin(), block_names.end());
}

inline std::string describe_forest(const ForestConfig& cfg) {
    std::ostringstream os;
    os << "rf n_estimators=" << cfg.n_estimators
       << " min_samples_split=" << cfg.min_samples_split
       << " min_samples_leaf=" << cfg.min_samples_leaf
       << " max_depth=" << cfg.max_depth << " criterion="
       << criterion_name(cfg.criterion);
    return os.str();
}

}  // namespace harness_detail

// Executes one pipeline configuration end to end: preprocessing, split,
// optional augmentation, predictor assembly (with feature selection for the
// OTU-S* sets), model fit, and held-out evaluation.
inline CellOutcome run_cell_impl(const PipelineData& data, const CellSpec& spec) {
    using namespace harness_detail;
    CellOutcome out;
    auto table_it = data.tables.find(spec.level);
    if (table_it == data.tables.end())
        throw UsageError(std::string("no OTU table loaded for level ") +
                         level_name(spec.level));
    OtuTable raw = table_it->second;
    if (spec.min_prevalence > 0)
        raw = filter_rare_otus(raw, static_cast<int>(spec.min_prevalence));
    Metadata meta = (raw.n() == data.meta.n())
                        ? data.meta
                        : meta_subset(data.meta, raw.sample_ids);
    if (raw.varieties.empty()) raw.varieties = meta.varieties;
    const BinaryLabels labels = binarize_response(meta, spec.response);

    const PreprocessSpec pp = nm_spec(spec.nm_index, derive_seed(spec.cell_seed, 7));
    SplitPlan plan;
    plan.test_fraction = spec.test_fraction;
    plan.seed = spec.split_seed;
    const Split sp = split(raw.n(), labels.labels, plan);

    OtuTable train_t, test_t;
    std::vector<int> ytr = subset_labels(labels.labels, sp.train);
    const std::vector<int> yte = subset_labels(labels.labels, sp.test);
    std::vector<std::string> provenance;  // per train row, "" for originals

    const bool rarefy_aug =
        spec.augment && pp.norm.kind == Normalization::Kind::Rarefy;
    if (!rarefy_aug) {
        const OtuTable processed = apply_preprocess(raw, pp);
        train_t = processed.take_rows(sp.train);
        test_t = processed.take_rows(sp.test);
        if (spec.augment) {
            AugmentSpec aspec;
            aspec.target_per_label = spec.target_per_label;
            aspec.seed = derive_seed(spec.cell_seed, 8);
            BinaryLabels lab_tr{labels.response_name, ytr};
            AugmentedTable aug = augment_training(train_t, lab_tr, aspec);
            train_t = std::move(aug.table);
            ytr = std::move(aug.labels.labels);
            provenance = std::move(aug.provenance);
            out.n_synthetic = provenance.size() -
                              static_cast<std::size_t>(std::count(
                                  provenance.begin(), provenance.end(), std::string()));
        }
    } else {
        // Rarefaction needs integer counts, so augmentation happens on the
        // raw training counts, synthetic rows are rounded, and both sides
        // are rarefied to the original full-table minimum depth.
        double min_depth = 0.0;
        for (std::size_t i = 0; i < raw.n(); ++i) {
            const double d = raw.depth(i);
            if (i == 0 || d < min_depth) min_depth = d;
        }
        OtuTable train_raw = raw.take_rows(sp.train);
        OtuTable test_raw = raw.take_rows(sp.test);
        AugmentSpec aspec;
        aspec.target_per_label = spec.target_per_label;
        aspec.seed = derive_seed(spec.cell_seed, 8);
        BinaryLabels lab_tr{labels.response_name, ytr};
        AugmentedTable aug = augment_training(train_raw, lab_tr, aspec);
        for (std::size_t i = 0; i < aug.table.n(); ++i)
            if (!aug.provenance[i].empty())
                for (std::size_t j = 0; j < aug.table.p(); ++j)
                    aug.table.counts(i, j) = std::floor(aug.table.counts(i, j) + 0.5);
        Normalization norm = pp.norm;
        norm.depth_target = min_depth;
        train_t = replace_zeros(normalize(aug.table, norm), pp.zero);
        test_t = replace_zeros(normalize(test_raw, norm), pp.zero);
        ytr = std::move(aug.labels.labels);
        provenance = std::move(aug.provenance);
        out.n_synthetic = provenance.size() -
                          static_cast<std::size_t>(std::count(
                              provenance.begin(), provenance.end(), std::string()));
    }

    const PredictorSet ps = parse_predictor_set(spec.predictor_set);
    Matrix Ftr(0, 0), Fte(0, 0);
    std::vector<std::string> feat_names, test_names;
    if (ps.uses_otu()) {
        Matrix otu_tr = train_t.counts;
        Matrix otu_te = test_t.counts;
        std::vector<std::string> otu_names = train_t.otu_names;
        if (ps.otu_subset >= 0) {
            FeatureSelectionOptions fopt;
            fopt.fraction = spec.fraction;
            fopt.net_threshold = spec.net_threshold;
            fopt.net_ridge = spec.net_ridge;
            fopt.seed = derive_seed(spec.cell_seed, 9);
            const FeatureSelectionResult fr =
                run_feature_selection(otu_tr, ytr, otu_names, fopt);
            const std::vector<std::string>* sel = nullptr;
            switch (ps.otu_subset) {
                case 0: sel = &fr.s0; break;
                case 1: sel = &fr.s1; break;
                case 2: sel = &fr.s2; break;
                case 3: sel = &fr.s3; break;
                default: throw UsageError("invalid OTU subset");
            }
            std::unordered_map<std::string, std::size_t> col_of;
            for (std::size_t j = 0; j < otu_names.size(); ++j) col_of[otu_names[j]] = j;
            std::vector<std::size_t> cols;
            for (const auto& name : *sel) cols.push_back(col_of.at(name));
            otu_tr = otu_tr.take_cols(cols);
            otu_te = otu_te.take_cols(cols);
            otu_names = *sel;
        }
        append_block(Ftr, feat_names, otu_tr, otu_names);
        append_block(Fte, test_names, otu_te, otu_names);
    }
    if (ps.uses_env()) {
        // Scale on train originals only, then slice back apart.
        std::vector<const EnvTable*> blocks;
        if (ps.alpha) blocks.push_back(&data.alpha);
        if (ps.soil) blocks.push_back(&data.soil);
        if (ps.ds) blocks.push_back(&data.ds);
        std::vector<std::size_t> fit_rows;
        for (std::size_t i = 0; i < train_t.n(); ++i)
            if (provenance.empty() || provenance[i].empty()) fit_rows.push_back(i);
        for (const EnvTable* block : blocks) {
            const Matrix tr_rows = env_rows_for(*block, train_t.sample_ids, provenance);
            const Matrix te_rows = env_rows_for(*block, test_t.sample_ids, {});
            EnvTable stacked;
            stacked.group = block->group;
            stacked.feature_names = block->feature_names;
            stacked.values = Matrix(tr_rows.rows() + te_rows.rows(), block->q());
            stacked.sample_ids.reserve(stacked.values.rows());
            for (std::size_t i = 0; i < tr_rows.rows(); ++i) {
                stacked.sample_ids.push_back(train_t.sample_ids[i]);
                for (std::size_t j = 0; j < block->q(); ++j)
                    stacked.values(i, j) = tr_rows(i, j);
            }
            for (std::size_t i = 0; i < te_rows.rows(); ++i) {
                stacked.sample_ids.push_back(test_t.sample_ids[i]);
                for (std::size_t j = 0; j < block->q(); ++j)
                    stacked.values(tr_rows.rows() + i, j) = te_rows(i, j);
            }
            const EnvTable scaled = scale_env(stacked, spec.env_scaler, fit_rows);
            Matrix str(tr_rows.rows(), block->q()), ste(te_rows.rows(), block->q());
            for (std::size_t i = 0; i < tr_rows.rows(); ++i)
                for (std::size_t j = 0; j < block->q(); ++j)
                    str(i, j) = scaled.values(i, j);
            for (std::size_t i = 0; i < te_rows.rows(); ++i)
                for (std::size_t j = 0; j < block->q(); ++j)
                    ste(i, j) = scaled.values(tr_rows.rows() + i, j);
            append_block(Ftr, feat_names, str, block->feature_names);
            append_block(Fte, test_names, ste, block->feature_names);
        }
    }
    if (Ftr.cols() == 0) throw UsageError("predictor set produced no features");

    out.n_train = Ftr.rows();
    out.n_test = Fte.rows();
    out.n_features = Ftr.cols();

    std::vector<int> preds;
    if (spec.model == "rf") {
        ForestConfig cfg;
        std::string summary;
        if (spec.grid_search) {
            const GridSearchResult gs = grid_search_cv(
                Ftr, ytr, default_forest_grid(), 10, derive_seed(spec.cell_seed, 1), 1);
            cfg = gs.best;
            std::ostringstream os;
            os << harness_detail::describe_forest(cfg) << " cv_weighted_f1="
               << gs.mean_scores[gs.best_index];
            summary = os.str();
        } else {
            summary = harness_detail::describe_forest(cfg);
        }
        cfg.seed = derive_seed(spec.cell_seed, 2);
        RandomForest forest;
        forest.fit(Ftr, ytr, cfg);
        preds = forest.predict(Fte);
        out.model_summary = summary;
    } else if (spec.model == "bnn") {
        BnnArchitecture arch;
        arch.input_width = Ftr.cols();
        arch.capacity_cap = spec.bnn_capacity;
        arch.validate();  // CapacityError -> "skipped: capacity"
        HmcConfig hmc;
        hmc.chain_length = spec.bnn_chain;
        hmc.leapfrog_length = spec.bnn_leapfrog;
        hmc.step_size = spec.bnn_step;
        hmc.seed = derive_seed(spec.cell_seed, 3);
        const PosteriorSamples post = train_bnn(Ftr, ytr, arch, hmc);
        preds.reserve(Fte.rows());
        for (std::size_t i = 0; i < Fte.rows(); ++i) {
            std::vector<double> x(Fte.row_ptr(i), Fte.row_ptr(i) + Fte.cols());
            preds.push_back(predict_bnn_class(post, x));
        }
        std::ostringstream os;
        os << "bnn weights=" << arch.weight_count()
           << " acceptance=" << post.acceptance_rate
           << " post_burn_acceptance=" << post.post_burn_acceptance
           << " final_step=" << post.final_step_size;
        out.model_summary = os.str();
    } else {
        throw UsageError("unknown model '" + spec.model + "' (use rf or bnn)");
    }
    out.metrics = weighted_f1(yte, preds);
    return out;
}

inline CellOutcome run_cell(const PipelineData& data, const CellSpec& spec) {
    try {
        return run_cell_impl(data, spec);
    } catch (const CapacityError&) {
        CellOutcome out;
        out.status = "skipped: capacity";
        return out;
    } catch (const Error& e) {
        CellOutcome out;
        out.status = std::string("error: ") + e.what();
        return out;
    }
}

// Shared scoring runner for randomization baselines: stratified split, a
// default-configuration forest, weighted F1 on the held-out side. All
// randomness comes from the given seed.
inline double rf_eval_runner(const Matrix& X, const std::vector<int>& y,
                             std::uint64_t seed, double test_fraction = 0.2) {
    SplitPlan plan;
    plan.test_fraction = test_fraction;
    plan.seed = derive_seed(seed, 50);
    const Split sp = split(X.rows(), y, plan);
    ForestConfig cfg;
    cfg.seed = derive_seed(seed, 51);
    RandomForest forest;
    forest.fit(X.take_rows(sp.train), harness_detail::subset_labels(y, sp.train), cfg);
    const std::vector<int> preds = forest.predict(X.take_rows(sp.test));
    return weighted_f1(harness_detail::subset_labels(y, sp.test), preds).weighted;
}

// ---------------------------------------------------------------------------
// Result records and JSONL persistence
// ---------------------------------------------------------------------------

inline ordered_json cell_record(const CellSpec& spec, const CellOutcome& out) {
    ordered_json j;
    j["nm"] = spec.nm_index;
    j["nm_label"] = nm_label(nm_spec(spec.nm_index));
    j["level"] = level_name(spec.level);
    j["aug"] = spec.augment ? 1 : 0;
    j["model"] = spec.model;
    j["predictors"] = spec.predictor_set;
    j["response"] = spec.response;
    j["cell_seed"] = spec.cell_seed;
    j["split_seed"] = spec.split_seed;
    j["test_fraction"] = spec.test_fraction;
    j["status"] = out.status;
    if (out.ok()) {
        j["n_train"] = out.n_train;
        j["n_test"] = out.n_test;
        j["n_features"] = out.n_features;
        j["n_synthetic"] = out.n_synthetic;
        j["f1_class0"] = out.metrics.f1[0];
        j["f1_class1"] = out.metrics.f1[1];
        j["weighted_f1"] = out.metrics.weighted;
        j["model_summary"] = out.model_summary;
    }
    return j;
}

inline void write_jsonl(const std::string& path, const std::vector<ordered_json>& records) {
    std::ofstream outf(path, std::ios::binary);
    if (!outf) throw DataError("write_jsonl: cannot open " + path);
    for (const auto& r : records) outf << r.dump() << '\n';
}

inline ordered_json fms_record_json(const FmsRecord& r) {
    ordered_json j;
    j["aug"] = r.aug;
    j["nm"] = r.nm_index;
    j["level"] = level_name(r.level);
    j["f1"] = r.f1;
    return j;
}

inline void write_fms_jsonl(const std::string& path, const std::vector<FmsRecord>& recs) {
    std::vector<ordered_json> lines;
    lines.reserve(recs.size());
    for (const auto& r : recs) lines.push_back(fms_record_json(r));
    write_jsonl(path, lines);
}

// Accepts both fms_records.jsonl lines ({aug, nm, level, f1}) and full
// result records (weighted_f1 + status); failed cells are excluded with a
// logged count.
inline std::vector<FmsRecord> load_fms_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_fms_records: cannot open " + path);
    std::vector<FmsRecord> out;
    std::size_t excluded = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("load_fms_records: line " + std::to_string(lineno) + ": " +
                            e.what());
        }
        if (j.contains("status") && j["status"].get<std::string>() != "ok") {
            ++excluded;
            continue;
        }
        FmsRecord r;
        r.aug = j.at("aug").get<int>();
        r.nm_index = j.at("nm").get<int>();
        r.level = parse_level(j.at("level").get<std::string>());
        if (j.contains("f1"))
            r.f1 = j.at("f1").get<double>();
        else if (j.contains("weighted_f1"))
            r.f1 = j.at("weighted_f1").get<double>();
        else {
            ++excluded;
            continue;
        }
        r.validate();
        out.push_back(r);
    }
    if (excluded > 0)
        warn("load_fms_records: excluded " + std::to_string(excluded) +
             " records without a usable score");
    return out;
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

namespace harness_detail {

inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(jobs), n));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!failed.exchange(true)) first_error = e.what();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed) throw Error("parallel_for: worker failed: " + first_error);
}

}  // namespace harness_detail

struct GridOptions {
    std::string model = "rf";
    std::string predictor_set = "ALL-OTU";
    std::string response = "Scab";
    bool grid_search = false;
    std::uint64_t seed = 0;
    int jobs = 1;
    double test_fraction = 0.2;
    int target_per_label = 400;
    std::size_t min_prevalence = 0;
    double fraction = 0.3;
    double net_threshold = 0.2;
    double net_ridge = 0.1;
    int bnn_chain = 2000;
    int bnn_leapfrog = 100;
    double bnn_step = 0.1;
    std::size_t bnn_capacity = 2'000'000;
};

struct GridOutput {
    std::vector<ordered_json> records;  // canonical (nm, level, aug) order
    std::vector<FmsRecord> fms;         // successful cells only
    std::size_t n_failed = 0;
    std::size_t n_skipped = 0;
};

// All 20 x 5 x 2 cells, executed in any order up to `jobs` wide, emitted in
// canonical (nm, level, aug) order. Each cell's seed is derived from the
// master seed and its coordinates, so output is identical for any job count.
inline GridOutput run_grid(const PipelineData& data, const GridOptions& opt) {
    std::vector<CellSpec> cells;
    for (int nm = 1; nm <= 20; ++nm) {
        for (std::size_t li = 0; li < kAllLevels.size(); ++li) {
            for (int aug = 0; aug <= 1; ++aug) {
                CellSpec spec;
                spec.nm_index = nm;
                spec.level = kAllLevels[li];
                spec.augment = aug == 1;
                spec.model = opt.model;
                spec.predictor_set = opt.predictor_set;
                spec.response = opt.response;
                spec.grid_search = opt.grid_search;
                spec.test_fraction = opt.test_fraction;
                spec.target_per_label = opt.target_per_label;
                spec.min_prevalence = opt.min_prevalence;
                spec.fraction = opt.fraction;
                spec.net_threshold = opt.net_threshold;
                spec.net_ridge = opt.net_ridge;
                spec.bnn_chain = opt.bnn_chain;
                spec.bnn_leapfrog = opt.bnn_leapfrog;
                spec.bnn_step = opt.bnn_step;
                spec.bnn_capacity = opt.bnn_capacity;
                spec.cell_seed = derive_seed(opt.seed, static_cast<std::uint64_t>(nm),
                                             li, static_cast<std::uint64_t>(aug));
                spec.split_seed = derive_seed(opt.seed, 100 + li);
                cells.push_back(spec);
            }
        }
    }
    std::vector<CellOutcome> outcomes(cells.size());
    harness_detail::parallel_for(
        cells.size(), resolve_jobs(opt.jobs),
        [&](std::size_t i) { outcomes[i] = run_cell(data, cells[i]); });

    GridOutput out;
    out.records.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out.records.push_back(cell_record(cells[i], outcomes[i]));
        if (outcomes[i].ok()) {
            FmsRecord r;
            r.aug = cells[i].augment ? 1 : 0;
            r.nm_index = cells[i].nm_index;
            r.level = cells[i].level;
            r.f1 = outcomes[i].metrics.weighted;
            out.fms.push_back(r);
        } else if (outcomes[i].status.rfind("skipped", 0) == 0) {
            ++out.n_skipped;
        } else {
            ++out.n_failed;
        }
    }
    if (out.n_failed > 0)
        warn("run_grid: " + std::to_string(out.n_failed) + " cells failed");
    if (out.n_skipped > 0)
        warn("run_grid: " + std::to_string(out.n_skipped) + " cells skipped");
    return out;
}

}  // namespace otupred
