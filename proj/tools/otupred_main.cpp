// Command-line front end: synthetic data generation, preprocessing,
// augmentation, feature selection, network comparison, model training and
// evaluation, randomization baselines, grid runs, and configuration-tree
// summaries. Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "otupred/harness.hpp"
#include "otupred/netinfer.hpp"

namespace fs = std::filesystem;
using namespace otupred;

namespace {

void ensure_out_dir(const std::string& dir) {
    if (!dir.empty() && dir != ".") fs::create_directories(dir);
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << text;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(c));
    return s;
}

std::size_t level_index(TaxonomicLevel level) {
    for (std::size_t i = 0; i < kAllLevels.size(); ++i)
        if (kAllLevels[i] == level) return i;
    throw UsageError("invalid taxonomic level");
}

// Loads the single level table named by cfg.level (plus env blocks if paths
// are set); `single_otu` overrides the per-level path map when given.
PipelineData load_single_level(RunConfig& cfg, const std::string& single_otu) {
    if (!single_otu.empty()) cfg.otu_paths = {{cfg.level, single_otu}};
    if (cfg.otu_paths.find(cfg.level) == cfg.otu_paths.end())
        throw UsageError(std::string("no OTU table given for level ") +
                         level_name(cfg.level) + " (use --otu or otu_<level>= keys)");
    RunConfig only = cfg;
    only.otu_paths = {{cfg.level, cfg.otu_paths.at(cfg.level)}};
    return load_pipeline_data(only);
}

CellSpec cell_from_config(const RunConfig& cfg) {
    CellSpec spec;
    spec.nm_index = cfg.nm_index;
    spec.level = cfg.level;
    spec.augment = cfg.augment;
    spec.model = cfg.model;
    spec.predictor_set = cfg.predictor_set;
    spec.env_scaler = cfg.env_scaler;
    spec.response = cfg.response;
    spec.cell_seed = cfg.seed;
    spec.split_seed = derive_seed(cfg.seed, 100 + level_index(cfg.level));
    spec.test_fraction = cfg.test_fraction;
    spec.grid_search = cfg.grid_search;
    spec.target_per_label = cfg.target_per_label;
    spec.min_prevalence = cfg.min_prevalence;
    spec.fraction = cfg.fraction;
    spec.net_threshold = cfg.net_threshold;
    spec.net_ridge = cfg.net_ridge;
    spec.bnn_chain = cfg.bnn_chain;
    spec.bnn_leapfrog = cfg.bnn_leapfrog;
    spec.bnn_step = cfg.bnn_step;
    spec.bnn_capacity = cfg.bnn_capacity;
    return spec;
}

std::vector<int> read_label_csv(const std::string& path) {
    const auto rows = csv::read_file(path);
    if (rows.size() < 2) throw DataError("label csv: no data rows in " + path);
    std::vector<int> labels;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].empty()) continue;
        const std::string& cell = rows[r].back();
        labels.push_back(csv::to_int(cell, "label csv"));
    }
    return labels;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        RunConfig base;
        // The config file is applied before flag parsing so that explicit
        // command-line flags override file values.
        for (int i = 1; i + 1 < argc; ++i)
            if (std::strcmp(argv[i], "--config") == 0)
                base = load_run_config(argv[i + 1], base);

        CLI::App app{"Microbiome phenotype prediction pipeline"};
        app.require_subcommand(1);
        std::string config_path;
        app.add_option("--config", config_path, "flat key=value run file");
        app.add_option("--seed", base.seed, "master random seed");
        app.add_option("--out", base.out_dir, "output directory");
        app.add_option("--jobs", base.jobs,
                       "worker threads (0: use PHENO_JOBS, default 1)");

        std::string level_str, otu_path, scaler_str = env_scaler_name(base.env_scaler);

        auto add_level = [&](CLI::App* sub) {
            sub->add_option("--level", level_str,
                            "taxonomic level (Phylum/Class/Order/Family/Genus)");
        };
        auto add_inputs = [&](CLI::App* sub, bool all_levels) {
            if (all_levels) {
                sub->add_option("--otu-phylum", base.otu_paths[TaxonomicLevel::Phylum]);
                sub->add_option("--otu-class", base.otu_paths[TaxonomicLevel::Class]);
                sub->add_option("--otu-order", base.otu_paths[TaxonomicLevel::Order]);
                sub->add_option("--otu-family", base.otu_paths[TaxonomicLevel::Family]);
                sub->add_option("--otu-genus", base.otu_paths[TaxonomicLevel::Genus]);
            }
            sub->add_option("--otu", otu_path, "OTU count table csv");
            sub->add_option("--metadata", base.metadata_path, "metadata csv");
            sub->add_option("--soil", base.soil_path, "soil covariates csv");
            sub->add_option("--ds", base.ds_path, "disease-suppression covariates csv");
            sub->add_option("--alpha-div", base.alpha_path, "alpha-diversity csv");
            sub->add_option("--response", base.response, "response column name");
        };

        // ------------------------------------------------------------ synth
        SynthConfig synth_cfg;
        auto* synth_cmd = app.add_subcommand("synth", "generate synthetic inputs");
        synth_cmd->add_option("--n", synth_cfg.n, "samples");
        synth_cmd->add_option("--p", synth_cfg.p, "features at the finest level");
        synth_cmd->add_option("--signal", synth_cfg.n_signal, "signal features");
        synth_cmd->add_option("--effect", synth_cfg.effect, "mean shift multiplier");
        synth_cmd->add_option("--imbalance", synth_cfg.imbalance,
                              "label-1 probability");
        synth_cmd->callback([&] {
            synth_cfg.seed = base.seed;
            ensure_out_dir(base.out_dir);
            MultiLevelSynth ms = synth_multi_level(synth_cfg);
            for (const auto& [level, table] : ms.tables)
                write_otu_csv(table, join_path(base.out_dir,
                                               "otu_" + lower(level_name(level)) +
                                                   ".csv"));
            write_metadata_csv(ms.meta, join_path(base.out_dir, "metadata.csv"));
            write_env_csv(ms.soil, join_path(base.out_dir, "env_soil.csv"));
            write_env_csv(ms.ds, join_path(base.out_dir, "env_ds.csv"));
            write_env_csv(ms.alpha, join_path(base.out_dir, "env_alpha.csv"));
            std::cout << "wrote synthetic tables for " << ms.tables.size()
                      << " levels to " << base.out_dir << "\n";
        });

        // ------------------------------------------------------- preprocess
        auto* prep_cmd = app.add_subcommand("preprocess", "apply one NM combination");
        add_inputs(prep_cmd, false);
        add_level(prep_cmd);
        prep_cmd->add_option("--nm", base.nm_index, "combination index 1..20")
            ->check(CLI::Range(1, 20));
        prep_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            if (otu_path.empty()) throw UsageError("preprocess: --otu is required");
            OtuTable t = load_otu_table(otu_path, base.level);
            const PreprocessSpec pp = nm_spec(base.nm_index, derive_seed(base.seed, 7));
            const OtuTable proc = apply_preprocess(t, pp);
            ensure_out_dir(base.out_dir);
            const std::string out_path = join_path(base.out_dir, "preprocessed.csv");
            write_otu_csv(proc, out_path);
            std::cout << nm_label(pp) << " -> " << out_path << "\n";
        });

        // ---------------------------------------------------------- augment
        auto* aug_cmd = app.add_subcommand("augment", "Gaussian label-balanced augmentation");
        add_inputs(aug_cmd, false);
        add_level(aug_cmd);
        aug_cmd->add_option("--target", base.target_per_label, "samples per label");
        aug_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            if (otu_path.empty() || base.metadata_path.empty())
                throw UsageError("augment: --otu and --metadata are required");
            Metadata meta = load_metadata(base.metadata_path);
            OtuTable t = harness_detail::reorder_to_meta(
                load_otu_table(otu_path, base.level), meta);
            const BinaryLabels labels = binarize_response(meta, base.response);
            AugmentSpec spec;
            spec.target_per_label = base.target_per_label;
            spec.seed = base.seed;
            const AugmentedTable aug = augment_training(t, labels, spec);
            ensure_out_dir(base.out_dir);
            const std::string out_path = join_path(base.out_dir, "augmented.csv");
            write_augmented_csv(aug, out_path);
            std::cout << "augmented " << t.n() << " -> " << aug.table.n()
                      << " samples (" << aug.n_synthetic() << " synthetic) -> "
                      << out_path << "\n";
        });

        // -------------------------------------------------- select-features
        auto* sel_cmd = app.add_subcommand("select-features",
                                           "criteria scores and predictor subsets");
        add_inputs(sel_cmd, false);
        add_level(sel_cmd);
        sel_cmd->add_option("--nm", base.nm_index)->check(CLI::Range(1, 20));
        sel_cmd->add_option("--fraction", base.fraction, "selected fraction");
        sel_cmd->add_option("--net-threshold", base.net_threshold);
        sel_cmd->add_option("--net-ridge", base.net_ridge);
        sel_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            if (otu_path.empty() || base.metadata_path.empty())
                throw UsageError("select-features: --otu and --metadata are required");
            Metadata meta = load_metadata(base.metadata_path);
            OtuTable t = harness_detail::reorder_to_meta(
                load_otu_table(otu_path, base.level), meta);
            const BinaryLabels labels = binarize_response(meta, base.response);
            const OtuTable proc =
                apply_preprocess(t, nm_spec(base.nm_index, derive_seed(base.seed, 7)));
            FeatureSelectionOptions opt;
            opt.fraction = base.fraction;
            opt.net_threshold = base.net_threshold;
            opt.net_ridge = base.net_ridge;
            opt.seed = base.seed;
            const FeatureSelectionResult res =
                run_feature_selection(proc.counts, labels.labels, proc.otu_names, opt);
            ensure_out_dir(base.out_dir);
            csv::write_file(join_path(base.out_dir, "scores.csv"),
                            featsel_score_rows(res));
            ordered_json sets;
            sets["OTU-S0"] = res.s0;
            sets["OTU-S1"] = res.s1;
            sets["OTU-S2"] = res.s2;
            sets["OTU-S3"] = res.s3;
            write_text(join_path(base.out_dir, "selected.json"), sets.dump(2) + "\n");
            std::cout << "scores.csv and selected.json written to " << base.out_dir
                      << " (|S0|=" << res.s0.size() << " |S1|=" << res.s1.size()
                      << " |S2|=" << res.s2.size() << " |S3|=" << res.s3.size()
                      << ")\n";
        });

        // ------------------------------------------------------ net-compare
        auto* net_cmd = app.add_subcommand(
            "net-compare", "class-conditional association networks");
        add_inputs(net_cmd, false);
        add_level(net_cmd);
        net_cmd->add_option("--nm", base.nm_index)->check(CLI::Range(1, 20));
        net_cmd->add_option("--net-threshold", base.net_threshold);
        net_cmd->add_option("--net-ridge", base.net_ridge);
        net_cmd->add_option("--fraction", base.fraction);
        net_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            if (otu_path.empty() || base.metadata_path.empty())
                throw UsageError("net-compare: --otu and --metadata are required");
            Metadata meta = load_metadata(base.metadata_path);
            OtuTable t = harness_detail::reorder_to_meta(
                load_otu_table(otu_path, base.level), meta);
            const BinaryLabels labels = binarize_response(meta, base.response);
            const OtuTable proc =
                apply_preprocess(t, nm_spec(base.nm_index, derive_seed(base.seed, 7)));
            std::vector<std::size_t> rows0, rows1;
            for (std::size_t i = 0; i < labels.n(); ++i)
                (labels.labels[i] == 0 ? rows0 : rows1).push_back(i);
            const Matrix X0 = proc.counts.take_rows(rows0);
            const Matrix X1 = proc.counts.take_rows(rows1);
            const AssociationNetwork n0 =
                infer_network(X0, proc.otu_names, base.net_threshold, base.net_ridge);
            const AssociationNetwork n1 =
                infer_network(X1, proc.otu_names, base.net_threshold, base.net_ridge);
            const NetworkComparison cmp = compare_networks(n0, n1);
            ensure_out_dir(base.out_dir);
            std::vector<std::vector<std::string>> rows = {
                {"node", "degree_class0", "degree_class1", "abs_diff"}};
            for (const auto& e : cmp.ranked)
                rows.push_back({e.node, std::to_string(e.degree0),
                                std::to_string(e.degree1), std::to_string(e.diff)});
            csv::write_file(join_path(base.out_dir, "degree_diff.csv"), rows);
            write_text(join_path(base.out_dir, "network_class0.dot"),
                       export_network_dot(n0));
            write_text(join_path(base.out_dir, "network_class1.dot"),
                       export_network_dot(n1));
            const auto selected = select_by_degree_diff(cmp, base.fraction);
            ordered_json j;
            j["selected"] = selected;
            write_text(join_path(base.out_dir, "net_selected.json"), j.dump(2) + "\n");
            std::cout << "degree_diff.csv, dot files, net_selected.json -> "
                      << base.out_dir << "\n";
        });

        // ------------------------------------------------------------ train
        auto* train_cmd = app.add_subcommand("train", "fit one pipeline cell and evaluate");
        add_inputs(train_cmd, true);
        add_level(train_cmd);
        train_cmd->add_option("--model", base.model)
            ->check(CLI::IsMember({"rf", "bnn"}));
        train_cmd
            ->add_option("--predictors", base.predictor_set)
            ->check(CLI::IsMember(std::vector<std::string>(
                predictor_set_names().begin(), predictor_set_names().end())));
        train_cmd->add_option("--nm", base.nm_index)->check(CLI::Range(1, 20));
        train_cmd->add_flag("--aug", base.augment, "augment the training split");
        train_cmd->add_flag("--grid-search", base.grid_search,
                            "cross-validated forest hyperparameter search");
        train_cmd->add_option("--env-scaler", scaler_str)
            ->check(CLI::IsMember({"standardize", "minmax", "maxabs", "robust",
                                   "quantile-normal", "unitnorm"}));
        train_cmd->add_option("--test-fraction", base.test_fraction);
        train_cmd->add_option("--min-prevalence", base.min_prevalence);
        train_cmd->add_option("--target", base.target_per_label);
        train_cmd->add_option("--bnn-chain", base.bnn_chain);
        train_cmd->add_option("--bnn-leapfrog", base.bnn_leapfrog);
        train_cmd->add_option("--bnn-step", base.bnn_step);
        train_cmd->add_option("--bnn-capacity", base.bnn_capacity);
        train_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            base.env_scaler = parse_env_scaler(scaler_str);
            PipelineData data = load_single_level(base, otu_path);
            const CellSpec spec = cell_from_config(base);
            const CellOutcome outcome = run_cell(data, spec);
            const ordered_json record = cell_record(spec, outcome);
            ensure_out_dir(base.out_dir);
            write_text(join_path(base.out_dir, "result.json"), record.dump(2) + "\n");
            std::cout << record.dump() << "\n";
            if (!outcome.ok()) throw DataError("train: " + outcome.status);
        });

        // --------------------------------------------------------- evaluate
        std::string truth_path, pred_path;
        auto* eval_cmd =
            app.add_subcommand("evaluate", "metrics from truth/prediction csvs");
        eval_cmd->add_option("--truth", truth_path, "csv, labels in last column")
            ->required();
        eval_cmd->add_option("--pred", pred_path, "csv, labels in last column")
            ->required();
        eval_cmd->callback([&] {
            const std::vector<int> y_true = read_label_csv(truth_path);
            const std::vector<int> y_pred = read_label_csv(pred_path);
            const Metrics m = weighted_f1(y_true, y_pred);
            ordered_json j;
            j["n"] = y_true.size();
            j["f1_class0"] = m.f1[0];
            j["f1_class1"] = m.f1[1];
            j["precision_class0"] = m.precision[0];
            j["precision_class1"] = m.precision[1];
            j["recall_class0"] = m.recall[0];
            j["recall_class1"] = m.recall[1];
            j["support_class0"] = m.support[0];
            j["support_class1"] = m.support[1];
            j["weighted_f1"] = m.weighted;
            std::cout << j.dump(2) << "\n";
        });

        // --------------------------------------------------------- baseline
        auto* bl_cmd = app.add_subcommand(
            "baseline", "randomization baseline exceedance test");
        add_inputs(bl_cmd, false);
        add_level(bl_cmd);
        bl_cmd->add_option("--nm", base.nm_index)->check(CLI::Range(1, 20));
        bl_cmd->add_option("--strategy", base.baseline_strategy, "1..4")
            ->check(CLI::Range(1, 4));
        bl_cmd->add_option("--replicates", base.baseline_n, "baseline replicates");
        bl_cmd->add_option("--alpha", base.alpha, "significance level");
        bl_cmd->callback([&] {
            if (!level_str.empty())
                base.level = harness_detail::parse_level_any_case(level_str);
            if (otu_path.empty() || base.metadata_path.empty())
                throw UsageError("baseline: --otu and --metadata are required");
            Metadata meta = load_metadata(base.metadata_path);
            OtuTable t = harness_detail::reorder_to_meta(
                load_otu_table(otu_path, base.level), meta);
            const BinaryLabels labels = binarize_response(meta, base.response);
            const OtuTable proc =
                apply_preprocess(t, nm_spec(base.nm_index, derive_seed(base.seed, 7)));
            const double f_original =
                rf_eval_runner(proc.counts, labels.labels, base.seed,
                               base.test_fraction);
            const BaselineTestResult res = exceedance_test(
                f_original, parse_baseline(base.baseline_strategy), proc.counts,
                labels.labels,
                [&](const Matrix& X, const std::vector<int>& y, std::uint64_t seed) {
                    return rf_eval_runner(X, y, seed, base.test_fraction);
                },
                base.baseline_n, base.alpha, base.seed, resolve_jobs(base.jobs));
            ensure_out_dir(base.out_dir);
            std::vector<std::vector<std::string>> rows = {{"replicate", "weighted_f1"}};
            for (std::size_t i = 0; i < res.f_list.size(); ++i)
                rows.push_back({std::to_string(i), format_value(res.f_list[i])});
            csv::write_file(join_path(base.out_dir, "baseline.csv"), rows);
            ordered_json j;
            j["strategy"] = baseline_name(parse_baseline(base.baseline_strategy));
            j["f_original"] = res.f_original;
            j["n_requested"] = res.n_requested;
            j["n_effective"] = res.n_effective;
            j["exceed_count"] = res.exceed_count;
            j["ev"] = res.ev;
            j["alpha"] = res.alpha;
            j["reject_null"] = res.reject;
            write_text(join_path(base.out_dir, "baseline_summary.json"),
                       j.dump(2) + "\n");
            std::cout << j.dump(2) << "\n";
        });

        // -------------------------------------------------------------- fms
        std::string fms_in;
        int fms_depth = 4, fms_min_split = 2, fms_min_leaf = 1;
        auto* fms_cmd = app.add_subcommand(
            "fms", "configuration regression tree from grid results");
        fms_cmd->add_option("--in", fms_in, "results.jsonl or fms_records.jsonl")
            ->required();
        fms_cmd->add_option("--max-depth", fms_depth);
        fms_cmd->add_option("--min-split", fms_min_split);
        fms_cmd->add_option("--min-leaf", fms_min_leaf);
        fms_cmd->callback([&] {
            const std::vector<FmsRecord> records = load_fms_records(fms_in);
            if (records.empty()) throw DataError("fms: no usable records in " + fms_in);
            const FmsModel model =
                fit_fms(records, fms_depth, fms_min_split, fms_min_leaf);
            ensure_out_dir(base.out_dir);
            const std::string text = export_fms_text(model);
            write_text(join_path(base.out_dir, "tree.txt"), text);
            write_text(join_path(base.out_dir, "tree.dot"), export_fms_dot(model));
            std::cout << text;
        });

        // --------------------------------------------------------- run-grid
        auto* grid_cmd = app.add_subcommand(
            "run-grid", "all 20x5x2 preprocessing/level/augmentation cells");
        add_inputs(grid_cmd, true);
        grid_cmd->add_option("--model", base.model)
            ->check(CLI::IsMember({"rf", "bnn"}));
        grid_cmd
            ->add_option("--predictors", base.predictor_set)
            ->check(CLI::IsMember(std::vector<std::string>(
                predictor_set_names().begin(), predictor_set_names().end())));
        grid_cmd->add_flag("--grid-search", base.grid_search);
        grid_cmd->add_option("--test-fraction", base.test_fraction);
        grid_cmd->add_option("--min-prevalence", base.min_prevalence);
        grid_cmd->add_option("--target", base.target_per_label);
        grid_cmd->add_option("--bnn-chain", base.bnn_chain);
        grid_cmd->add_option("--bnn-leapfrog", base.bnn_leapfrog);
        grid_cmd->add_option("--bnn-step", base.bnn_step);
        grid_cmd->add_option("--bnn-capacity", base.bnn_capacity);
        grid_cmd->callback([&] {
            if (base.otu_paths.empty() && !otu_path.empty())
                base.otu_paths = {{base.level, otu_path}};
            const PipelineData data = load_pipeline_data(base);
            GridOptions opt;
            opt.model = base.model;
            opt.predictor_set = base.predictor_set;
            opt.response = base.response;
            opt.grid_search = base.grid_search;
            opt.seed = base.seed;
            opt.jobs = base.jobs;
            opt.test_fraction = base.test_fraction;
            opt.target_per_label = base.target_per_label;
            opt.min_prevalence = base.min_prevalence;
            opt.fraction = base.fraction;
            opt.net_threshold = base.net_threshold;
            opt.net_ridge = base.net_ridge;
            opt.bnn_chain = base.bnn_chain;
            opt.bnn_leapfrog = base.bnn_leapfrog;
            opt.bnn_step = base.bnn_step;
            opt.bnn_capacity = base.bnn_capacity;
            const GridOutput out = run_grid(data, opt);
            ensure_out_dir(base.out_dir);
            write_jsonl(join_path(base.out_dir, "results.jsonl"), out.records);
            write_fms_jsonl(join_path(base.out_dir, "fms_records.jsonl"), out.fms);
            std::cout << out.records.size() << " cells (" << out.fms.size()
                      << " ok, " << out.n_skipped << " skipped, " << out.n_failed
                      << " failed) -> " << base.out_dir << "\n";
        });

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 1;
        }
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
