// Data model: CSV ingestion, rare-OTU filtering, response binarization,
// metadata alignment.

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "otupred/core.hpp"
#include "support.hpp"

using namespace otupred;
using testsupport::TempDir;
using testsupport::write_text;

TEST_CASE("otu csv: small table parses with shape intact") {
    TempDir dir("otu-parse");
    write_text(dir.file("t.csv"),
               "sample_id,A,B\ns1,1,2\ns2,0,3\ns3,4,0\n");
    const auto t = load_otu_table(dir.file("t.csv"), TaxonomicLevel::Genus);
    REQUIRE(t.n() == 3);
    REQUIRE(t.p() == 2);
    REQUIRE(t.counts(0, 0) == 1.0);
    REQUIRE(t.counts(1, 1) == 3.0);
    REQUIRE(t.counts(2, 1) == 0.0);
    REQUIRE(t.sample_ids == std::vector<std::string>{"s1", "s2", "s3"});
    REQUIRE(t.otu_names == std::vector<std::string>{"A", "B"});
}

TEST_CASE("otu csv: negative count is rejected with coordinates") {
    TempDir dir("otu-neg");
    write_text(dir.file("t.csv"), "sample_id,A,B\ns1,1,-1\n");
    REQUIRE_THROWS_WITH(load_otu_table(dir.file("t.csv"), TaxonomicLevel::Genus),
                        Catch::Matchers::ContainsSubstring("negative"));
}

TEST_CASE("otu csv: duplicate sample id and malformed header are rejected") {
    TempDir dir("otu-dup");
    write_text(dir.file("dup.csv"), "sample_id,A\ns1,1\ns1,2\n");
    REQUIRE_THROWS_AS(load_otu_table(dir.file("dup.csv"), TaxonomicLevel::Genus),
                      DataError);
    write_text(dir.file("hdr.csv"), "id,A\ns1,1\n");
    REQUIRE_THROWS_AS(load_otu_table(dir.file("hdr.csv"), TaxonomicLevel::Genus),
                      DataError);
}

TEST_CASE("otu csv: a wide genus-scale header parses to the same column count") {
    const std::size_t p = 1319;
    std::ostringstream csv;
    csv << "sample_id";
    for (std::size_t j = 0; j < p; ++j) csv << ",G" << j;
    csv << "\n";
    for (int i = 0; i < 2; ++i) {
        csv << "s" << i;
        for (std::size_t j = 0; j < p; ++j) csv << "," << ((i + j) % 7);
        csv << "\n";
    }
    TempDir dir("otu-wide");
    write_text(dir.file("t.csv"), csv.str());
    const auto t = load_otu_table(dir.file("t.csv"), TaxonomicLevel::Genus);
    REQUIRE(t.p() == p);
    REQUIRE(t.n() == 2);
}

TEST_CASE("filter_rare_otus: prevalence threshold, identity, idempotence") {
    // 57 columns over 60 samples; exactly 42 columns get >= 15 nonzero entries.
    const std::size_t n = 60, p = 57;
    OtuTable t;
    t.level = TaxonomicLevel::Phylum;
    t.counts = Matrix(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        t.sample_ids.push_back("s" + std::to_string(i));
        t.varieties.push_back("VarA");
    }
    for (std::size_t j = 0; j < p; ++j) {
        t.otu_names.push_back("P" + std::to_string(j));
        const std::size_t nonzero = j < 42 ? 15 + (j % 10) : 14 - (j % 5);
        for (std::size_t i = 0; i < nonzero; ++i) t.counts(i, j) = 1.0 + double(j);
    }
    const auto kept = filter_rare_otus(t, 15);
    REQUIRE(kept.p() == 42);
    for (std::size_t j = 0; j < 42; ++j)
        REQUIRE(kept.otu_names[j] == "P" + std::to_string(j));  // order preserved

    const auto again = filter_rare_otus(kept, 15);
    REQUIRE(again.p() == kept.p());
    REQUIRE(again.otu_names == kept.otu_names);

    // A table already above threshold everywhere passes through unchanged.
    const auto dense = testsupport::random_count_table(20, 5, 99, 0.0);
    const auto same = filter_rare_otus(dense, 15);
    REQUIRE(same.p() == 5);
    REQUIRE(same.counts(3, 2) == dense.counts(3, 2));
}

TEST_CASE("filter_rare_otus: zero column dropped, empty result errors") {
    auto t = testsupport::make_table(3, 2, {1, 0, 2, 0, 3, 0});
    const auto kept = filter_rare_otus(t, 1);
    REQUIRE(kept.p() == 1);
    REQUIRE(kept.otu_names == std::vector<std::string>{"OTU0"});
    REQUIRE_THROWS_AS(filter_rare_otus(t, 10), DataError);
}

TEST_CASE("binarize_disease: positive means affected") {
    const auto labels = binarize_disease({0.0, 3.0, 0.0, 0.5}, "Scab");
    REQUIRE(labels.labels == std::vector<int>{0, 1, 0, 1});
    REQUIRE(binarize_disease({0.0, 0.0}, "Scab").labels == std::vector<int>{0, 0});
    REQUIRE(binarize_disease({1.0, 2.5}, "Scab").labels == std::vector<int>{1, 1});
}

TEST_CASE("binarize_disease: invariant to positive scaling") {
    const std::vector<double> v = {0.0, 0.2, 7.0, 0.0, 1.0};
    const auto a = binarize_disease(v, "Scab").labels;
    std::vector<double> scaled;
    for (double x : v) scaled.push_back(123.0 * x);
    REQUIRE(binarize_disease(scaled, "Scab").labels == a);
}

TEST_CASE("binarize_yield: variety medians, ties map to zero") {
    const std::vector<std::string> one(5, "VarA");
    REQUIRE(binarize_yield({1, 2, 3, 4, 5}, one, "Yield_Meter").labels ==
            std::vector<int>{0, 0, 0, 1, 1});
    const std::vector<std::string> four(4, "VarA");
    REQUIRE(binarize_yield({1, 2, 3, 4}, four, "Yield_Meter").labels ==
            std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("binarize_yield: per-variety medians are independent") {
    const std::vector<std::string> varieties = {"A", "A", "B", "B"};
    REQUIRE(binarize_yield({10, 20, 1, 100}, varieties, "Yield_Meter").labels ==
            std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("binarize_yield: invariant to monotone transforms within a variety") {
    const std::vector<std::string> varieties = {"A", "B", "A", "B", "A", "B", "A"};
    const std::vector<double> v = {3.0, 9.0, 1.0, 2.0, 8.0, 5.0, 4.0};
    const auto base = binarize_yield(v, varieties, "Yield_Plant").labels;
    std::vector<double> cubed;
    for (double x : v) cubed.push_back(x * x * x + 2.0);
    REQUIRE(binarize_yield(cubed, varieties, "Yield_Plant").labels == base);
}

TEST_CASE("binarize_response dispatches by response family") {
    TempDir dir("meta");
    write_text(dir.file("m.csv"),
               "sample_id,variety,state,Yield_Meter,Yield_Plant,Scab,Scabpit,"
               "Scabsuper,Black_Scurf\n"
               "s1,VarA,North,1,4,0,0,0.5,0\n"
               "s2,VarA,North,2,3,2,0,0,1\n"
               "s3,VarA,South,3,2,0,1,0,0\n"
               "s4,VarA,South,4,1,5,0,0,2\n");
    const auto meta = load_metadata(dir.file("m.csv"));
    REQUIRE(meta.n() == 4);
    REQUIRE(binarize_response(meta, "Scab").labels == std::vector<int>{0, 1, 0, 1});
    // Yield uses the variety median (2.5 here), strict inequality.
    REQUIRE(binarize_response(meta, "Yield_Meter").labels ==
            std::vector<int>{0, 0, 1, 1});
    REQUIRE_THROWS_AS(binarize_response(meta, "NotAResponse"), UsageError);
}

TEST_CASE("metadata: header must match the declared schema") {
    TempDir dir("meta-bad");
    write_text(dir.file("m.csv"), "sample_id,variety,Yield_Meter\ns1,VarA,1\n");
    REQUIRE_THROWS_AS(load_metadata(dir.file("m.csv")), DataError);
}

TEST_CASE("env table: group widths are enforced") {
    TempDir dir("env");
    std::ostringstream ds;
    ds << "sample_id";
    for (int j = 0; j < 4; ++j) ds << ",d" << j;
    ds << "\ns1,1,2,3,4\n";
    write_text(dir.file("ds.csv"), ds.str());
    const auto env = load_env_table(dir.file("ds.csv"), EnvGroup::DS);
    REQUIRE(env.q() == 4);
    REQUIRE_THROWS_AS(load_env_table(dir.file("ds.csv"), EnvGroup::Soil), DataError);
}

TEST_CASE("align_metadata: subsets and reorders by sample id") {
    TempDir dir("align");
    write_text(dir.file("m.csv"),
               "sample_id,variety,state,Yield_Meter,Yield_Plant,Scab,Scabpit,"
               "Scabsuper,Black_Scurf\n"
               "s2,VarB,North,2,3,2,0,0,1\n"
               "s0,VarA,North,1,4,0,0,0.5,0\n"
               "s1,VarC,South,3,2,0,1,0,0\n");
    const auto meta = load_metadata(dir.file("m.csv"));
    auto t = testsupport::make_table(2, 2, {1, 2, 3, 4});
    t.sample_ids = {"s1", "s2"};
    const auto aligned = align_metadata(t, meta);
    REQUIRE(aligned.n() == 2);
    REQUIRE(aligned.sample_ids == std::vector<std::string>{"s1", "s2"});
    REQUIRE(aligned.varieties == std::vector<std::string>{"VarC", "VarB"});

    attach_metadata(t, meta);
    REQUIRE(t.varieties == std::vector<std::string>{"VarC", "VarB"});

    t.sample_ids = {"s1", "missing"};
    REQUIRE_THROWS_AS(align_metadata(t, meta), DataError);
}

TEST_CASE("taxonomic levels: order and parsing") {
    REQUIRE(parse_level("Genus") == TaxonomicLevel::Genus);
    REQUIRE(parse_level("Phylum") == TaxonomicLevel::Phylum);
    REQUIRE_THROWS_AS(parse_level("genus "), UsageError);
    REQUIRE(static_cast<int>(TaxonomicLevel::Phylum) <
            static_cast<int>(TaxonomicLevel::Genus));
    REQUIRE(std::string(level_name(TaxonomicLevel::Order)) == "Order");
}
