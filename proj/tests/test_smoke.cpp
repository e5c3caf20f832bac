// Compile-and-link smoke check: every public header, one tiny use of each
// major subsystem.

#include <catch2/catch_amalgamated.hpp>

#include "otupred/augment.hpp"
#include "otupred/bnn.hpp"
#include "otupred/core.hpp"
#include "otupred/csv.hpp"
#include "otupred/error.hpp"
#include "otupred/eval.hpp"
#include "otupred/featsel.hpp"
#include "otupred/fms.hpp"
#include "otupred/harness.hpp"
#include "otupred/learners.hpp"
#include "otupred/matrix.hpp"
#include "otupred/netinfer.hpp"
#include "otupred/preprocess.hpp"
#include "otupred/rng.hpp"

using namespace otupred;

TEST_CASE("smoke: grid labels and seeds are stable") {
    REQUIRE(preprocess_grid().size() == 20);
    REQUIRE(nm_label(nm_spec(1)) == "NM1:TSS+none");
    REQUIRE(nm_label(nm_spec(6)) == "NM6:CSS+pseudo");
    REQUIRE(nm_label(nm_spec(20)) == "NM20:clr+bayesMult");
    REQUIRE(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    REQUIRE(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("smoke: synthetic bundle round-trips through one cell") {
    SynthConfig cfg;
    cfg.n = 60;
    cfg.p = 12;
    cfg.n_signal = 3;
    cfg.effect = 4.0;
    cfg.seed = 7;
    const SynthData d = synth_generate(cfg);
    REQUIRE(d.table.n() == 60);
    REQUIRE(d.table.p() == 12);
    REQUIRE(d.labels.n() == 60);
    REQUIRE(d.meta.n() == 60);
    const Metrics m = weighted_f1({1, 0, 1}, {1, 0, 0});
    REQUIRE(m.weighted > 0.0);
}
