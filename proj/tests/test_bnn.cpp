// Bayesian MLP: forward pass, log posterior, gradients, HMC, Gibbs, training.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <vector>

#include "otupred/bnn.hpp"
#include "otupred/rng.hpp"
#include "support.hpp"

using namespace otupred;
using Catch::Approx;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// The same integrator scheme used by hmc_step: initial half-kick, then per
// step a drift followed by a kick (half-sized on the last step).
void leapfrog(std::vector<double>& q, std::vector<double>& p, int length, double step,
              const std::function<std::vector<double>(const std::vector<double>&)>& grad) {
    auto g = grad(q);
    for (std::size_t i = 0; i < q.size(); ++i) p[i] += 0.5 * step * g[i];
    for (int s = 0; s < length; ++s) {
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += step * p[i];
        g = grad(q);
        const double scale = (s + 1 < length) ? step : 0.5 * step;
        for (std::size_t i = 0; i < q.size(); ++i) p[i] += scale * g[i];
    }
}

// Random but shape-consistent training problem for gradient checks.
struct ToyProblem {
    BnnArchitecture arch;
    Matrix X{0, 0, 0.0};
    std::vector<int> y;
};

ToyProblem random_problem(Rng& rng) {
    ToyProblem prob;
    prob.arch.input_width = 1 + rng.uniform_below(5);
    prob.arch.hidden_layers = 1 + rng.uniform_below(3);
    prob.arch.hidden_width = 2 + rng.uniform_below(4);
    const std::size_t n = 6;
    prob.X = Matrix(n, prob.arch.input_width, 0.0);
    prob.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        prob.y[i] = static_cast<int>(rng.uniform_below(2));
        for (std::size_t j = 0; j < prob.arch.input_width; ++j)
            prob.X(i, j) = rng.normal();
    }
    return prob;
}

}  // namespace

TEST_CASE("architecture widths and weight counts") {
    BnnArchitecture arch;
    arch.input_width = 2;
    CHECK(arch.hidden() == 6);
    CHECK(arch.widths() == std::vector<std::size_t>{2, 6, 6, 6, 6, 6, 1});
    // (2+1)*6 + 4*(6+1)*6 + (6+1)*1
    CHECK(arch.weight_count() == 193);
    CHECK_NOTHROW(arch.validate());

    BnnArchitecture big;
    big.input_width = 1000;  // first layer alone exceeds the default cap
    CHECK_THROWS_AS(big.validate(), CapacityError);
    CHECK_THROWS_AS(BnnNetwork(big), CapacityError);
}

TEST_CASE("forward pass with all-zero weights returns 0") {
    BnnArchitecture arch;
    arch.input_width = 2;
    auto ws = make_weight_set(arch, 0.0);
    CHECK(forward(ws, {0.3, -1.2}, arch.activation) == 0.0);
    BnnNetwork net(arch);
    std::vector<double> w(net.n_params(), 0.0);
    const double x[2] = {5.0, -7.0};
    CHECK(net.forward_flat(w, x) == 0.0);
}

TEST_CASE("single hidden unit matches the pencil computation") {
    BnnArchitecture arch;
    arch.input_width = 1;
    arch.hidden_layers = 1;
    arch.hidden_width = 1;
    auto ws = make_weight_set(arch, 0.0);
    const double w = 0.7, b = -0.2, v = 1.5, c = 0.3, x = 0.9;
    ws.layers[0](0, 0) = w;
    ws.layers[0](1, 0) = b;  // bias row
    ws.layers[1](0, 0) = v;
    ws.layers[1](1, 0) = c;
    const double expected = v * std::tanh(w * x + b) + c;
    CHECK(forward(ws, {x}, arch.activation) == Approx(expected).margin(1e-14));

    BnnNetwork net(arch);
    auto flat = net.flatten(ws);
    CHECK(net.forward_flat(flat, &x) == Approx(expected).margin(1e-14));
    // Round trip through the flat view.
    auto back = net.unflatten(flat);
    CHECK(back.layers[0](1, 0) == b);
    CHECK(back.layers[1](0, 0) == v);
}

TEST_CASE("tanh forward pass sign symmetry under full weight negation") {
    // With zero biases, negating every weight flips each layer's sign in
    // alternation; the output flips iff the hidden-layer count is even.
    for (std::size_t h : {std::size_t{2}, std::size_t{4}, std::size_t{5}}) {
        BnnArchitecture arch;
        arch.input_width = 3;
        arch.hidden_layers = h;
        arch.hidden_width = 4;
        Rng rng(derive_seed(17, h));
        auto ws = make_weight_set(arch, 0.0);
        auto neg = make_weight_set(arch, 0.0);
        for (std::size_t l = 0; l < ws.layers.size(); ++l) {
            const std::size_t fan_in = ws.layers[l].rows() - 1;
            for (std::size_t i = 0; i < fan_in; ++i)  // leave the bias row at zero
                for (std::size_t j = 0; j < ws.layers[l].cols(); ++j) {
                    ws.layers[l](i, j) = rng.normal();
                    neg.layers[l](i, j) = -ws.layers[l](i, j);
                }
        }
        const std::vector<double> x{0.4, -1.1, 0.7};
        const double f = forward(ws, x, arch.activation);
        const double fn = forward(neg, x, arch.activation);
        if (h % 2 == 0)
            CHECK(fn == Approx(-f).margin(1e-12));
        else
            CHECK(fn == Approx(f).margin(1e-12));
    }
}

TEST_CASE("prior group layout partitions the parameter vector") {
    BnnArchitecture arch;
    arch.input_width = 2;
    BnnNetwork net(arch);
    auto prior = net.make_prior();
    // 2 input groups + layer-0 bias, 4 x (weights + bias), 1 fixed output.
    REQUIRE(prior.groups.size() == 2 + 1 + 4 * 2 + 1);
    std::vector<int> covered(net.n_params(), 0);
    std::size_t ard_groups = 0, fixed_groups = 0;
    for (const auto& g : prior.groups) {
        REQUIRE(g.begin < g.end);
        REQUIRE(g.end <= net.n_params());
        for (std::size_t i = g.begin; i < g.end; ++i) ++covered[i];
        if (g.ard) {
            ++ard_groups;
            CHECK(g.end - g.begin == 6);
            CHECK(prior.group_scale(g) == Approx(1.0 / prior.ard_theta));
        }
        if (g.fixed) {
            ++fixed_groups;
            CHECK(g.tau == prior.output_precision);
            CHECK(g.end - g.begin == 7);  // (6+1)*1 output block
        }
    }
    CHECK(ard_groups == 2);
    CHECK(fixed_groups == 1);
    CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 1; }));
}

TEST_CASE("log posterior at zero weights is the prior constant plus n log half") {
    BnnArchitecture arch;
    arch.input_width = 2;
    BnnNetwork net(arch);
    auto prior = net.make_prior();
    Rng rng(3);
    Matrix X(4, 2, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) X(i, j) = rng.normal();
    std::vector<int> y{0, 1, 0, 1};
    std::vector<double> w(net.n_params(), 0.0);

    double consts = 0.0;
    for (const auto& g : prior.groups) {
        const double k = static_cast<double>(g.end - g.begin);
        consts += 0.5 * k * std::log(g.tau / (2.0 * std::numbers::pi));
    }
    const double expected = consts + 4.0 * std::log(0.5);
    CHECK(net.log_posterior(w, prior, X, y) == Approx(expected).margin(1e-10));
}

TEST_CASE("log posterior decays quadratically for extreme weights") {
    BnnArchitecture arch;
    arch.input_width = 2;
    BnnNetwork net(arch);
    auto prior = net.make_prior();
    Matrix X(2, 2, 0.5);
    X(1, 0) = -0.25;
    std::vector<int> y{0, 1};
    std::vector<double> w(net.n_params(), 0.0);
    const double at_zero = net.log_posterior(w, prior, X, y);
    for (double v : {1e3, -1e3}) {
        auto wx = w;
        wx[0] = v;  // first-layer coordinate, tau = 1/theta = 0.5
        const double lp = net.log_posterior(wx, prior, X, y);
        // The quadratic prior term alone contributes -0.5*0.5*1e6.
        CHECK(lp < at_zero - 1e4);
    }
}

TEST_CASE("gradient of the prior term is minus tau times the weight") {
    BnnArchitecture arch;
    arch.input_width = 2;
    arch.hidden_layers = 2;
    arch.hidden_width = 3;
    BnnNetwork net(arch);
    auto prior = net.make_prior();
    Rng rng(21);
    std::vector<double> w(net.n_params());
    for (auto& v : w) v = rng.normal();
    Matrix empty(0, 2, 0.0);  // no data: posterior = prior
    std::vector<int> y;
    auto grad = net.grad_log_posterior(w, prior, empty, y);
    REQUIRE(grad.size() == w.size());
    for (const auto& g : prior.groups)
        for (std::size_t i = g.begin; i < g.end; ++i)
            CHECK(grad[i] == Approx(-g.tau * w[i]).margin(1e-12));
}

TEST_CASE("gradient matches central finite differences") {
    Rng meta(1001);
    int checked = 0;
    for (int a = 0; a < 10; ++a) {
        auto prob = random_problem(meta);
        BnnNetwork net(prob.arch);
        auto prior = net.make_prior();
        // Vary the precisions so the prior part of the gradient is nontrivial.
        for (auto& g : prior.groups)
            if (!g.fixed) g.tau = 0.25 + meta.uniform();
        std::vector<double> w(net.n_params());
        for (auto& v : w) v = meta.normal(0.0, 0.5);
        auto grad = net.grad_log_posterior(w, prior, prob.X, prob.y);
        const double h = 1e-5;
        for (int c = 0; c < 10; ++c) {
            const std::size_t i = meta.uniform_below(w.size());
            auto wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            const double fd = (net.log_posterior_raw(wp, prior, prob.X, prob.y) -
                               net.log_posterior_raw(wm, prior, prob.X, prob.y)) /
                              (2.0 * h);
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(grad[i])});
            CHECK(std::fabs(grad[i] - fd) / denom < 1e-5);
            ++checked;
        }
    }
    CHECK(checked == 100);
}

TEST_CASE("gradient vanishes at the one-parameter posterior maximum") {
    // All weights fixed at zero except the output bias c; with x = 0 and
    // y = 1 the posterior in c is log(sigma(c)) - c^2/2, whose maximum
    // solves 1 - sigma(c) - c = 0.
    BnnArchitecture arch;
    arch.input_width = 1;
    arch.hidden_layers = 1;
    arch.hidden_width = 1;
    BnnNetwork net(arch);
    auto prior = net.make_prior();
    Matrix X(1, 1, 0.0);
    std::vector<int> y{1};

    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        ((1.0 - logistic(mid) - mid) > 0.0 ? lo : hi) = mid;
    }
    const double root = 0.5 * (lo + hi);

    std::vector<double> w(net.n_params(), 0.0);
    const std::size_t c_idx = net.at(1, 1, 0);
    w[c_idx] = root;
    auto grad = net.grad_log_posterior(w, prior, X, y);
    CHECK(std::fabs(grad[c_idx]) < 1e-8);
}

TEST_CASE("hmc on a quadratic target conserves the Hamiltonian at tiny steps") {
    auto logp = [](const std::vector<double>& q) {
        double s = 0.0;
        for (double v : q) s += v * v;
        return -0.5 * s;
    };
    auto grad = [](const std::vector<double>& q) {
        std::vector<double> g(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) g[i] = -q[i];
        return g;
    };
    std::vector<double> q{0.3, -0.5, 1.0};
    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
        auto res = hmc_step(q, logp, grad, 10, 1e-5, rng);
        CHECK(std::fabs(res.hamiltonian_error) < 1e-6);
        CHECK_FALSE(res.diverged);
    }
}

TEST_CASE("leapfrog integration is reversible") {
    auto grad = [](const std::vector<double>& q) {
        // Anisotropic quadratic potential.
        std::vector<double> g(q.size());
        for (std::size_t i = 0; i < q.size(); ++i)
            g[i] = -(1.0 + 0.5 * static_cast<double>(i)) * q[i];
        return g;
    };
    Rng rng(88);
    std::vector<double> q0{0.7, -0.4, 1.3};
    std::vector<double> p0{rng.normal(), rng.normal(), rng.normal()};
    auto q = q0;
    auto p = p0;
    leapfrog(q, p, 25, 0.05, grad);
    for (auto& v : p) v = -v;
    leapfrog(q, p, 25, 0.05, grad);
    for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(q[i] == Approx(q0[i]).margin(1e-10));
        CHECK(-p[i] == Approx(p0[i]).margin(1e-10));
    }
}

TEST_CASE("hamiltonian error shrinks fourfold when the step is halved") {
    auto logp = [](const std::vector<double>& q) {
        return -0.5 * (q[0] * q[0] + q[1] * q[1]);
    };
    auto grad = [](const std::vector<double>& q) {
        return std::vector<double>{-q[0], -q[1]};
    };
    double coarse = 0.0, fine = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::vector<double> qa{0.9, -0.6}, qb{0.9, -0.6};
        Rng ra(derive_seed(700, s)), rb(derive_seed(700, s));
        // Same momentum draw; same trajectory time (length doubles).
        coarse += std::fabs(hmc_step(qa, logp, grad, 20, 0.2, ra).hamiltonian_error);
        fine += std::fabs(hmc_step(qb, logp, grad, 40, 0.1, rb).hamiltonian_error);
    }
    const double ratio = coarse / fine;
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
}

TEST_CASE("hmc samples a standard gaussian with mean near zero") {
    auto logp = [](const std::vector<double>& q) { return -0.5 * q[0] * q[0]; };
    auto grad = [](const std::vector<double>& q) {
        return std::vector<double>{-q[0]};
    };
    std::vector<double> q{1.5};
    Rng rng(31);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    int accepted = 0;
    for (int it = 0; it < n; ++it) {
        if (hmc_step(q, logp, grad, 10, 0.3, rng).accepted) ++accepted;
        sum += q[0];
        sum2 += q[0] * q[0];
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
    CHECK(std::fabs(mean) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
    CHECK(accepted > n / 2);
}

TEST_CASE("hmc preserves a correlated 2d gaussian") {
    // Precision of covariance [[1, .6], [.6, 1]].
    const double a = 1.5625, b = -0.9375;
    auto logp = [&](const std::vector<double>& q) {
        return -0.5 * (a * q[0] * q[0] + 2.0 * b * q[0] * q[1] + a * q[1] * q[1]);
    };
    auto grad = [&](const std::vector<double>& q) {
        return std::vector<double>{-(a * q[0] + b * q[1]), -(b * q[0] + a * q[1])};
    };
    std::vector<double> q{0.0, 0.0};
    Rng rng(77);
    const int n = 50000;
    double s0 = 0, s1 = 0, s00 = 0, s11 = 0, s01 = 0;
    for (int it = 0; it < n; ++it) {
        hmc_step(q, logp, grad, 8, 0.25, rng);
        s0 += q[0];
        s1 += q[1];
        s00 += q[0] * q[0];
        s11 += q[1] * q[1];
        s01 += q[0] * q[1];
    }
    const double m0 = s0 / n, m1 = s1 / n;
    const double v0 = s00 / n - m0 * m0;
    const double v1 = s11 / n - m1 * m1;
    const double c01 = s01 / n - m0 * m1;
    CHECK(v0 == Approx(1.0).margin(0.1));
    CHECK(v1 == Approx(1.0).margin(0.1));
    CHECK(c01 == Approx(0.6).margin(0.06));
}

TEST_CASE("hmc rejects bad configuration") {
    auto logp = [](const std::vector<double>&) { return 0.0; };
    auto grad = [](const std::vector<double>& q) {
        return std::vector<double>(q.size(), 0.0);
    };
    std::vector<double> q{0.0};
    Rng rng(1);
    CHECK_THROWS_AS(hmc_step(q, logp, grad, 0, 0.1, rng), UsageError);
    CHECK_THROWS_AS(hmc_step(q, logp, grad, 10, 0.0, rng), UsageError);
}

TEST_CASE("gibbs draws match the closed-form gamma posterior") {
    BnnArchitecture arch;
    arch.input_width = 1;
    arch.hidden_layers = 1;
    arch.hidden_width = 1;
    BnnNetwork net(arch);
    std::vector<double> w(net.n_params(), 0.0);

    // Layer-0 bias group: k=1, fixed scale 0.5, alpha 2. With zero weights
    // tau ~ Gamma(shape 1.5, rate 2).
    auto prior = net.make_prior();
    const std::size_t bias_group = [&] {
        for (std::size_t g = 0; g < prior.groups.size(); ++g)
            if (!prior.groups[g].ard && !prior.groups[g].fixed) return g;
        return std::size_t{0};
    }();
    Rng rng(2026);
    std::vector<double> draws;
    draws.reserve(10000);
    bool output_pinned = true;
    for (int it = 0; it < 10000; ++it) {
        gibbs_update_hyperparams(w, prior, rng);
        draws.push_back(prior.groups[bias_group].tau);
        output_pinned = output_pinned && prior.groups.back().tau == prior.output_precision;
    }
    CHECK(output_pinned);  // the fixed output group never moves
    const double p = testsupport::ks_pvalue(
        draws, [](double x) { return testsupport::gamma_cdf(x, 1.5, 0.5); });
    CHECK(p > 0.01);
}

TEST_CASE("posterior precision decreases as the group sum of squares grows") {
    BnnArchitecture arch;
    arch.input_width = 1;
    arch.hidden_layers = 1;
    arch.hidden_width = 1;
    BnnNetwork net(arch);
    auto prior0 = net.make_prior();
    const std::size_t bias_idx = net.at(0, 1, 0);  // layer-0 bias weight
    std::size_t bias_group = 0;
    for (std::size_t g = 0; g < prior0.groups.size(); ++g)
        if (prior0.groups[g].begin <= bias_idx && bias_idx < prior0.groups[g].end &&
            !prior0.groups[g].ard)
            bias_group = g;

    double prev = std::numeric_limits<double>::infinity();
    for (double ss : {0.0, 0.5, 2.0, 8.0, 32.0}) {
        std::vector<double> w(net.n_params(), 0.0);
        w[bias_idx] = std::sqrt(ss);
        auto prior = net.make_prior();
        Rng rng(derive_seed(400, static_cast<std::uint64_t>(ss * 2)));
        double sum = 0.0;
        const int n = 4000;
        for (int it = 0; it < n; ++it) {
            gibbs_update_hyperparams(w, prior, rng);
            sum += prior.groups[bias_group].tau;
        }
        const double mean = sum / n;
        // Closed form: (alpha/2 + k/2) / (alpha/(2 scale) + ss/2).
        const double expected = 1.5 / (2.0 + 0.5 * ss);
        CHECK(mean == Approx(expected).epsilon(0.1));
        CHECK(mean < prev);
        prev = mean;
    }
}

TEST_CASE("training a separable toy reaches high posterior-predictive accuracy") {
    Rng rng(9090);
    const std::size_t n = 100;
    Matrix X(n, 2, 0.0);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        const double center = y[i] ? 1.5 : -1.5;
        X(i, 0) = center + 0.4 * rng.normal();
        X(i, 1) = center + 0.4 * rng.normal();
    }
    BnnArchitecture arch;
    arch.input_width = 2;
    HmcConfig config;
    config.chain_length = 800;
    config.leapfrog_length = 30;
    config.seed = 7;
    auto samples = train_bnn(X, y, arch, config);

    CHECK(samples.draws.size() == 400);  // floor(chain/2) retained
    CHECK(samples.burn_in == 400);
    CHECK(samples.tau_trajectory.size() == 800);
    CHECK(samples.final_step_size > 0.0);
    CHECK(1.0 - samples.post_burn_acceptance < 0.3);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x{X(i, 0), X(i, 1)};
        if (predict_bnn_class(samples, x) == y[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(n) >= 0.95);
}

TEST_CASE("training validates its inputs") {
    BnnArchitecture arch;
    arch.input_width = 2;
    HmcConfig config;
    Matrix X(4, 2, 0.0);
    std::vector<int> y{0, 1, 0, 1};
    CHECK_THROWS_AS(train_bnn(Matrix(0, 2, 0.0), {}, arch, config), UsageError);
    CHECK_THROWS_AS(train_bnn(X, {0, 1}, arch, config), UsageError);
    Matrix X3(4, 3, 0.0);
    CHECK_THROWS_AS(train_bnn(X3, y, arch, config), UsageError);
    HmcConfig short_chain;
    short_chain.chain_length = 1;
    CHECK_THROWS_AS(train_bnn(X, y, arch, short_chain), UsageError);
}

TEST_CASE("posterior-predictive probability endpoints") {
    BnnArchitecture arch;
    arch.input_width = 1;
    arch.hidden_layers = 1;
    arch.hidden_width = 1;
    BnnNetwork net(arch);

    PosteriorSamples samples;
    samples.arch = arch;
    samples.draws.push_back(std::vector<double>(net.n_params(), 0.0));
    CHECK(predict_bnn(samples, {0.7}) == 0.5);
    CHECK(predict_bnn_class(samples, {0.7}) == 1);  // >= 0.5 maps to class 1

    // Two draws whose outputs are logit(0.2) and logit(0.8) average to 0.5.
    const std::size_t c_idx = net.at(1, 1, 0);
    std::vector<double> w_low(net.n_params(), 0.0), w_high(net.n_params(), 0.0);
    w_low[c_idx] = -std::log(4.0);
    w_high[c_idx] = std::log(4.0);
    PosteriorSamples pair;
    pair.arch = arch;
    pair.draws = {w_low, w_high};
    CHECK(predict_bnn(pair, {0.0}) == Approx(0.5).margin(1e-12));

    // Order of the retained draws is irrelevant.
    PosteriorSamples swapped;
    swapped.arch = arch;
    swapped.draws = {w_high, w_low};
    CHECK(predict_bnn(swapped, {0.0}) == Approx(predict_bnn(pair, {0.0})).margin(1e-15));

    PosteriorSamples empty;
    empty.arch = arch;
    CHECK_THROWS_AS(predict_bnn(empty, {0.0}), UsageError);
}
