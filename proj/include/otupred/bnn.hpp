#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "otupred/error.hpp"
#include "otupred/matrix.hpp"
#include "otupred/rng.hpp"

namespace otupred {

enum class Activation { Tanh, Relu };

// Multilayer perceptron shape: input N, five hidden layers of width 3N by
// default, scalar output; every non-output layer contributes a bias row.
struct BnnArchitecture {
    std::size_t input_width = 1;
    std::size_t hidden_layers = 5;
    std::size_t hidden_width = 0;  // 0 means 3 * input_width
    Activation activation = Activation::Tanh;
    std::size_t capacity_cap = 2'000'000;

    std::size_t hidden() const {
        return hidden_width ? hidden_width : 3 * input_width;
    }

    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w;
        w.push_back(input_width);
        for (std::size_t l = 0; l < hidden_layers; ++l) w.push_back(hidden());
        w.push_back(1);
        return w;
    }

    std::size_t weight_count() const {
        const auto w = widths();
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) total += (w[l] + 1) * w[l + 1];
        return total;
    }

    void validate() const {
        if (input_width == 0) throw UsageError("BnnArchitecture: input width >= 1");
        if (hidden_layers == 0) throw UsageError("BnnArchitecture: hidden layers >= 1");
        if (weight_count() > capacity_cap)
            throw CapacityError("BnnArchitecture: " + std::to_string(weight_count()) +
                                " weights exceed the cap of " +
                                std::to_string(capacity_cap));
    }
};

// One weight matrix per layer transition, (fan_in + 1) x fan_out with the
// bias in the last row.
struct WeightSet {
    std::vector<Matrix> layers;
};

inline WeightSet make_weight_set(const BnnArchitecture& arch, double fill = 0.0) {
    const auto w = arch.widths();
    WeightSet ws;
    for (std::size_t l = 0; l + 1 < w.size(); ++l)
        ws.layers.emplace_back(w[l] + 1, w[l + 1], fill);
    return ws;
}

inline double activate(Activation act, double u) {
    return act == Activation::Tanh ? std::tanh(u) : std::max(0.0, u);
}

// Pre-link network output f(W, x).
inline double forward(const WeightSet& weights, const std::vector<double>& x,
                      Activation act = Activation::Tanh) {
    if (weights.layers.empty()) throw UsageError("forward: empty weight set");
    if (weights.layers.front().rows() != x.size() + 1)
        throw UsageError("forward: input width mismatch");
    std::vector<double> a = x;
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        const Matrix& W = weights.layers[l];
        if (W.rows() != a.size() + 1) throw UsageError("forward: layer shape mismatch");
        std::vector<double> next(W.cols(), 0.0);
        for (std::size_t j = 0; j < W.cols(); ++j) {
            double u = W(a.size(), j);  // bias row
            for (std::size_t i = 0; i < a.size(); ++i) u += a[i] * W(i, j);
            next[j] = (l + 1 < weights.layers.size()) ? activate(act, u) : u;
        }
        a = std::move(next);
    }
    return a[0];
}

// One prior group: a contiguous flat-coordinate range sharing one precision.
struct PriorGroup {
    std::size_t begin = 0;
    std::size_t end = 0;
    double alpha = 2.0;
    bool ard = false;    // first-layer input groups draw their scale from theta
    bool fixed = false;  // output layer: precision pinned, no Gibbs update
    double tau = 0.5;    // current precision
};

// Hierarchical Gaussian prior state. Hidden and bias groups use the fixed
// scale tau_w; the per-input first-layer groups share an extra level through
// theta = 1 / tau_w_ard, itself given a conjugate Gamma prior.
struct PriorSpec {
    double alpha = 2.0;
    double tau_w = 0.5;
    double ard_alpha0 = 2.0;
    double ard_tau0 = 0.5;
    double ard_alpha1 = 2.0;
    double ard_theta = 2.0;  // 1 / ard_tau0 initially
    double output_precision = 1.0;
    std::vector<PriorGroup> groups;

    double group_scale(const PriorGroup& g) const {
        return g.ard ? 1.0 / ard_theta : tau_w;
    }
};

struct HmcConfig {
    int leapfrog_length = 100;
    double step_size = 0.1;
    int chain_length = 2000;
    std::uint64_t seed = 0;
    // burn-in is fixed at the first half of the chain
};

struct HmcStepResult {
    bool accepted = false;
    bool diverged = false;
    double hamiltonian_error = 0.0;
};

// One HMC transition on a flat coordinate vector: fresh Gaussian momentum,
// leapfrog with the given length and step, Metropolis correction on the
// total Hamiltonian. Position is untouched on rejection; a non-finite
// trajectory rejects with the diverged flag.
inline HmcStepResult hmc_step(
    std::vector<double>& q,
    const std::function<double(const std::vector<double>&)>& logp,
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    int length, double step, Rng& rng) {
    if (length < 1 || !(step > 0.0)) throw UsageError("hmc_step: bad config");
    const std::size_t d = q.size();
    std::vector<double> p(d);
    for (std::size_t i = 0; i < d; ++i) p[i] = rng.normal();
    double kin0 = 0.0;
    for (double v : p) kin0 += 0.5 * v * v;
    const double h0 = -logp(q) + kin0;

    std::vector<double> qn = q;
    std::vector<double> g = grad(qn);
    bool finite = true;
    for (std::size_t i = 0; i < d; ++i) p[i] += 0.5 * step * g[i];
    for (int s = 0; s < length && finite; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
            qn[i] += step * p[i];
            if (!std::isfinite(qn[i])) finite = false;
        }
        if (!finite) break;
        g = grad(qn);
        for (double v : g)
            if (!std::isfinite(v)) finite = false;
        if (!finite) break;
        const double scale = (s + 1 < length) ? step : 0.5 * step;
        for (std::size_t i = 0; i < d; ++i) p[i] += scale * g[i];
    }

    HmcStepResult res;
    const double u = rng.uniform();  // always consumed, keeps streams aligned
    if (!finite) {
        res.diverged = true;
        res.hamiltonian_error = std::numeric_limits<double>::infinity();
        return res;
    }
    double kin1 = 0.0;
    for (double v : p) kin1 += 0.5 * v * v;
    const double h1 = -logp(qn) + kin1;
    res.hamiltonian_error = h1 - h0;
    if (!std::isfinite(h1)) {
        res.diverged = true;
        return res;
    }
    if (u < std::exp(h0 - h1)) {
        res.accepted = true;
        q = std::move(qn);
    }
    return res;
}

// Flat-parameter view of the MLP: forward pass, Bernoulli-logistic log
// posterior, exact reverse-mode gradient, and the prior group layout.
class BnnNetwork {
public:
    explicit BnnNetwork(const BnnArchitecture& arch) : arch_(arch) {
        arch.validate();
        widths_ = arch.widths();
        offsets_.push_back(0);
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l)
            offsets_.push_back(offsets_.back() + (widths_[l] + 1) * widths_[l + 1]);
    }

    const BnnArchitecture& arch() const { return arch_; }
    std::size_t n_params() const { return offsets_.back(); }
    std::size_t n_layers() const { return widths_.size() - 1; }

    // Flat index of W_l(i, j); bias row is i = widths_[l].
    std::size_t at(std::size_t l, std::size_t i, std::size_t j) const {
        return offsets_[l] + i * widths_[l + 1] + j;
    }

    WeightSet unflatten(const std::vector<double>& w) const {
        WeightSet ws = make_weight_set(arch_);
        for (std::size_t l = 0; l < ws.layers.size(); ++l) {
            auto& st = ws.layers[l].storage();
            std::copy(w.begin() + static_cast<std::ptrdiff_t>(offsets_[l]),
                      w.begin() + static_cast<std::ptrdiff_t>(offsets_[l + 1]),
                      st.begin());
        }
        return ws;
    }

    std::vector<double> flatten(const WeightSet& ws) const {
        std::vector<double> w(n_params());
        for (std::size_t l = 0; l < ws.layers.size(); ++l)
            std::copy(ws.layers[l].storage().begin(), ws.layers[l].storage().end(),
                      w.begin() + static_cast<std::ptrdiff_t>(offsets_[l]));
        return w;
    }

    // Layer-1 rows become per-input groups under the shared ARD scale, the
    // layer-1 bias row and each later layer's weight and bias blocks get
    // fixed-scale groups, and the output layer is pinned at unit precision.
    PriorSpec make_prior() const {
        PriorSpec prior;
        const std::size_t L = n_layers();
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t fan_in = widths_[l];
            const std::size_t fan_out = widths_[l + 1];
            const bool output_layer = (l + 1 == L);
            if (output_layer) {
                PriorGroup g;
                g.begin = at(l, 0, 0);
                g.end = at(l, fan_in, fan_out - 1) + 1;
                g.fixed = true;
                g.tau = prior.output_precision;
                prior.groups.push_back(g);
                continue;
            }
            if (l == 0) {
                for (std::size_t i = 0; i < fan_in; ++i) {
                    PriorGroup g;
                    g.begin = at(l, i, 0);
                    g.end = g.begin + fan_out;
                    g.ard = true;
                    g.tau = 1.0 / prior.ard_theta;
                    prior.groups.push_back(g);
                }
            } else {
                PriorGroup g;
                g.begin = at(l, 0, 0);
                g.end = g.begin + fan_in * fan_out;
                g.tau = prior.tau_w;
                prior.groups.push_back(g);
            }
            PriorGroup bias;
            bias.begin = at(l, fan_in, 0);
            bias.end = bias.begin + fan_out;
            bias.tau = prior.tau_w;
            prior.groups.push_back(bias);
        }
        return prior;
    }

    double forward_flat(const std::vector<double>& w, const double* x) const {
        std::vector<double> a(x, x + widths_[0]);
        std::vector<double> next;
        for (std::size_t l = 0; l < n_layers(); ++l) {
            const std::size_t fan_in = widths_[l];
            const std::size_t fan_out = widths_[l + 1];
            next.assign(fan_out, 0.0);
            for (std::size_t j = 0; j < fan_out; ++j) {
                double u = w[at(l, fan_in, j)];
                for (std::size_t i = 0; i < fan_in; ++i)
                    u += a[i] * w[at(l, i, j)];
                next[j] = (l + 1 < n_layers()) ? activate(arch_.activation, u) : u;
            }
            a.swap(next);
        }
        return a[0];
    }

    // log p(W | tau) + log p(D | W), up to the evidence. Includes the
    // Gaussian normalizing constants so the prior term is meaningful alone.
    double log_posterior_raw(const std::vector<double>& w, const PriorSpec& prior,
                             const Matrix& X, const std::vector<int>& y) const {
        double lp = 0.0;
        for (const auto& g : prior.groups) {
            double ss = 0.0;
            for (std::size_t i = g.begin; i < g.end; ++i) ss += w[i] * w[i];
            const double k = static_cast<double>(g.end - g.begin);
            lp += 0.5 * k * std::log(g.tau / (2.0 * std::numbers::pi)) -
                  0.5 * g.tau * ss;
        }
        auto softplus = [](double z) {
            return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        };
        for (std::size_t i = 0; i < X.rows(); ++i) {
            const double z = forward_flat(w, X.row_ptr(i));
            lp += static_cast<double>(y[i]) * z - softplus(z);
        }
        return lp;
    }

    double log_posterior(const std::vector<double>& w, const PriorSpec& prior,
                         const Matrix& X, const std::vector<int>& y) const {
        const double lp = log_posterior_raw(w, prior, X, y);
        if (!std::isfinite(lp)) throw NumericError("log_posterior: non-finite value");
        return lp;
    }

    // Exact reverse-mode gradient of log_posterior_raw.
    std::vector<double> grad_log_posterior(const std::vector<double>& w,
                                           const PriorSpec& prior, const Matrix& X,
                                           const std::vector<int>& y) const {
        std::vector<double> grad(n_params(), 0.0);
        const std::size_t L = n_layers();
        std::vector<std::vector<double>> act(L + 1);
        for (std::size_t i = 0; i < X.rows(); ++i) {
            const double* x = X.row_ptr(i);
            act[0].assign(x, x + widths_[0]);
            for (std::size_t l = 0; l < L; ++l) {
                const std::size_t fan_in = widths_[l];
                const std::size_t fan_out = widths_[l + 1];
                act[l + 1].assign(fan_out, 0.0);
                for (std::size_t j = 0; j < fan_out; ++j) {
                    double u = w[at(l, fan_in, j)];
                    for (std::size_t a = 0; a < fan_in; ++a)
                        u += act[l][a] * w[at(l, a, j)];
                    act[l + 1][j] =
                        (l + 1 < L) ? activate(arch_.activation, u) : u;
                }
            }
            const double z = act[L][0];
            const double sigma = 1.0 / (1.0 + std::exp(-z));
            std::vector<double> delta = {static_cast<double>(y[i]) - sigma};
            for (std::size_t l = L; l-- > 0;) {
                const std::size_t fan_in = widths_[l];
                const std::size_t fan_out = widths_[l + 1];
                for (std::size_t j = 0; j < fan_out; ++j) {
                    grad[at(l, fan_in, j)] += delta[j];
                    for (std::size_t a = 0; a < fan_in; ++a)
                        grad[at(l, a, j)] += act[l][a] * delta[j];
                }
                if (l == 0) break;
                std::vector<double> prev(fan_in, 0.0);
                for (std::size_t a = 0; a < fan_in; ++a) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < fan_out; ++j)
                        s += w[at(l, a, j)] * delta[j];
                    const double h = act[l][a];
                    const double dact = arch_.activation == Activation::Tanh
                                            ? 1.0 - h * h
                                            : (h > 0.0 ? 1.0 : 0.0);
                    prev[a] = s * dact;
                }
                delta.swap(prev);
            }
        }
        for (const auto& g : prior.groups)
            for (std::size_t i = g.begin; i < g.end; ++i) grad[i] -= g.tau * w[i];
        return grad;
    }

private:
    BnnArchitecture arch_;
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> offsets_;
};

// Conjugate precision updates. Each non-fixed group draws
//   tau_g ~ Gamma(alpha/2 + k/2, rate alpha/(2 scale) + sum(w^2)/2),
// then the shared ARD level draws
//   theta ~ Gamma(alpha0/2 + G alpha1/2, rate alpha0/(2 tau0) + (alpha1/2) sum tau_g).
inline void gibbs_update_hyperparams(const std::vector<double>& w, PriorSpec& prior,
                                     Rng& rng) {
    double ard_tau_sum = 0.0;
    std::size_t ard_count = 0;
    for (auto& g : prior.groups) {
        if (g.fixed) continue;
        double ss = 0.0;
        for (std::size_t i = g.begin; i < g.end; ++i) ss += w[i] * w[i];
        const double k = static_cast<double>(g.end - g.begin);
        const double scale_level = prior.group_scale(g);
        const double shape = 0.5 * g.alpha + 0.5 * k;
        const double rate = g.alpha / (2.0 * scale_level) + 0.5 * ss;
        g.tau = rng.gamma(shape, 1.0 / rate);
        if (g.ard) {
            ard_tau_sum += g.tau;
            ++ard_count;
        }
    }
    if (ard_count > 0) {
        const double shape =
            0.5 * prior.ard_alpha0 + 0.5 * prior.ard_alpha1 * static_cast<double>(ard_count);
        const double rate = prior.ard_alpha0 / (2.0 * prior.ard_tau0) +
                            0.5 * prior.ard_alpha1 * ard_tau_sum;
        prior.ard_theta = rng.gamma(shape, 1.0 / rate);
    }
}

struct PosteriorSamples {
    BnnArchitecture arch;
    std::vector<std::vector<double>> draws;           // retained flat weights
    std::vector<std::vector<double>> tau_trajectory;  // per-iteration group taus
    int chain_length = 0;
    int burn_in = 0;
    double acceptance_rate = 0.0;
    double post_burn_acceptance = 0.0;
    double final_step_size = 0.0;
    bool adapted = false;
};

// Alternates one Gibbs hyperparameter sweep with one HMC weight transition.
// The step size multiplies by 0.8 when the trailing-100 rejection rate is
// at or above 0.3 and by 1.1 when below 0.1, during burn-in only; if the
// target is missed by the end of burn-in, the best-observed step is kept
// with a warning. The first half of the chain is discarded.
inline PosteriorSamples train_bnn(const Matrix& X, const std::vector<int>& y,
                                  const BnnArchitecture& arch, const HmcConfig& config) {
    if (X.rows() == 0) throw UsageError("train_bnn: empty data");
    if (y.size() != X.rows()) throw UsageError("train_bnn: label length mismatch");
    if (X.cols() != arch.input_width)
        throw UsageError("train_bnn: input width mismatch");
    if (config.chain_length < 2) throw UsageError("train_bnn: chain too short");
    BnnNetwork net(arch);
    PriorSpec prior = net.make_prior();

    Rng rng(config.seed);
    std::vector<double> w(net.n_params());
    for (auto& v : w) v = rng.normal(0.0, 0.1);

    const int retained_target = config.chain_length / 2;
    const int burn = config.chain_length - retained_target;

    PosteriorSamples out;
    out.arch = arch;
    out.chain_length = config.chain_length;
    out.burn_in = burn;

    double step = config.step_size;
    double best_step = step;
    double best_rejection = 1.0;
    std::deque<int> window;  // 1 = rejected
    int accepted_total = 0;
    int accepted_post = 0;

    auto logp = [&](const std::vector<double>& q) {
        return net.log_posterior_raw(q, prior, X, y);
    };
    auto gradp = [&](const std::vector<double>& q) {
        return net.grad_log_posterior(q, prior, X, y);
    };

    for (int t = 0; t < config.chain_length; ++t) {
        gibbs_update_hyperparams(w, prior, rng);
        std::vector<double> taus;
        taus.reserve(prior.groups.size());
        for (const auto& g : prior.groups) taus.push_back(g.tau);
        out.tau_trajectory.push_back(std::move(taus));

        const HmcStepResult res =
            hmc_step(w, logp, gradp, config.leapfrog_length, step, rng);
        if (res.accepted) {
            ++accepted_total;
            if (t >= burn) ++accepted_post;
        }
        window.push_back(res.accepted ? 0 : 1);
        if (window.size() > 100) window.pop_front();

        if (t < burn && window.size() >= 10) {
            double rej = 0.0;
            for (int r : window) rej += r;
            rej /= static_cast<double>(window.size());
            if (rej < best_rejection) {
                best_rejection = rej;
                best_step = step;
            }
            if (rej >= 0.3)
                step *= 0.8;
            else if (rej < 0.1)
                step *= 1.1;
        }
        if (t + 1 == burn) {
            double rej = 0.0;
            for (int r : window) rej += r;
            rej /= window.empty() ? 1.0 : static_cast<double>(window.size());
            if (rej >= 0.3) {
                warn("train_bnn: step-size adaptation missed the rejection target; "
                     "keeping best step " +
                     std::to_string(best_step));
                step = best_step;
            } else {
                out.adapted = true;
            }
        }
        if (t >= burn) out.draws.push_back(w);
    }
    out.acceptance_rate =
        static_cast<double>(accepted_total) / static_cast<double>(config.chain_length);
    out.post_burn_acceptance =
        retained_target > 0
            ? static_cast<double>(accepted_post) / static_cast<double>(retained_target)
            : 0.0;
    out.final_step_size = step;
    return out;
}

// Posterior-predictive probability: mean of logistic(f(W, x)) over retained
// draws; class 1 at probability >= 0.5.
inline double predict_bnn(const PosteriorSamples& samples, const std::vector<double>& x) {
    if (samples.draws.empty()) throw UsageError("predict_bnn: no retained draws");
    BnnNetwork net(samples.arch);
    double mean = 0.0;
    for (const auto& w : samples.draws) {
        const double z = net.forward_flat(w, x.data());
        mean += 1.0 / (1.0 + std::exp(-z));
    }
    return mean / static_cast<double>(samples.draws.size());
}

inline int predict_bnn_class(const PosteriorSamples& samples,
                             const std::vector<double>& x) {
    return predict_bnn(samples, x) >= 0.5 ? 1 : 0;
}

}  // namespace otupred
