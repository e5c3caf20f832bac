#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "otupred/core.hpp"
#include "otupred/error.hpp"
#include "otupred/rng.hpp"

namespace otupred {

// Zero-replacement strategies. MultRepl's delta defaults to half the row's
// minimum nonzero proportion when unset.
struct ZeroReplacement {
    enum class Kind { None, Pseudo, MultRepl, BayesMult };
    Kind kind = Kind::None;
    double pseudo_count = 1.0;
    std::optional<double> delta;
    double prior_strength = 0.5;

    static ZeroReplacement none() { return {}; }
    static ZeroReplacement pseudo(double count = 1.0) {
        if (!(count > 0.0)) throw UsageError("pseudo count must be positive");
        ZeroReplacement z;
        z.kind = Kind::Pseudo;
        z.pseudo_count = count;
        return z;
    }
    static ZeroReplacement mult_repl(std::optional<double> delta = std::nullopt) {
        if (delta && !(*delta > 0.0)) throw UsageError("delta must be positive");
        ZeroReplacement z;
        z.kind = Kind::MultRepl;
        z.delta = delta;
        return z;
    }
    static ZeroReplacement bayes_mult(double prior_strength = 0.5) {
        if (!(prior_strength > 0.0))
            throw UsageError("prior strength must be positive");
        ZeroReplacement z;
        z.kind = Kind::BayesMult;
        z.prior_strength = prior_strength;
        return z;
    }
};

inline const char* zero_name(ZeroReplacement::Kind k) {
    switch (k) {
        case ZeroReplacement::Kind::None: return "none";
        case ZeroReplacement::Kind::Pseudo: return "pseudo";
        case ZeroReplacement::Kind::MultRepl: return "multRepl";
        case ZeroReplacement::Kind::BayesMult: return "bayesMult";
    }
    throw UsageError("zero_name: invalid kind");
}

struct Normalization {
    enum class Kind { TSS, CSS, COM, Rarefy, CLR };
    Kind kind = Kind::TSS;
    double quantile = 0.5;       // CSS only
    std::uint64_t seed = 1;      // Rarefy only
    double depth_target = 0.0;   // COM/rarefy: fixed depth; 0 = row minimum

    static Normalization tss() { return {}; }
    static Normalization css(double quantile = 0.5) {
        if (!(quantile > 0.0 && quantile < 1.0))
            throw UsageError("css quantile must be in (0,1)");
        Normalization n;
        n.kind = Kind::CSS;
        n.quantile = quantile;
        return n;
    }
    static Normalization com() {
        Normalization n;
        n.kind = Kind::COM;
        return n;
    }
    static Normalization rarefy(std::uint64_t seed) {
        Normalization n;
        n.kind = Kind::Rarefy;
        n.seed = seed;
        return n;
    }
    static Normalization clr() {
        Normalization n;
        n.kind = Kind::CLR;
        return n;
    }
};

inline const char* norm_name(Normalization::Kind k) {
    switch (k) {
        case Normalization::Kind::TSS: return "TSS";
        case Normalization::Kind::CSS: return "CSS";
        case Normalization::Kind::COM: return "COM";
        case Normalization::Kind::Rarefy: return "rarefy";
        case Normalization::Kind::CLR: return "clr";
    }
    throw UsageError("norm_name: invalid kind");
}

namespace detail {

// Type-7 quantile (linear interpolation) on an unsorted copy.
inline double quantile_type7(std::vector<double> v, double q) {
    if (v.empty()) throw UsageError("quantile: empty vector");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline void require_integral_counts(const OtuTable& t, const char* what) {
    for (std::size_t i = 0; i < t.n(); ++i)
        for (std::size_t j = 0; j < t.p(); ++j)
            if (std::floor(t.counts(i, j)) != t.counts(i, j))
                throw DataError(std::string(what) + ": requires integer counts, got " +
                                std::to_string(t.counts(i, j)));
}

// Hypergeometric(N, K, n) draw by inverse CDF with a pmf ratio recurrence.
inline std::int64_t hypergeometric(Rng& rng, std::int64_t N, std::int64_t K,
                                   std::int64_t n) {
    if (n <= 0 || K <= 0) return 0;
    if (n >= N) return K;
    const std::int64_t k_min = std::max<std::int64_t>(0, n - (N - K));
    const std::int64_t k_max = std::min(K, n);
    if (k_min == k_max) return k_min;
    auto lg = [](std::int64_t x) { return std::lgamma(static_cast<double>(x)); };
    double logp = lg(K + 1) - lg(k_min + 1) - lg(K - k_min + 1) + lg(N - K + 1) -
                  lg(n - k_min + 1) - lg(N - K - n + k_min + 1) -
                  (lg(N + 1) - lg(n + 1) - lg(N - n + 1));
    double pmf = std::exp(logp);
    double cum = pmf;
    std::int64_t k = k_min;
    const double u = rng.uniform();
    while (u > cum && k < k_max) {
        pmf *= (static_cast<double>(K - k) * static_cast<double>(n - k)) /
               (static_cast<double>(k + 1) * static_cast<double>(N - K - n + k + 1));
        ++k;
        cum += pmf;
    }
    return k;
}

}  // namespace detail

// Zero replacement operates row-wise and, for the multiplicative variants,
// preserves the row total exactly up to rounding.
inline OtuTable replace_zeros(const OtuTable& table, const ZeroReplacement& method) {
    if (method.kind == ZeroReplacement::Kind::None) return table;
    OtuTable out = table;
    const std::size_t p = table.p();
    for (std::size_t i = 0; i < table.n(); ++i) {
        double total = 0.0;
        double min_nonzero = 0.0;
        std::size_t zeros = 0;
        for (std::size_t j = 0; j < p; ++j) {
            const double v = table.counts(i, j);
            total += v;
            if (v == 0.0) {
                ++zeros;
            } else if (min_nonzero == 0.0 || v < min_nonzero) {
                min_nonzero = v;
            }
        }
        if (total <= 0.0)
            throw DataError("replace_zeros: sample '" + table.sample_ids[i] +
                            "' is entirely zero");
        if (zeros == 0) continue;
        switch (method.kind) {
            case ZeroReplacement::Kind::Pseudo:
                for (std::size_t j = 0; j < p; ++j)
                    if (table.counts(i, j) == 0.0)
                        out.counts(i, j) = method.pseudo_count;
                break;
            case ZeroReplacement::Kind::MultRepl: {
                const double delta =
                    method.delta ? *method.delta : 0.5 * (min_nonzero / total);
                const double scale = 1.0 - static_cast<double>(zeros) * delta;
                if (!(scale > 0.0))
                    throw DataError("replace_zeros: delta too large for sample '" +
                                    table.sample_ids[i] + "'");
                for (std::size_t j = 0; j < p; ++j) {
                    const double v = table.counts(i, j);
                    out.counts(i, j) = (v == 0.0) ? delta * total : v * scale;
                }
                break;
            }
            case ZeroReplacement::Kind::BayesMult: {
                // Posterior-mean proportion of a zero cell under a symmetric
                // Dirichlet(s/p) prior with the row total as the trial count.
                const double s = method.prior_strength;
                const double q0 = (s / static_cast<double>(p)) / (total + s);
                const double scale = 1.0 - static_cast<double>(zeros) * q0;
                for (std::size_t j = 0; j < p; ++j) {
                    const double v = table.counts(i, j);
                    out.counts(i, j) = (v == 0.0) ? q0 * total : v * scale;
                }
                break;
            }
            case ZeroReplacement::Kind::None:
                break;
        }
    }
    return out;
}

inline OtuTable normalize(const OtuTable& table, const Normalization& method) {
    OtuTable out = table;
    const std::size_t n = table.n();
    const std::size_t p = table.p();
    if (n == 0 || p == 0) throw DataError("normalize: empty table");
    switch (method.kind) {
        case Normalization::Kind::TSS: {
            for (std::size_t i = 0; i < n; ++i) {
                const double d = table.depth(i);
                if (!(d > 0.0))
                    throw DataError("normalize TSS: zero depth sample '" +
                                    table.sample_ids[i] + "'");
                for (std::size_t j = 0; j < p; ++j) out.counts(i, j) = table.counts(i, j) / d;
            }
            break;
        }
        case Normalization::Kind::CSS: {
            // Scaling factor: sum of the row's counts at or below the row's
            // nonzero-count quantile; reference is the median factor.
            std::vector<double> factors(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> nonzero;
                for (std::size_t j = 0; j < p; ++j)
                    if (table.counts(i, j) != 0.0) nonzero.push_back(table.counts(i, j));
                if (nonzero.empty())
                    throw DataError("normalize CSS: sample '" + table.sample_ids[i] +
                                    "' is entirely zero");
                const double qv = detail::quantile_type7(nonzero, method.quantile);
                double s = 0.0;
                for (std::size_t j = 0; j < p; ++j)
                    if (table.counts(i, j) <= qv) s += table.counts(i, j);
                factors[i] = s;
            }
            const double ref = median_of(factors);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < p; ++j)
                    out.counts(i, j) = table.counts(i, j) * (ref / factors[i]);
            break;
        }
        case Normalization::Kind::COM: {
            double min_depth = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = table.depth(i);
                if (!(d > 0.0))
                    throw DataError("normalize COM: zero depth sample '" +
                                    table.sample_ids[i] + "'");
                if (i == 0 || d < min_depth) min_depth = d;
            }
            if (method.depth_target > 0.0) min_depth = method.depth_target;
            for (std::size_t i = 0; i < n; ++i) {
                const double scale = min_depth / table.depth(i);
                for (std::size_t j = 0; j < p; ++j)
                    out.counts(i, j) = table.counts(i, j) * scale;
            }
            break;
        }
        case Normalization::Kind::Rarefy: {
            detail::require_integral_counts(table, "normalize rarefy");
            std::int64_t min_depth = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto d = static_cast<std::int64_t>(table.depth(i));
                if (d < 1)
                    throw DataError("normalize rarefy: sample '" + table.sample_ids[i] +
                                    "' has depth < 1");
                if (i == 0 || d < min_depth) min_depth = d;
            }
            if (method.depth_target > 0.0)
                min_depth = static_cast<std::int64_t>(method.depth_target);
            for (std::size_t i = 0; i < n; ++i) {
                if (static_cast<std::int64_t>(table.depth(i)) < min_depth) {
                    // Only reachable with an explicit target: the sample is
                    // already below it, so it is kept whole.
                    warn("normalize rarefy: sample '" + table.sample_ids[i] +
                         "' is below the target depth; kept unrarefied");
                    continue;
                }
                Rng rng(derive_seed(method.seed, i));
                std::int64_t remaining_pool = static_cast<std::int64_t>(table.depth(i));
                std::int64_t remaining_draws = min_depth;
                for (std::size_t j = 0; j < p; ++j) {
                    const auto k = static_cast<std::int64_t>(table.counts(i, j));
                    const std::int64_t take =
                        (j + 1 == p) ? remaining_draws
                                     : detail::hypergeometric(rng, remaining_pool, k,
                                                              remaining_draws);
                    out.counts(i, j) = static_cast<double>(take);
                    remaining_pool -= k;
                    remaining_draws -= take;
                }
            }
            break;
        }
        case Normalization::Kind::CLR: {
            for (std::size_t i = 0; i < n; ++i) {
                double mean_log = 0.0;
                for (std::size_t j = 0; j < p; ++j) {
                    const double v = table.counts(i, j);
                    if (!(v > 0.0))
                        throw DataError("normalize clr: non-positive entry in sample '" +
                                        table.sample_ids[i] + "'");
                    mean_log += std::log(v);
                }
                mean_log /= static_cast<double>(p);
                for (std::size_t j = 0; j < p; ++j)
                    out.counts(i, j) = std::log(table.counts(i, j)) - mean_log;
            }
            break;
        }
    }
    return out;
}

// One cell of the 20-combination grid.
struct PreprocessSpec {
    int index = 1;  // 1..20
    ZeroReplacement zero;
    Normalization norm;
};

inline std::string nm_label(const PreprocessSpec& spec) {
    return "NM" + std::to_string(spec.index) + ":" + norm_name(spec.norm.kind) + "+" +
           zero_name(spec.zero.kind);
}

// Canonical order: normalizations major (TSS, CSS, COM, rarefy, clr), zero
// replacements minor (none, pseudo, multRepl, bayesMult).
inline std::vector<PreprocessSpec> preprocess_grid(std::uint64_t rarefy_seed = 1) {
    const std::vector<Normalization> norms = {
        Normalization::tss(), Normalization::css(), Normalization::com(),
        Normalization::rarefy(rarefy_seed), Normalization::clr()};
    const std::vector<ZeroReplacement> zeros = {
        ZeroReplacement::none(), ZeroReplacement::pseudo(),
        ZeroReplacement::mult_repl(), ZeroReplacement::bayes_mult()};
    std::vector<PreprocessSpec> grid;
    grid.reserve(20);
    for (std::size_t ni = 0; ni < norms.size(); ++ni) {
        for (std::size_t zi = 0; zi < zeros.size(); ++zi) {
            PreprocessSpec spec;
            spec.index = static_cast<int>(ni * zeros.size() + zi + 1);
            spec.norm = norms[ni];
            spec.zero = zeros[zi];
            grid.push_back(spec);
        }
    }
    return grid;
}

inline PreprocessSpec nm_spec(int index, std::uint64_t rarefy_seed = 1) {
    if (index < 1 || index > 20) throw UsageError("nm_spec: index must be in 1..20");
    return preprocess_grid(rarefy_seed)[static_cast<std::size_t>(index - 1)];
}

// Applies zero replacement then normalization. Rarefaction needs integer
// counts, so it runs first and zero replacement follows on the rarefied
// counts. clr+none would hit log(0); a pseudocount of 1 fills in with a
// warning so the grid stays total.
inline OtuTable apply_preprocess(const OtuTable& table, const PreprocessSpec& spec) {
    if (spec.norm.kind == Normalization::Kind::Rarefy) {
        OtuTable rarefied = normalize(table, spec.norm);
        return replace_zeros(rarefied, spec.zero);
    }
    if (spec.norm.kind == Normalization::Kind::CLR &&
        spec.zero.kind == ZeroReplacement::Kind::None) {
        bool has_zero = false;
        for (std::size_t i = 0; i < table.n() && !has_zero; ++i)
            for (std::size_t j = 0; j < table.p(); ++j)
                if (table.counts(i, j) == 0.0) {
                    has_zero = true;
                    break;
                }
        if (has_zero) {
            warn("clr with no zero replacement: applying pseudocount 1 to zeros");
            return normalize(replace_zeros(table, ZeroReplacement::pseudo(1.0)),
                             spec.norm);
        }
        return normalize(table, spec.norm);
    }
    return normalize(replace_zeros(table, spec.zero), spec.norm);
}

enum class EnvScaler { Standardize, MinMax, MaxAbs, Robust, QuantileNormal, UnitNorm };

inline const char* env_scaler_name(EnvScaler s) {
    switch (s) {
        case EnvScaler::Standardize: return "standardize";
        case EnvScaler::MinMax: return "minmax";
        case EnvScaler::MaxAbs: return "maxabs";
        case EnvScaler::Robust: return "robust";
        case EnvScaler::QuantileNormal: return "quantile-normal";
        case EnvScaler::UnitNorm: return "unitnorm";
    }
    throw UsageError("env_scaler_name: invalid scaler");
}

inline EnvScaler parse_env_scaler(const std::string& s) {
    for (EnvScaler e : {EnvScaler::Standardize, EnvScaler::MinMax, EnvScaler::MaxAbs,
                        EnvScaler::Robust, EnvScaler::QuantileNormal, EnvScaler::UnitNorm})
        if (s == env_scaler_name(e)) return e;
    throw UsageError("unknown env scaler '" + s + "'");
}

namespace detail {

// Acklam's rational approximation to the standard normal quantile.
inline double probit(double u) {
    if (!(u > 0.0 && u < 1.0)) throw NumericError("probit: argument not in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double q, r;
    if (u < plow) {
        q = std::sqrt(-2.0 * std::log(u));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (u > 1.0 - plow) {
        q = std::sqrt(-2.0 * std::log(1.0 - u));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    q = u - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

// Scaling statistics are fit on fit_rows only and applied to every row; test
// rows therefore never leak into the fit.
inline EnvTable scale_env(const EnvTable& env, EnvScaler method,
                          const std::vector<std::size_t>& fit_rows) {
    if (fit_rows.empty()) throw UsageError("scale_env: fit_rows must be nonempty");
    for (std::size_t r : fit_rows)
        if (r >= env.n()) throw UsageError("scale_env: fit row out of range");
    EnvTable out = env;
    const std::size_t n = env.n();
    const std::size_t q = env.q();
    if (method == EnvScaler::UnitNorm) {
        for (std::size_t i = 0; i < n; ++i) {
            double norm = 0.0;
            for (std::size_t j = 0; j < q; ++j) norm += env.values(i, j) * env.values(i, j);
            norm = std::sqrt(norm);
            if (norm == 0.0) {
                warn("scale_env unitnorm: zero row '" + env.sample_ids[i] +
                     "' left as zeros");
                continue;
            }
            for (std::size_t j = 0; j < q; ++j) out.values(i, j) = env.values(i, j) / norm;
        }
        return out;
    }
    for (std::size_t j = 0; j < q; ++j) {
        std::vector<double> fit;
        fit.reserve(fit_rows.size());
        for (std::size_t r : fit_rows) fit.push_back(env.values(r, j));
        switch (method) {
            case EnvScaler::Standardize: {
                double mean = 0.0;
                for (double v : fit) mean += v;
                mean /= static_cast<double>(fit.size());
                double var = 0.0;
                for (double v : fit) var += (v - mean) * (v - mean);
                var /= static_cast<double>(fit.size());
                const double sd = std::sqrt(var);
                if (sd == 0.0) {
                    warn("scale_env standardize: zero-variance feature '" +
                         env.feature_names[j] + "' mapped to 0");
                    for (std::size_t i = 0; i < n; ++i) out.values(i, j) = 0.0;
                } else {
                    for (std::size_t i = 0; i < n; ++i)
                        out.values(i, j) = (env.values(i, j) - mean) / sd;
                }
                break;
            }
            case EnvScaler::MinMax: {
                const double lo = *std::min_element(fit.begin(), fit.end());
                const double hi = *std::max_element(fit.begin(), fit.end());
                if (hi == lo) {
                    warn("scale_env minmax: degenerate range for feature '" +
                         env.feature_names[j] + "' mapped to 0");
                    for (std::size_t i = 0; i < n; ++i) out.values(i, j) = 0.0;
                } else {
                    for (std::size_t i = 0; i < n; ++i)
                        out.values(i, j) = (env.values(i, j) - lo) / (hi - lo);
                }
                break;
            }
            case EnvScaler::MaxAbs: {
                double m = 0.0;
                for (double v : fit) m = std::max(m, std::fabs(v));
                if (m == 0.0) {
                    warn("scale_env maxabs: all-zero feature '" + env.feature_names[j] +
                         "' mapped to 0");
                    for (std::size_t i = 0; i < n; ++i) out.values(i, j) = 0.0;
                } else {
                    for (std::size_t i = 0; i < n; ++i)
                        out.values(i, j) = env.values(i, j) / m;
                }
                break;
            }
            case EnvScaler::Robust: {
                const double med = median_of(fit);
                const double iqr = detail::quantile_type7(fit, 0.75) -
                                   detail::quantile_type7(fit, 0.25);
                double div = iqr;
                if (div == 0.0) {
                    warn("scale_env robust: zero IQR for feature '" +
                         env.feature_names[j] + "', divisor 1");
                    div = 1.0;
                }
                for (std::size_t i = 0; i < n; ++i)
                    out.values(i, j) = (env.values(i, j) - med) / div;
                break;
            }
            case EnvScaler::QuantileNormal: {
                // Map through the fit empirical CDF (averaged plotting
                // positions for ties), then through the normal quantile.
                std::vector<double> sorted = fit;
                std::sort(sorted.begin(), sorted.end());
                const std::size_t m = sorted.size();
                std::vector<double> uniq_vals;
                std::vector<double> uniq_pos;
                std::size_t a = 0;
                while (a < m) {
                    std::size_t b = a;
                    while (b + 1 < m && sorted[b + 1] == sorted[a]) ++b;
                    double pos = 0.0;
                    for (std::size_t t = a; t <= b; ++t)
                        pos += (static_cast<double>(t) + 0.5) / static_cast<double>(m);
                    uniq_vals.push_back(sorted[a]);
                    uniq_pos.push_back(pos / static_cast<double>(b - a + 1));
                    a = b + 1;
                }
                auto cdf = [&](double x) {
                    if (x <= uniq_vals.front()) return uniq_pos.front();
                    if (x >= uniq_vals.back()) return uniq_pos.back();
                    const auto it =
                        std::upper_bound(uniq_vals.begin(), uniq_vals.end(), x);
                    const std::size_t hi = static_cast<std::size_t>(it - uniq_vals.begin());
                    const std::size_t lo = hi - 1;
                    if (uniq_vals[hi] == uniq_vals[lo]) return uniq_pos[lo];
                    const double f =
                        (x - uniq_vals[lo]) / (uniq_vals[hi] - uniq_vals[lo]);
                    return uniq_pos[lo] + f * (uniq_pos[hi] - uniq_pos[lo]);
                };
                for (std::size_t i = 0; i < n; ++i)
                    out.values(i, j) = detail::probit(cdf(env.values(i, j)));
                break;
            }
            case EnvScaler::UnitNorm:
                break;  // handled above
        }
    }
    return out;
}

}  // namespace otupred
