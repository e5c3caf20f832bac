// Shared helpers for the test suites: special functions for distributional
// checks, a KS test, temp-file scaffolding, and small table builders.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>
#include <vector>

#include "otupred/core.hpp"
#include "otupred/matrix.hpp"
#include "otupred/rng.hpp"

namespace testsupport {

// Regularized lower incomplete gamma P(a, x) via the series for x < a+1 and
// the Lentz continued fraction otherwise.
inline double regularized_gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-15) break;
    }
    const double q = std::exp(-x + a * std::log(x) - lg) * h;
    return 1.0 - q;
}

inline double gamma_cdf(double x, double shape, double scale) {
    return regularized_gamma_p(shape, x / scale);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Two-sided KS p-value (asymptotic Kolmogorov series with the standard
// finite-n correction).
inline double ks_pvalue(std::vector<double> samples,
                        const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(std::fabs(f - lo), std::fabs(hi - f)));
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * lambda * lambda * k * k);
        p += 2.0 * sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, p));
}

// Fresh scratch directory under the system temp root; removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path = candidate;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create scratch directory");
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

inline otupred::Matrix make_matrix(std::size_t rows, std::size_t cols,
                                   const std::vector<double>& values) {
    otupred::Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
    return m;
}

inline otupred::OtuTable make_table(std::size_t rows, std::size_t cols,
                                    const std::vector<double>& values,
                                    const std::string& variety = "VarA") {
    otupred::OtuTable t;
    t.level = otupred::TaxonomicLevel::Genus;
    t.counts = make_matrix(rows, cols, values);
    for (std::size_t i = 0; i < rows; ++i) {
        t.sample_ids.push_back("S" + std::to_string(i));
        t.varieties.push_back(variety);
    }
    for (std::size_t j = 0; j < cols; ++j) t.otu_names.push_back("OTU" + std::to_string(j));
    return t;
}

inline otupred::OtuTable random_count_table(std::size_t rows, std::size_t cols,
                                            std::uint64_t seed, double zero_rate = 0.3,
                                            std::int64_t max_count = 200) {
    otupred::Rng rng(seed);
    otupred::OtuTable t;
    t.level = otupred::TaxonomicLevel::Genus;
    t.counts = otupred::Matrix(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        t.sample_ids.push_back("S" + std::to_string(i));
        t.varieties.push_back(i % 2 == 0 ? "VarA" : "VarB");
        bool any = false;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = rng.uniform() < zero_rate
                                 ? 0.0
                                 : static_cast<double>(rng.uniform_int(1, max_count));
            t.counts(i, j) = v;
            any = any || v > 0.0;
        }
        if (!any) t.counts(i, 0) = 1.0;
    }
    for (std::size_t j = 0; j < cols; ++j) t.otu_names.push_back("OTU" + std::to_string(j));
    return t;
}

}  // namespace testsupport
