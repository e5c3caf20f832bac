#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "otupred/error.hpp"
#include "otupred/matrix.hpp"

namespace otupred {

struct AssociationNetwork {
    std::vector<std::string> nodes;
    Matrix rho;  // p x p partial correlations, unit diagonal
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // i < j
    std::vector<double> similarity;  // aligned with edges
    double threshold = 0.2;
    double ridge = 0.1;

    std::vector<int> degrees() const {
        std::vector<int> d(nodes.size(), 0);
        for (const auto& [i, j] : edges) {
            ++d[i];
            ++d[j];
        }
        return d;
    }
};

namespace net_detail {

// Kendall tau-b with tie correction, O(n^2) pair scan.
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double concordant = 0.0, discordant = 0.0, ties_x = 0.0, ties_y = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double dx = x[a] - x[b];
            const double dy = y[a] - y[b];
            if (dx == 0.0 && dy == 0.0) {
                ties_x += 1.0;
                ties_y += 1.0;
            } else if (dx == 0.0) {
                ties_x += 1.0;
            } else if (dy == 0.0) {
                ties_y += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((n0 - ties_x) * (n0 - ties_y));
    if (denom == 0.0) return 0.0;  // constant column, handled by caller
    return (concordant - discordant) / denom;
}

}  // namespace net_detail

// Rank-based partial-correlation network. Pipeline: Kendall tau, sine
// transform to a latent correlation, eigenvalue clipping to the nearest PSD
// matrix, ridge-regularized inversion, edge thresholding on the partial
// correlations, similarity weight 1 - d/2 with d = sqrt(2(1-rho)).
// Constant columns carry no rank information; they are excluded from the
// estimate with a warning and remain as isolated nodes.
inline AssociationNetwork infer_network(const Matrix& X,
                                        const std::vector<std::string>& names,
                                        double threshold = 0.2, double ridge = 0.1) {
    const std::size_t n = X.rows();
    const std::size_t p = X.cols();
    if (names.size() != p) throw UsageError("infer_network: names length mismatch");
    if (p < 2) throw UsageError("infer_network: need at least 2 columns");
    if (n < 4) throw DataError("infer_network: insufficient samples (n < 4)");

    std::vector<bool> active(p, true);
    std::vector<std::vector<double>> cols(p);
    for (std::size_t j = 0; j < p; ++j) {
        cols[j] = X.col(j);
        bool constant = true;
        for (std::size_t i = 1; i < n; ++i)
            if (cols[j][i] != cols[j][0]) {
                constant = false;
                break;
            }
        if (constant) {
            active[j] = false;
            warn("infer_network: constant column '" + names[j] +
                 "' excluded from estimation (isolated node)");
        }
    }
    std::vector<std::size_t> act;
    for (std::size_t j = 0; j < p; ++j)
        if (active[j]) act.push_back(j);

    AssociationNetwork net;
    net.nodes = names;
    net.threshold = threshold;
    net.ridge = ridge;
    net.rho = Matrix(p, p, 0.0);
    for (std::size_t j = 0; j < p; ++j) net.rho(j, j) = 1.0;
    if (act.size() < 2) return net;

    const std::size_t m = act.size();
    Eigen::MatrixXd S(m, m);
    for (std::size_t a = 0; a < m; ++a) {
        S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) = 1.0;
        for (std::size_t b = a + 1; b < m; ++b) {
            const double tau = net_detail::kendall_tau_b(cols[act[a]], cols[act[b]]);
            const double r = std::sin(std::numbers::pi * 0.5 * tau);
            S(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = r;
            S(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = r;
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    if (eig.info() != Eigen::Success)
        throw NumericError("infer_network: eigendecomposition failed");
    Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd Spd = eig.eigenvectors() * lam.asDiagonal() *
                          eig.eigenvectors().transpose();
    Spd.diagonal().array() += ridge;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(Spd);
    if (ldlt.info() != Eigen::Success)
        throw NumericError("infer_network: singular matrix after ridge");
    Eigen::MatrixXd omega =
        ldlt.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m),
                                             static_cast<Eigen::Index>(m)));
    if (!omega.allFinite())
        throw NumericError("infer_network: non-finite precision matrix");

    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
            const double dii = omega(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
            const double djj = omega(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
            double r = -omega(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) /
                       std::sqrt(dii * djj);
            r = std::clamp(r, -1.0, 1.0);
            net.rho(act[a], act[b]) = r;
            net.rho(act[b], act[a]) = r;
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) {
            const double r = net.rho(i, j);
            if (std::fabs(r) >= threshold) {
                net.edges.emplace_back(i, j);
                const double d = std::sqrt(2.0 * (1.0 - r));
                net.similarity.push_back(1.0 - d / 2.0);
            }
        }
    }
    return net;
}

struct NetworkComparison {
    struct Entry {
        std::string node;
        int degree0 = 0;
        int degree1 = 0;
        int diff = 0;
    };
    std::vector<Entry> ranked;  // descending diff, ties by node name ascending
};

inline NetworkComparison compare_networks(const AssociationNetwork& net0,
                                          const AssociationNetwork& net1) {
    if (net0.nodes != net1.nodes)
        throw UsageError("compare_networks: node sets differ");
    const auto d0 = net0.degrees();
    const auto d1 = net1.degrees();
    NetworkComparison cmp;
    cmp.ranked.reserve(net0.nodes.size());
    for (std::size_t i = 0; i < net0.nodes.size(); ++i)
        cmp.ranked.push_back({net0.nodes[i], d0[i], d1[i], std::abs(d0[i] - d1[i])});
    std::sort(cmp.ranked.begin(), cmp.ranked.end(),
              [](const NetworkComparison::Entry& a, const NetworkComparison::Entry& b) {
                  if (a.diff != b.diff) return a.diff > b.diff;
                  return a.node < b.node;
              });
    return cmp;
}

// Top ceil(fraction * p) nodes by degree difference, in rank order.
inline std::vector<std::string> select_by_degree_diff(const NetworkComparison& cmp,
                                                      double fraction = 0.3) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw UsageError("select_by_degree_diff: fraction must be in (0,1]");
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(cmp.ranked.size())));
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && i < cmp.ranked.size(); ++i)
        out.push_back(cmp.ranked[i].node);
    return out;
}

// Undirected DOT graph; positive associations are green, negative red.
inline std::string export_network_dot(const AssociationNetwork& net,
                                      const std::string& graph_name = "network") {
    std::ostringstream out;
    out << "graph " << graph_name << " {\n";
    for (const auto& node : net.nodes) out << "  \"" << node << "\";\n";
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
        const auto& [i, j] = net.edges[e];
        const bool positive = net.rho(i, j) >= 0.0;
        out << "  \"" << net.nodes[i] << "\" -- \"" << net.nodes[j] << "\" [color="
            << (positive ? "green" : "red") << "];\n";
    }
    out << "}\n";
    return out.str();
}

}  // namespace otupred
