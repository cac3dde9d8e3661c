#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dsslab/error.hpp"
#include "dsslab/tensor.hpp"

namespace dsslab {

/// Factorization m = u * diag(sigma) * v, with u (m x m) and v (n x n)
/// orthogonal and sigma descending. sigma holds min(m, n) values.
struct SvdResult {
    Tensor u;
    std::vector<double> sigma;
    Tensor v;
};

/// One-sided Jacobi SVD for matrices up to 16 x 16. Fixed sweep order keeps
/// the result deterministic for a fixed input.
inline SvdResult svd_small(const Tensor& m) {
    if (m.rank() != 2) throw std::invalid_argument("svd_small: input must be 2-D");
    const int rows = m.extent(0), cols = m.extent(1);
    if (rows > 16 || cols > 16)
        throw std::invalid_argument("svd_small: dimensions capped at 16");

    // b starts as a column-major copy of m; rotations act on its columns.
    std::vector<std::vector<double>> b(cols, std::vector<double>(rows));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) b[c][r] = m.at2(r, c);

    // vacc accumulates the column rotations: m * vacc == b at all times.
    std::vector<std::vector<double>> vacc(cols, std::vector<double>(cols, 0.0));
    for (int c = 0; c < cols; ++c) vacc[c][c] = 1.0;

    auto col_dot = [&](int p, int q) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += b[p][r] * b[q][r];
        return acc;
    };

    double total2 = 0.0;
    for (double v : m.data()) total2 += v * v;
    // Columns at rounding-debris level stall the relative test; treat them as
    // converged outright.
    const double col_floor2 = 1e-30 * total2;

    constexpr int kMaxSweeps = 64;
    constexpr double kTol = 1e-14;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (int p = 0; p < cols - 1; ++p)
            for (int q = p + 1; q < cols; ++q) {
                const double app = col_dot(p, p);
                const double aqq = col_dot(q, q);
                const double apq = col_dot(p, q);
                if (app <= col_floor2 || aqq <= col_floor2) continue;
                if (std::abs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int r = 0; r < rows; ++r) {
                    const double bp = b[p][r], bq = b[q][r];
                    b[p][r] = c * bp - s * bq;
                    b[q][r] = s * bp + c * bq;
                }
                for (int r = 0; r < cols; ++r) {
                    const double vp = vacc[p][r], vq = vacc[q][r];
                    vacc[p][r] = c * vp - s * vq;
                    vacc[q][r] = s * vp + c * vq;
                }
            }
    }
    if (!converged) throw NumericError("svd_small: Jacobi sweeps did not converge");

    std::vector<double> norms(cols);
    for (int c = 0; c < cols; ++c)
        norms[c] = std::sqrt(std::inner_product(b[c].begin(), b[c].end(), b[c].begin(), 0.0));

    std::vector<int> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int bb) { return norms[a] > norms[bb]; });

    SvdResult res;
    res.sigma.resize(static_cast<std::size_t>(std::min(rows, cols)));
    for (std::size_t i = 0; i < res.sigma.size(); ++i) res.sigma[i] = norms[order[i]];

    // Left vectors: normalized nonzero columns of b, then a deterministic
    // Gram-Schmidt completion from the standard basis.
    std::vector<std::vector<double>> ucols;
    const double tiny = 1e-13 * (norms.empty() ? 1.0 : std::max(1.0, norms[order[0]]));
    for (int c = 0; c < cols && static_cast<int>(ucols.size()) < rows; ++c) {
        const int src = order[c];
        if (norms[src] <= tiny) break;
        std::vector<double> col(rows);
        for (int r = 0; r < rows; ++r) col[r] = b[src][r] / norms[src];
        ucols.push_back(std::move(col));
    }
    for (int e = 0; e < rows && static_cast<int>(ucols.size()) < rows; ++e) {
        std::vector<double> col(rows, 0.0);
        col[e] = 1.0;
        for (const auto& u : ucols) {
            double d = std::inner_product(u.begin(), u.end(), col.begin(), 0.0);
            for (int r = 0; r < rows; ++r) col[r] -= d * u[r];
        }
        double nn = std::sqrt(std::inner_product(col.begin(), col.end(), col.begin(), 0.0));
        if (nn < 1e-8) continue;
        for (double& x : col) x /= nn;
        ucols.push_back(std::move(col));
    }

    res.u = Tensor({rows, rows});
    for (int c = 0; c < rows; ++c)
        for (int r = 0; r < rows; ++r) res.u.at2(r, c) = ucols[static_cast<std::size_t>(c)][r];

    // m = b * vacc^T restricted to the sorted order, so v rows follow order.
    res.v = Tensor({cols, cols});
    for (int i = 0; i < cols; ++i)
        for (int j = 0; j < cols; ++j) res.v.at2(i, j) = vacc[order[i]][j];
    return res;
}

}  // namespace dsslab
