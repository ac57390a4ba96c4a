#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/rng.hpp"

namespace sdtag {

// Householder QR: returns the orthogonal factor Q (d x d, row-major) of a
// square matrix A. Small d only; no pivoting.
inline std::vector<double> qr_orthogonal_factor(std::vector<double> a, std::size_t d) {
    if (a.size() != d * d) throw ShapeError("qr: matrix must be d*d");
    // Q starts as identity and accumulates reflectors: Q = H_0 H_1 ... H_{d-1}.
    std::vector<double> q(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) q[i * d + i] = 1.0;
    std::vector<double> v(d);

    for (std::size_t k = 0; k + 1 < d; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < d; ++i) norm += a[i * d + k] * a[i * d + k];
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        const double alpha = a[k * d + k] >= 0.0 ? -norm : norm;
        double vnorm2 = 0.0;
        for (std::size_t i = k; i < d; ++i) {
            v[i] = a[i * d + k] - (i == k ? alpha : 0.0);
            vnorm2 += v[i] * v[i];
        }
        if (vnorm2 == 0.0) continue;
        // A <- H A with H = I - 2 v v^T / (v^T v), applied to rows k..d-1.
        for (std::size_t j = k; j < d; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < d; ++i) dot += v[i] * a[i * d + j];
            const double f = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < d; ++i) a[i * d + j] -= f * v[i];
        }
        // Q <- Q H (accumulate on the right; columns k..d-1 of Q are touched).
        for (std::size_t i = 0; i < d; ++i) {
            double dot = 0.0;
            for (std::size_t j = k; j < d; ++j) dot += q[i * d + j] * v[j];
            const double f = 2.0 * dot / vnorm2;
            for (std::size_t j = k; j < d; ++j) q[i * d + j] -= f * v[j];
        }
    }
    return q;
}

// Orthonormal identifier rows for a set of frame elements.
class OrfTable {
public:
    OrfTable() = default;
    OrfTable(std::size_t d_orf, std::vector<std::int64_t> ids, std::vector<double> rows)
        : d_orf_(d_orf), rows_(std::move(rows)) {
        for (std::size_t i = 0; i < ids.size(); ++i) index_[ids[i]] = i;
    }

    std::size_t d_orf() const { return d_orf_; }
    std::size_t count() const { return index_.size(); }
    bool has(std::int64_t id) const { return index_.count(id) != 0; }

    const double* row(std::int64_t id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ContractError("orf: no row for element " + std::to_string(id));
        return rows_.data() + it->second * d_orf_;
    }

private:
    std::size_t d_orf_ = 0;
    std::unordered_map<std::int64_t, std::size_t> index_;
    std::vector<double> rows_;
};

// QR of a seeded d_orf x d_orf Gaussian; rows of Q are assigned to elements in
// ascending id order. Each row is sign-fixed (first entry of magnitude > 1e-12
// made positive) so the table is deterministic.
inline OrfTable generate_orf(std::vector<std::int64_t> ids, std::size_t d_orf, std::uint64_t seed) {
    if (ids.empty()) throw ContractError("generate_orf: need at least one element");
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() > d_orf) {
        throw CapacityError("frame has " + std::to_string(ids.size()) +
                            " elements, exceeding identifier capacity d_orf=" + std::to_string(d_orf));
    }
    Rng rng(seed);
    std::vector<double> g(d_orf * d_orf);
    for (auto& x : g) x = rng.normal();
    std::vector<double> q = qr_orthogonal_factor(std::move(g), d_orf);

    std::vector<double> rows(ids.size() * d_orf);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = q.data() + i * d_orf;
        double sign = 1.0;
        for (std::size_t j = 0; j < d_orf; ++j) {
            if (std::abs(src[j]) > 1e-12) {
                sign = src[j] > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t j = 0; j < d_orf; ++j) rows[i * d_orf + j] = sign * src[j];
    }
    return OrfTable(d_orf, std::move(ids), std::move(rows));
}

}  // namespace sdtag
