// Independent reference computations used only by tests. These evaluate the
// loss definitions literally (plain exponentials, no shifting, no shared
// code with the library implementation) so they can act as oracles.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "clce/matrix.hpp"
#include "clce/rng.hpp"

namespace oracle {

// mean of -log p_label with probabilities computed the direct way
inline double naive_softmax_ce(const clce::Matrix& logits, const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double denom = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) denom += std::exp(logits(i, c));
        const double p = std::exp(logits(i, labels[i])) / denom;
        total -= std::log(p);
    }
    return total / static_cast<double>(logits.rows);
}

// literal per-anchor contrastive loss: pos / (|P| * (pos + weighted neg)),
// negative weights n * exp(s_k) / sum exp(s)
inline std::vector<std::optional<double>> naive_lacln_per_anchor(
    const clce::Matrix& embeddings, const std::vector<int>& labels, double temperature,
    bool hnm) {
    const std::size_t m = embeddings.rows;
    std::vector<std::optional<double>> per_anchor(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> pos_sims, neg_sims;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double s =
                clce::dot(embeddings.row(i), embeddings.row(j)) / temperature;
            if (labels[j] == labels[i])
                pos_sims.push_back(s);
            else
                neg_sims.push_back(s);
        }
        if (pos_sims.empty()) continue;
        double pos_mass = 0.0;
        for (double s : pos_sims) pos_mass += std::exp(s);
        double neg_mass = 0.0;
        if (!neg_sims.empty()) {
            if (hnm) {
                double exp_sum = 0.0;
                for (double s : neg_sims) exp_sum += std::exp(s);
                const double n = static_cast<double>(neg_sims.size());
                for (double s : neg_sims)
                    neg_mass += (n * std::exp(s) / exp_sum) * std::exp(s);
            } else {
                for (double s : neg_sims) neg_mass += std::exp(s);
            }
        }
        const double ratio =
            pos_mass / (static_cast<double>(pos_sims.size()) * (pos_mass + neg_mass));
        per_anchor[i] = -std::log(ratio);
    }
    return per_anchor;
}

inline double naive_lacln_total(const clce::Matrix& embeddings,
                                const std::vector<int>& labels, double temperature,
                                bool hnm, bool mean_over_anchors) {
    const auto per_anchor = naive_lacln_per_anchor(embeddings, labels, temperature, hnm);
    double total = 0.0;
    std::size_t contributing = 0;
    for (const auto& v : per_anchor) {
        if (!v) continue;
        total += *v;
        ++contributing;
    }
    return mean_over_anchors ? total / static_cast<double>(contributing) : total;
}

// random orthogonal matrix via Gram-Schmidt on gaussian columns
inline clce::Matrix random_rotation(std::size_t d, std::uint64_t seed) {
    clce::Rng rng(seed);
    clce::Matrix q(d, d);
    for (std::size_t col = 0; col < d; ++col) {
        std::vector<double> v(d);
        for (;;) {
            for (std::size_t i = 0; i < d; ++i) v[i] = rng.gaussian();
            for (std::size_t prev = 0; prev < col; ++prev) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) proj += v[i] * q(i, prev);
                for (std::size_t i = 0; i < d; ++i) v[i] -= proj * q(i, prev);
            }
            const double norm = clce::l2_norm(v);
            if (norm > 1e-6) {
                for (std::size_t i = 0; i < d; ++i) q(i, col) = v[i] / norm;
                break;
            }
        }
    }
    return q;
}

inline clce::Matrix rotate_rows(const clce::Matrix& x, const clce::Matrix& rotation) {
    clce::Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < x.cols; ++k) acc += x(i, k) * rotation(j, k);
            out(i, j) = acc;
        }
    return out;
}

// unit vectors with all pairwise dot products equal (regular simplex
// vertices, optionally rotated); used to build equal-negative batches
inline clce::Matrix simplex_vertices(std::size_t count, std::size_t dim) {
    clce::Matrix v(count, dim);
    const double n = static_cast<double>(count);
    for (std::size_t c = 0; c < count; ++c) {
        for (std::size_t k = 0; k < count; ++k)
            v(c, k) = (c == k ? 1.0 : 0.0) - 1.0 / n;
        const double norm = clce::l2_norm(v.row(c));
        for (std::size_t k = 0; k < dim; ++k) v(c, k) /= norm;
    }
    return v;
}

}  // namespace oracle
