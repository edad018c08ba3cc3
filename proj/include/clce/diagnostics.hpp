#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clce/matrix.hpp"

namespace clce {

struct EigenDecomposition {
    std::vector<double> eigenvalues;  // descending, ties keep original order
    Matrix eigenvectors;              // columns, canonical sign
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius mass drops below
// 1e-12 * ||A||_F. Each eigenvector is sign-fixed so its first component of
// magnitude > 1e-12 is positive.
EigenDecomposition symmetric_eigen(const Matrix& a);

struct IsotropyResult {
    double score = 0.0;  // min Z / max Z over the candidate directions
    std::size_t candidate_count = 0;
    std::vector<double> partition_values;  // Z(c), order +u0, -u0, +u1, ...
    double max_over_min = 0.0;             // reciprocal ratio, for comparison
};

// Candidates are +/- each eigenvector of V^T V whose eigenvalue exceeds
// 1e-10 * lambda_max; Z(c) = sum_i exp(c . x_i) with max-shifting.
IsotropyResult isotropy_score(const Matrix& embeddings);

struct SimilarityHistogram {
    std::vector<double> bin_edges;       // 41 edges over [-1, 1]
    std::vector<long> positive_counts;   // 40 bins
    std::vector<long> negative_counts;   // 40 bins
    int target_class = 0;
    long positive_pair_count = 0;  // sampled totals, equal to count sums
    long negative_pair_count = 0;
};

// Positive pairs are unordered pairs within target_class; negative pairs
// combine a target member with each other-class member. Pair sets larger
// than max_pairs are subsampled uniformly with the seed.
SimilarityHistogram cosine_distribution(const Matrix& embeddings,
                                        std::span<const int> labels,
                                        int target_class, long max_pairs,
                                        std::uint64_t seed);

// Mean-center and project onto the top-2 covariance eigenvectors.
Matrix pca_project_2d(const Matrix& embeddings);

}  // namespace clce
