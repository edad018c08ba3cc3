#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clce/matrix.hpp"

namespace clce {

// One N-way K-shot task. Labels are remapped to [0, N) in class draw order;
// support and query index sets are disjoint by construction.
struct Episode {
    int way = 0;
    int shot = 0;
    int query_count = 0;  // per class
    Matrix support_embeddings;  // (N*K, d)
    std::vector<int> support_labels;
    Matrix query_embeddings;  // (N*Q, d)
    std::vector<int> query_labels;
    std::uint64_t episode_seed = 0;
};

struct EpisodeReport {
    std::vector<double> accuracies;
    double mean = 0.0;
    double median = 0.0;
    double ci95 = 0.0;  // 1.96 * stddev / sqrt(episodes); 0 when flagged
    bool single_episode = false;
};

// Uniform class choice without replacement among classes holding at least
// K + Q items, then uniform item choice without replacement per class.
// Throws InsufficientData (naming the classes) when fewer than N classes
// qualify.
Episode sample_episode(const Matrix& embeddings, std::span<const int> labels,
                       int way, int shot, int query, std::uint64_t seed);

// Nearest class centroid under cosine similarity; centroids are the
// normalized support means; ties go to the lowest class index.
double nearest_centroid_classify(const Episode& episode);

EpisodeReport summarize_accuracies(std::vector<double> accuracies);

// Per-episode seeds derive from the master seed by a fixed splitting rule,
// so concurrent execution reproduces the sequential result exactly.
EpisodeReport run_evaluation(const Matrix& embeddings, std::span<const int> labels,
                             int way, int shot, int query, int episodes,
                             std::uint64_t seed, int threads = 0);

}  // namespace clce
