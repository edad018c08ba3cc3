#include "clce/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "clce/errors.hpp"
#include "clce/loss.hpp"
#include "clce/parallel.hpp"
#include "clce/rng.hpp"

namespace clce {

namespace {

std::map<int, std::vector<std::size_t>> group_by_label(std::span<const int> labels) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    return groups;
}

void check_episode_feasible(const std::map<int, std::vector<std::size_t>>& groups,
                            int way, int shot, int query) {
    if (way < 1 || shot < 1 || query < 1)
        throw ConfigError("episode needs way, shot and query >= 1");
    const std::size_t needed = static_cast<std::size_t>(shot) + query;
    std::size_t eligible = 0;
    std::string short_classes;
    for (const auto& [label, items] : groups) {
        if (items.size() >= needed) {
            ++eligible;
        } else {
            if (!short_classes.empty()) short_classes += ", ";
            short_classes += "class " + std::to_string(label) + " has " +
                             std::to_string(items.size());
        }
    }
    if (eligible < static_cast<std::size_t>(way)) {
        std::string msg = "need " + std::to_string(way) + " classes with at least " +
                          std::to_string(needed) + " items, found " +
                          std::to_string(eligible);
        if (!short_classes.empty()) msg += " (" + short_classes + ")";
        throw InsufficientData(msg);
    }
}

}  // namespace

Episode sample_episode(const Matrix& embeddings, std::span<const int> labels,
                       int way, int shot, int query, std::uint64_t seed) {
    if (labels.size() != embeddings.rows)
        throw InvalidBatch("labels length must match embedding rows");
    const auto groups = group_by_label(labels);
    check_episode_feasible(groups, way, shot, query);
    const std::size_t needed = static_cast<std::size_t>(shot) + query;

    std::vector<int> eligible;
    for (const auto& [label, items] : groups)
        if (items.size() >= needed) eligible.push_back(label);

    Rng rng(seed);
    rng.partial_shuffle(eligible, static_cast<std::size_t>(way));

    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.query_count = query;
    ep.episode_seed = seed;
    const std::size_t d = embeddings.cols;
    ep.support_embeddings = Matrix(static_cast<std::size_t>(way) * shot, d);
    ep.query_embeddings = Matrix(static_cast<std::size_t>(way) * query, d);
    ep.support_labels.resize(ep.support_embeddings.rows);
    ep.query_labels.resize(ep.query_embeddings.rows);

    for (int c = 0; c < way; ++c) {
        std::vector<std::size_t> items = groups.at(eligible[c]);
        rng.partial_shuffle(items, needed);
        for (int s = 0; s < shot; ++s) {
            const std::size_t out = static_cast<std::size_t>(c) * shot + s;
            const auto src = embeddings.row(items[s]);
            std::copy(src.begin(), src.end(), ep.support_embeddings.row(out).begin());
            ep.support_labels[out] = c;
        }
        for (int q = 0; q < query; ++q) {
            const std::size_t out = static_cast<std::size_t>(c) * query + q;
            const auto src = embeddings.row(items[shot + q]);
            std::copy(src.begin(), src.end(), ep.query_embeddings.row(out).begin());
            ep.query_labels[out] = c;
        }
    }
    return ep;
}

double nearest_centroid_classify(const Episode& episode) {
    const std::size_t d = episode.support_embeddings.cols;
    Matrix centroids(episode.way, d);
    for (std::size_t i = 0; i < episode.support_embeddings.rows; ++i) {
        const auto row = episode.support_embeddings.row(i);
        auto c = centroids.row(episode.support_labels[i]);
        for (std::size_t k = 0; k < d; ++k) c[k] += row[k];
    }
    for (int c = 0; c < episode.way; ++c) {
        auto row = centroids.row(c);
        const double norm = l2_norm(row);
        if (norm > 1e-12)
            for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
        // a zero support mean keeps cosine 0 against every query
    }

    std::size_t correct = 0;
    for (std::size_t q = 0; q < episode.query_embeddings.rows; ++q) {
        const auto query = episode.query_embeddings.row(q);
        int best = 0;
        double best_sim = dot(centroids.row(0), query);
        for (int c = 1; c < episode.way; ++c) {
            const double sim = dot(centroids.row(c), query);
            if (sim > best_sim) {
                best_sim = sim;
                best = c;
            }
        }
        if (best == episode.query_labels[q]) ++correct;
    }
    return static_cast<double>(correct) /
           static_cast<double>(episode.query_embeddings.rows);
}

EpisodeReport summarize_accuracies(std::vector<double> accuracies) {
    if (accuracies.empty()) throw InsufficientData("no episode accuracies to summarize");
    EpisodeReport report;
    report.accuracies = std::move(accuracies);
    const std::size_t n = report.accuracies.size();

    double sum = 0.0;
    for (double a : report.accuracies) sum += a;
    report.mean = sum / static_cast<double>(n);

    std::vector<double> sorted = report.accuracies;
    std::sort(sorted.begin(), sorted.end());
    report.median = n % 2 == 1 ? sorted[n / 2]
                               : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    if (n == 1) {
        report.single_episode = true;
        report.ci95 = 0.0;
    } else {
        double ss = 0.0;
        for (double a : report.accuracies) {
            const double delta = a - report.mean;
            ss += delta * delta;
        }
        const double stddev = std::sqrt(ss / static_cast<double>(n - 1));
        report.ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(n));
    }
    return report;
}

EpisodeReport run_evaluation(const Matrix& embeddings, std::span<const int> labels,
                             int way, int shot, int query, int episodes,
                             std::uint64_t seed, int threads) {
    if (episodes < 1) throw ConfigError("episode count must be >= 1");
    // validate once so episode workers cannot fail mid-flight
    check_episode_feasible(group_by_label(labels), way, shot, query);

    std::vector<double> accuracies(episodes);
    parallel_for(static_cast<std::size_t>(episodes), threads, [&](std::size_t e) {
        const Episode ep = sample_episode(embeddings, labels, way, shot, query,
                                          derive_seed(seed, e));
        accuracies[e] = nearest_centroid_classify(ep);
    });
    return summarize_accuracies(std::move(accuracies));
}

}  // namespace clce
