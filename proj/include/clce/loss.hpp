#pragma once

#include <optional>
#include <span>
#include <vector>

#include "clce/matrix.hpp"

namespace clce {

// A mini-batch of view embeddings for the contrastive branch. Rows must be
// unit-norm; two views of one sample share a sample_id. Positives and
// negatives are decided by labels, not by sample_ids.
struct EmbeddingBatch {
    Matrix embeddings;            // (M, d), unit rows
    std::vector<int> labels;      // length M
    std::vector<int> sample_ids;  // length M

    std::size_t size() const { return embeddings.rows; }
    std::size_t dim() const { return embeddings.cols; }
    void validate() const;  // throws InvalidBatch
};

enum class LaclnReduction {
    Sum,              // plain sum over contributing anchors
    MeanOverAnchors,  // mean over anchors with a non-empty positive set
};

struct LossConfig {
    double temperature = 0.5;  // tau; divides all similarities
    double lambda = 0.9;       // mixing weight: (1 - lambda)*CE + lambda*LACLN
    bool hnm_enabled = true;   // false fixes every negative weight to 1
    LaclnReduction reduction = LaclnReduction::MeanOverAnchors;

    void validate() const;  // throws ConfigError
};

struct LogitsBatch {
    Matrix logits;  // (M, C), pre-softmax
    std::vector<int> labels;

    std::size_t size() const { return logits.rows; }
    std::size_t class_count() const { return logits.cols; }
    void validate() const;
};

struct LossBreakdown {
    double ce = 0.0;
    double lacln = 0.0;
    double clce = 0.0;
    // absent for anchors whose positive set is empty
    std::vector<std::optional<double>> per_anchor_lacln;
};

struct LaclnResult {
    double total = 0.0;
    std::vector<std::optional<double>> per_anchor;
};

// v / ||v||; throws DegenerateVector when ||v|| <= 1e-12
std::vector<double> l2_normalize(std::span<const double> v);

// mean negative log-likelihood under a stable internal log-softmax
double softmax_ce(const LogitsBatch& batch);

// d(softmax_ce)/d(logits) = (softmax - one_hot) / M
Matrix softmax_ce_gradient(const LogitsBatch& batch);

// entry (i, j) = (x_i . x_j) / temperature
Matrix similarity_matrix(const EmbeddingBatch& batch, double temperature);

// w_k = n * exp(s_k) / sum_k' exp(s_k') for temperature-scaled similarities;
// weights sum to n and equal-similarity inputs give all ones
std::vector<double> hard_negative_weights(std::span<const double> sims);

// Label-aware contrastive loss with hard-negative weighting. Per anchor i
// with positives P and negatives N (by label),
//   l_i = -log( pos_mass / (|P| * (pos_mass + neg_mass)) )
// where pos_mass sums exp(s_ip) and neg_mass sums w_ik * exp(s_ik) with
// w_ik from hard_negative_weights (all 1 when hnm_enabled is false).
// Anchors with empty P are skipped. Exponential sums are max-shifted.
LaclnResult lacln_loss(const EmbeddingBatch& batch, const LossConfig& config);

// d(lacln)/d(x_i) in normalized-embedding coordinates, reduction applied.
// Hard-negative weights are differentiated through, not detached.
Matrix lacln_embedding_gradient(const EmbeddingBatch& batch, const LossConfig& config);

// clce = (1 - lambda) * ce + lambda * lacln
LossBreakdown clce_loss(const EmbeddingBatch& emb, const LogitsBatch& logits,
                        const LossConfig& config);

struct ClceGradient {
    Matrix d_embeddings;  // (M, d), w.r.t. raw embeddings: includes the
                          // Jacobian of the unit normalization
    Matrix d_logits;      // (M, C)
};

ClceGradient clce_gradient(const EmbeddingBatch& emb, const LogitsBatch& logits,
                           const LossConfig& config);

// Central-difference check of clce_gradient over every embedding and logit
// coordinate. Perturbed embedding rows are renormalized before evaluation.
// Returns the max of |analytic - fd| / max(|analytic|, |fd|, 1e-8).
// `corruption` is a test hook added to one analytic entry beforehand.
double finite_difference_check(const EmbeddingBatch& emb, const LogitsBatch& logits,
                               const LossConfig& config, double h,
                               double corruption = 0.0);

}  // namespace clce
