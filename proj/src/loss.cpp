#include "clce/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "clce/errors.hpp"

namespace clce {

namespace {

constexpr double kNormTolerance = 1e-9;
constexpr double kDegenerateNorm = 1e-12;

// Shifted per-anchor masses. All exponentials use arguments <= 0.
struct AnchorMasses {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double shift = 0.0;     // max similarity over j != i
    double pos_mass = 0.0;  // sum_p exp(s_p - shift)
    double neg_w = 0.0;     // sum_k exp(s_k - shift)
    double neg_u = 0.0;     // sum_k exp(2 (s_k - shift))
    double denom = 0.0;     // pos_mass + shifted negative mass
};

// Similarities of anchor `i` against the whole batch, already scaled by 1/tau.
void anchor_similarities(const EmbeddingBatch& batch, std::size_t i,
                         double temperature, std::vector<double>& sims) {
    const std::size_t m = batch.size();
    sims.resize(m);
    const auto anchor = batch.embeddings.row(i);
    for (std::size_t j = 0; j < m; ++j)
        sims[j] = dot(anchor, batch.embeddings.row(j)) / temperature;
}

AnchorMasses anchor_masses(const EmbeddingBatch& batch, std::size_t i,
                           const std::vector<double>& sims, bool hnm_enabled) {
    const std::size_t m = batch.size();
    AnchorMasses a;
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        if (batch.labels[j] == batch.labels[i])
            ++a.positives;
        else
            ++a.negatives;
        shift = std::max(shift, sims[j]);
    }
    if (a.positives == 0) return a;
    a.shift = shift;
    for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        const double e = std::exp(sims[j] - shift);
        if (batch.labels[j] == batch.labels[i]) {
            a.pos_mass += e;
        } else {
            a.neg_w += e;
            a.neg_u += std::exp(2.0 * (sims[j] - shift));
        }
    }
    double neg_mass = 0.0;
    if (a.negatives > 0)
        neg_mass = hnm_enabled
                       ? static_cast<double>(a.negatives) * a.neg_u / a.neg_w
                       : a.neg_w;
    a.denom = a.pos_mass + neg_mass;
    return a;
}

std::size_t count_contributing(const EmbeddingBatch& batch) {
    const std::size_t m = batch.size();
    std::size_t contributing = 0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i && batch.labels[j] == batch.labels[i]) {
                ++contributing;
                break;
            }
        }
    }
    return contributing;
}

void check_alignment(const EmbeddingBatch& emb, const LogitsBatch& logits) {
    if (emb.size() != logits.size())
        throw InvalidBatch("embedding and logits batches disagree on view count");
    if (emb.labels != logits.labels)
        throw InvalidBatch("embedding and logits batches disagree on labels");
}

}  // namespace

void EmbeddingBatch::validate() const {
    if (labels.size() != embeddings.rows || sample_ids.size() != embeddings.rows)
        throw InvalidBatch("labels/sample_ids length must equal embedding row count");
    if (embeddings.rows > 0 && embeddings.cols == 0)
        throw InvalidBatch("embedding rows must have at least one column");
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        if (labels[i] < 0)
            throw InvalidBatch("label " + std::to_string(labels[i]) + " at row " +
                               std::to_string(i) + " is negative");
        const double n = l2_norm(embeddings.row(i));
        if (!(std::abs(n - 1.0) <= kNormTolerance))
            throw InvalidBatch("embedding row " + std::to_string(i) +
                               " is not unit-norm (norm=" + std::to_string(n) + ")");
    }
}

void LossConfig::validate() const {
    if (!(temperature > 0.0))
        throw ConfigError("temperature must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("lambda must lie in [0, 1]");
}

void LogitsBatch::validate() const {
    if (labels.size() != logits.rows)
        throw InvalidBatch("labels length must equal logits row count");
    if (logits.rows == 0)
        throw InvalidBatch("logits batch is empty");
    if (!all_finite(logits))
        throw NumericalError("logits contain non-finite values");
    for (std::size_t i = 0; i < logits.rows; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols)
            throw InvalidBatch("label at row " + std::to_string(i) +
                               " is outside [0, C)");
}

std::vector<double> l2_normalize(std::span<const double> v) {
    if (v.empty()) throw DegenerateVector("cannot normalize an empty vector");
    const double n = l2_norm(v);
    if (!(n > kDegenerateNorm))
        throw DegenerateVector("vector norm " + std::to_string(n) +
                               " is too small to normalize");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

double softmax_ce(const LogitsBatch& batch) {
    batch.validate();
    const std::size_t m = batch.size();
    const std::size_t c = batch.class_count();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = batch.logits.row(i);
        double shift = row[0];
        for (std::size_t j = 1; j < c; ++j) shift = std::max(shift, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - shift);
        const double log_prob = row[batch.labels[i]] - shift - std::log(sum);
        total -= log_prob;
    }
    return total / static_cast<double>(m);
}

Matrix softmax_ce_gradient(const LogitsBatch& batch) {
    batch.validate();
    const std::size_t m = batch.size();
    const std::size_t c = batch.class_count();
    Matrix grad(m, c);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = batch.logits.row(i);
        double shift = row[0];
        for (std::size_t j = 1; j < c; ++j) shift = std::max(shift, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - shift);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - shift) / sum;
            grad(i, j) = (p - (static_cast<std::size_t>(batch.labels[i]) == j ? 1.0 : 0.0)) * inv_m;
        }
    }
    return grad;
}

Matrix similarity_matrix(const EmbeddingBatch& batch, double temperature) {
    batch.validate();
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    const std::size_t m = batch.size();
    Matrix sims(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            sims(i, j) = dot(batch.embeddings.row(i), batch.embeddings.row(j)) / temperature;
    return sims;
}

std::vector<double> hard_negative_weights(std::span<const double> sims) {
    if (sims.empty())
        throw EmptyNegativeSet("hard_negative_weights needs at least one similarity");
    const std::size_t n = sims.size();
    double shift = sims[0];
    for (std::size_t k = 1; k < n; ++k) shift = std::max(shift, sims[k]);
    std::vector<double> weights(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        weights[k] = std::exp(sims[k] - shift);
        sum += weights[k];
    }
    const double scale = static_cast<double>(n) / sum;
    for (double& w : weights) w *= scale;
    return weights;
}

LaclnResult lacln_loss(const EmbeddingBatch& batch, const LossConfig& config) {
    config.validate();
    batch.validate();
    const std::size_t m = batch.size();
    if (m < 2) throw BatchTooSmall("contrastive loss needs at least two views");

    LaclnResult result;
    result.per_anchor.assign(m, std::nullopt);
    std::vector<double> sims;
    std::size_t contributing = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        anchor_similarities(batch, i, config.temperature, sims);
        const AnchorMasses a = anchor_masses(batch, i, sims, config.hnm_enabled);
        if (a.positives == 0) continue;
        // grouping the log difference first keeps the no-negative case at
        // exactly ln|P| (denom == pos_mass cancels bit-exactly)
        const double li = std::log(static_cast<double>(a.positives)) +
                          (std::log(a.denom) - std::log(a.pos_mass));
        result.per_anchor[i] = li;
        total += li;
        ++contributing;
    }
    if (contributing == 0)
        throw NoPositivePairs("every anchor has an empty positive set");
    result.total = config.reduction == LaclnReduction::MeanOverAnchors
                       ? total / static_cast<double>(contributing)
                       : total;
    return result;
}

Matrix lacln_embedding_gradient(const EmbeddingBatch& batch, const LossConfig& config) {
    config.validate();
    batch.validate();
    const std::size_t m = batch.size();
    if (m < 2) throw BatchTooSmall("contrastive loss needs at least two views");
    const std::size_t contributing = count_contributing(batch);
    if (contributing == 0)
        throw NoPositivePairs("every anchor has an empty positive set");
    const double scale = config.reduction == LaclnReduction::MeanOverAnchors
                             ? 1.0 / static_cast<double>(contributing)
                             : 1.0;

    const std::size_t d = batch.dim();
    Matrix grad(m, d);
    std::vector<double> sims;
    for (std::size_t i = 0; i < m; ++i) {
        anchor_similarities(batch, i, config.temperature, sims);
        const AnchorMasses a = anchor_masses(batch, i, sims, config.hnm_enabled);
        if (a.positives == 0) continue;
        const auto anchor = batch.embeddings.row(i);
        auto grad_anchor = grad.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double e = std::exp(sims[j] - a.shift);
            double dl_ds;
            if (batch.labels[j] == batch.labels[i]) {
                dl_ds = e / a.denom - e / a.pos_mass;
            } else if (!config.hnm_enabled) {
                dl_ds = e / a.denom;
            } else {
                // d/ds of n*U/W with U = sum exp(2s), W = sum exp(s),
                // written with shifted sums
                const double e2 = std::exp(2.0 * (sims[j] - a.shift));
                dl_ds = static_cast<double>(a.negatives) *
                        (2.0 * e2 * a.neg_w - a.neg_u * e) /
                        (a.neg_w * a.neg_w * a.denom);
            }
            const double g = scale * dl_ds / config.temperature;
            const auto other = batch.embeddings.row(j);
            auto grad_other = grad.row(j);
            for (std::size_t k = 0; k < d; ++k) {
                grad_anchor[k] += g * other[k];
                grad_other[k] += g * anchor[k];
            }
        }
    }
    return grad;
}

LossBreakdown clce_loss(const EmbeddingBatch& emb, const LogitsBatch& logits,
                        const LossConfig& config) {
    config.validate();
    check_alignment(emb, logits);
    LossBreakdown b;
    b.ce = softmax_ce(logits);
    LaclnResult lacln = lacln_loss(emb, config);
    b.lacln = lacln.total;
    b.per_anchor_lacln = std::move(lacln.per_anchor);
    b.clce = (1.0 - config.lambda) * b.ce + config.lambda * b.lacln;
    return b;
}

ClceGradient clce_gradient(const EmbeddingBatch& emb, const LogitsBatch& logits,
                           const LossConfig& config) {
    config.validate();
    check_alignment(emb, logits);
    ClceGradient g;
    g.d_embeddings = Matrix(emb.size(), emb.dim());
    g.d_logits = Matrix(logits.size(), logits.class_count());

    if (config.lambda < 1.0) {
        g.d_logits = softmax_ce_gradient(logits);
        const double w = 1.0 - config.lambda;
        for (double& v : g.d_logits.data) v *= w;
    }
    if (config.lambda > 0.0) {
        const Matrix grad_norm = lacln_embedding_gradient(emb, config);
        // rows are unit, so the normalization Jacobian is I - x x^T
        for (std::size_t i = 0; i < emb.size(); ++i) {
            const auto x = emb.embeddings.row(i);
            const auto gn = grad_norm.row(i);
            const double radial = dot(x, gn);
            auto out = g.d_embeddings.row(i);
            for (std::size_t k = 0; k < emb.dim(); ++k)
                out[k] = config.lambda * (gn[k] - radial * x[k]);
        }
    }
    return g;
}

namespace {

Matrix renormalize_rows(const Matrix& raw) {
    Matrix out(raw.rows, raw.cols);
    for (std::size_t i = 0; i < raw.rows; ++i) {
        const std::vector<double> unit = l2_normalize(raw.row(i));
        std::copy(unit.begin(), unit.end(), out.row(i).begin());
    }
    return out;
}

// clce as a function of raw embedding coordinates and logits; terms with
// zero weight are skipped so endpoint configs cannot trip component errors
double clce_value_raw(const Matrix& raw_embeddings, const EmbeddingBatch& emb,
                      const LogitsBatch& logits, const LossConfig& config) {
    double value = 0.0;
    if (config.lambda < 1.0) value += (1.0 - config.lambda) * softmax_ce(logits);
    if (config.lambda > 0.0) {
        EmbeddingBatch unit{renormalize_rows(raw_embeddings), emb.labels, emb.sample_ids};
        value += config.lambda * lacln_loss(unit, config).total;
    }
    return value;
}

double relative_deviation(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

double finite_difference_check(const EmbeddingBatch& emb, const LogitsBatch& logits,
                               const LossConfig& config, double h, double corruption) {
    if (!(h > 0.0)) throw InvalidStepSize("finite-difference step must be positive");
    ClceGradient analytic = clce_gradient(emb, logits, config);
    if (corruption != 0.0 && analytic.d_embeddings.data.size() > 0)
        analytic.d_embeddings.data[0] += corruption;

    double max_rel = 0.0;

    Matrix raw = emb.embeddings;
    for (std::size_t i = 0; i < raw.rows; ++i) {
        for (std::size_t j = 0; j < raw.cols; ++j) {
            const double original = raw(i, j);
            raw(i, j) = original + h;
            const double up = clce_value_raw(raw, emb, logits, config);
            raw(i, j) = original - h;
            const double down = clce_value_raw(raw, emb, logits, config);
            raw(i, j) = original;
            const double fd = (up - down) / (2.0 * h);
            max_rel = std::max(max_rel, relative_deviation(analytic.d_embeddings(i, j), fd));
        }
    }

    LogitsBatch perturbed = logits;
    for (std::size_t i = 0; i < perturbed.logits.rows; ++i) {
        for (std::size_t j = 0; j < perturbed.logits.cols; ++j) {
            const double original = perturbed.logits(i, j);
            perturbed.logits(i, j) = original + h;
            const double up = clce_value_raw(emb.embeddings, emb, perturbed, config);
            perturbed.logits(i, j) = original - h;
            const double down = clce_value_raw(emb.embeddings, emb, perturbed, config);
            perturbed.logits(i, j) = original;
            const double fd = (up - down) / (2.0 * h);
            max_rel = std::max(max_rel, relative_deviation(analytic.d_logits(i, j), fd));
        }
    }
    return max_rel;
}

}  // namespace clce
