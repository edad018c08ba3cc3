#include "clce/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

#include "clce/errors.hpp"
#include "clce/rng.hpp"

namespace clce {

namespace {

constexpr std::size_t kMaxEigenDim = 512;
constexpr int kHistogramBins = 40;

double off_diagonal_norm(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            if (i != j) acc += a(i, j) * a(i, j);
    return std::sqrt(acc);
}

void check_unit_rows(const Matrix& embeddings) {
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        const double n = l2_norm(embeddings.row(i));
        if (!(std::abs(n - 1.0) <= 1e-9))
            throw InvalidBatch("embedding row " + std::to_string(i) +
                               " is not unit-norm");
    }
}

// gram(j, k) = sum_i V(i, j) V(i, k), filled symmetrically
Matrix gram_matrix(const Matrix& v) {
    Matrix gram(v.cols, v.cols);
    for (std::size_t j = 0; j < v.cols; ++j) {
        for (std::size_t k = j; k < v.cols; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < v.rows; ++i) acc += v(i, j) * v(i, k);
            gram(j, k) = acc;
            gram(k, j) = acc;
        }
    }
    return gram;
}

double log_partition(const Matrix& embeddings, std::span<const double> direction,
                     double sign) {
    double shift = -std::numeric_limits<double>::infinity();
    std::vector<double> projections(embeddings.rows);
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        projections[i] = sign * dot(direction, embeddings.row(i));
        shift = std::max(shift, projections[i]);
    }
    double sum = 0.0;
    for (double p : projections) sum += std::exp(p - shift);
    return shift + std::log(sum);
}

int histogram_bin(double value) {
    const int bin = static_cast<int>(std::floor((value + 1.0) * (kHistogramBins / 2.0)));
    return std::clamp(bin, 0, kHistogramBins - 1);
}

// Floyd's sampling: k distinct integers from [0, total)
std::unordered_set<std::uint64_t> sample_distinct(std::uint64_t total, std::uint64_t k,
                                                  Rng& rng) {
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(k));
    for (std::uint64_t j = total - k; j < total; ++j) {
        const std::uint64_t t = rng.uniform_index(static_cast<std::size_t>(j + 1));
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    return chosen;
}

}  // namespace

EigenDecomposition symmetric_eigen(const Matrix& a) {
    if (a.rows != a.cols) throw ShapeError("symmetric_eigen needs a square matrix");
    const std::size_t d = a.rows;
    if (d == 0) throw ShapeError("symmetric_eigen needs a non-empty matrix");
    if (d > kMaxEigenDim)
        throw ShapeError("symmetric_eigen supports dimensions up to 512");
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            if (!(std::abs(a(i, j) - a(j, i)) <= 1e-9))
                throw SymmetryError("matrix entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") is not symmetric");

    Matrix work(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            work(i, j) = 0.5 * (a(i, j) + a(j, i));
    Matrix vectors(d, d);
    for (std::size_t i = 0; i < d; ++i) vectors(i, i) = 1.0;

    const double norm = frobenius_norm(work);
    const double threshold = 1e-12 * norm;
    if (norm > 0.0) {
        bool converged = false;
        for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
            if (off_diagonal_norm(work) < threshold) {
                converged = true;
                break;
            }
            for (std::size_t p = 0; p < d; ++p) {
                for (std::size_t q = p + 1; q < d; ++q) {
                    const double apq = work(p, q);
                    if (apq == 0.0) continue;
                    const double theta = (work(q, q) - work(p, p)) / (2.0 * apq);
                    const double sign = theta >= 0.0 ? 1.0 : -1.0;
                    const double t =
                        sign / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                    const double c = 1.0 / std::sqrt(1.0 + t * t);
                    const double s = t * c;

                    const double app = work(p, p);
                    const double aqq = work(q, q);
                    work(p, p) = app - t * apq;
                    work(q, q) = aqq + t * apq;
                    work(p, q) = 0.0;
                    work(q, p) = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        if (i == p || i == q) continue;
                        const double aip = work(i, p);
                        const double aiq = work(i, q);
                        work(i, p) = c * aip - s * aiq;
                        work(p, i) = work(i, p);
                        work(i, q) = s * aip + c * aiq;
                        work(q, i) = work(i, q);
                    }
                    for (std::size_t i = 0; i < d; ++i) {
                        const double vip = vectors(i, p);
                        const double viq = vectors(i, q);
                        vectors(i, p) = c * vip - s * viq;
                        vectors(i, q) = s * vip + c * viq;
                    }
                }
            }
            converged = off_diagonal_norm(work) < threshold;
        }
        if (!converged)
            throw NumericalError("Jacobi eigensolver failed to converge");
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&work](std::size_t x, std::size_t y) {
        return work(x, x) > work(y, y);
    });

    EigenDecomposition result;
    result.eigenvalues.resize(d);
    result.eigenvectors = Matrix(d, d);
    for (std::size_t col = 0; col < d; ++col) {
        const std::size_t src = order[col];
        result.eigenvalues[col] = work(src, src);
        double sign = 1.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (std::abs(vectors(i, src)) > 1e-12) {
                sign = vectors(i, src) > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t i = 0; i < d; ++i)
            result.eigenvectors(i, col) = sign * vectors(i, src);
    }
    return result;
}

IsotropyResult isotropy_score(const Matrix& embeddings) {
    if (embeddings.rows < 2)
        throw InvalidBatch("isotropy_score needs at least two embeddings");
    check_unit_rows(embeddings);

    const EigenDecomposition eig = symmetric_eigen(gram_matrix(embeddings));
    const double lambda_max = eig.eigenvalues[0];
    if (!(lambda_max > 0.0))
        throw DegenerateEmbedding("embedding gram matrix has no positive eigenvalue");

    std::vector<std::size_t> survivors;
    for (std::size_t j = 0; j < eig.eigenvalues.size(); ++j)
        if (eig.eigenvalues[j] > 1e-10 * lambda_max) survivors.push_back(j);
    if (survivors.empty())
        throw DegenerateEmbedding("no eigenvector survives the eigenvalue threshold");

    const std::size_t d = embeddings.cols;
    std::vector<double> direction(d);
    IsotropyResult result;
    result.candidate_count = 2 * survivors.size();
    result.partition_values.reserve(result.candidate_count);
    double min_log = std::numeric_limits<double>::infinity();
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t j : survivors) {
        for (std::size_t i = 0; i < d; ++i) direction[i] = eig.eigenvectors(i, j);
        for (double sign : {1.0, -1.0}) {
            const double log_z = log_partition(embeddings, direction, sign);
            result.partition_values.push_back(std::exp(log_z));
            min_log = std::min(min_log, log_z);
            max_log = std::max(max_log, log_z);
        }
    }
    result.score = std::exp(min_log - max_log);
    result.max_over_min = std::exp(max_log - min_log);
    return result;
}

SimilarityHistogram cosine_distribution(const Matrix& embeddings,
                                        std::span<const int> labels,
                                        int target_class, long max_pairs,
                                        std::uint64_t seed) {
    if (labels.size() != embeddings.rows)
        throw InvalidBatch("labels length must match embedding rows");
    if (max_pairs < 1) throw ConfigError("max_pairs must be >= 1");
    check_unit_rows(embeddings);

    std::vector<std::size_t> members;
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == target_class)
            members.push_back(i);
        else
            others.push_back(i);
    }
    if (members.size() < 2)
        throw InsufficientData("class " + std::to_string(target_class) + " has " +
                               std::to_string(members.size()) +
                               " members; need at least 2");

    SimilarityHistogram hist;
    hist.target_class = target_class;
    hist.bin_edges.resize(kHistogramBins + 1);
    for (int b = 0; b <= kHistogramBins; ++b)
        hist.bin_edges[b] = -1.0 + 2.0 * b / kHistogramBins;
    hist.positive_counts.assign(kHistogramBins, 0);
    hist.negative_counts.assign(kHistogramBins, 0);

    const std::uint64_t m = members.size();
    const std::uint64_t pos_total = m * (m - 1) / 2;
    const std::uint64_t neg_total = m * others.size();

    Rng rng(seed);
    auto pos_pair = [&](std::uint64_t rank) {
        // unrank an unordered pair (a, b), a < b, from the triangular layout
        std::uint64_t a = 0;
        std::uint64_t remaining = m - 1;
        while (rank >= remaining) {
            rank -= remaining;
            ++a;
            --remaining;
        }
        return std::pair<std::size_t, std::size_t>{members[a],
                                                   members[a + 1 + rank]};
    };
    auto record_positive = [&](std::uint64_t rank) {
        const auto [a, b] = pos_pair(rank);
        hist.positive_counts[histogram_bin(dot(embeddings.row(a), embeddings.row(b)))]++;
        hist.positive_pair_count++;
    };
    auto record_negative = [&](std::uint64_t rank) {
        const std::size_t a = members[rank / others.size()];
        const std::size_t b = others[rank % others.size()];
        hist.negative_counts[histogram_bin(dot(embeddings.row(a), embeddings.row(b)))]++;
        hist.negative_pair_count++;
    };

    const std::uint64_t budget = static_cast<std::uint64_t>(max_pairs);
    if (pos_total <= budget) {
        for (std::uint64_t r = 0; r < pos_total; ++r) record_positive(r);
    } else {
        for (std::uint64_t r : sample_distinct(pos_total, budget, rng)) record_positive(r);
    }
    if (neg_total <= budget) {
        for (std::uint64_t r = 0; r < neg_total; ++r) record_negative(r);
    } else {
        for (std::uint64_t r : sample_distinct(neg_total, budget, rng)) record_negative(r);
    }
    return hist;
}

Matrix pca_project_2d(const Matrix& embeddings) {
    if (embeddings.rows < 3) throw ShapeError("pca_project_2d needs at least 3 rows");
    if (embeddings.cols < 2) throw ShapeError("pca_project_2d needs at least 2 columns");

    const std::size_t n = embeddings.rows;
    const std::size_t d = embeddings.cols;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = embeddings.row(i);
        for (std::size_t k = 0; k < d; ++k) mean[k] += row[k];
    }
    for (double& v : mean) v /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k)
            centered(i, k) = embeddings(i, k) - mean[k];

    Matrix covariance = gram_matrix(centered);
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (double& v : covariance.data) v *= scale;

    const EigenDecomposition eig = symmetric_eigen(covariance);
    Matrix projection(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t axis = 0; axis < 2; ++axis) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                acc += centered(i, k) * eig.eigenvectors(k, axis);
            projection(i, axis) = acc;
        }
    }
    return projection;
}

}  // namespace clce
