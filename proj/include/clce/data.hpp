#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clce/matrix.hpp"
#include "clce/model.hpp"

namespace clce {

struct Dataset {
    Matrix features;  // (N, input_dim)
    std::vector<int> labels;
    int class_count = 0;
    std::vector<std::string> class_names;  // optional, indexed by label

    std::size_t size() const { return features.rows; }
    std::size_t input_dim() const { return features.cols; }
};

// Gaussian clusters around class centers drawn uniformly on the unit sphere
Dataset generate_blobs(int class_count, int per_class, std::size_t dim,
                       double spread, std::uint64_t seed);

// Numeric CSV with a header row; the label column may hold arbitrary strings
// and is re-indexed densely in first-appearance order.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

// All *.bin files in the directory, each a sequence of 3073-byte records
// (1 label byte + 3072 pixel bytes, R/G/B 32x32 planes). Pixels scale to
// [0, 1]; files are read in lexicographic order.
Dataset load_cifar10_binary(const std::filesystem::path& directory);

enum class AugmentationKind {
    GaussianNoise,      // x + sigma * N(0, I)
    CoordinateDropout,  // zero each coordinate with probability p
    Compose,            // noise then dropout
    ImageCropFlip,      // reflect-padded random crop + horizontal flip (3x32x32)
};

struct AugmentationPolicy {
    AugmentationKind kind = AugmentationKind::Compose;
    double noise_sigma = 0.05;
    double dropout_prob = 0.1;
    int crop_padding = 4;
    double flip_prob = 0.5;

    void validate() const;
};

// Rows 2i and 2i+1 are two independent augmentations of dataset row
// indices[i]; labels and sample_ids are duplicated per view.
TwoViewBatch make_two_view_batch(const Dataset& dataset,
                                 std::span<const std::size_t> indices,
                                 const AugmentationPolicy& policy,
                                 std::uint64_t seed);

}  // namespace clce
