#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "clce/loss.hpp"
#include "clce/matrix.hpp"

namespace clce {

struct DenseLayer {
    Matrix weights;            // (out, in)
    std::vector<double> bias;  // out
};

struct ModelDims {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;  // ReLU layer widths, may be empty
    std::size_t embed_dim = 0;        // representation width d
    std::size_t class_count = 0;      // C
};

// MLP encoder (ReLU hidden layers, linear final layer) plus a linear
// classification head. The head consumes the raw representation; the
// contrastive branch consumes its unit-normalized form.
struct EncoderModel {
    ModelDims dims;
    std::vector<DenseLayer> encoder;  // hidden.size() + 1 layers
    DenseLayer head;                  // (C, d)

    static EncoderModel init(const ModelDims& dims, std::uint64_t seed);
    std::size_t parameter_count() const;
};

struct ForwardResult {
    Matrix raw;         // (M, d)
    Matrix normalized;  // (M, d), unit rows
    Matrix logits;      // (M, C)
};

ForwardResult forward(const EncoderModel& model, const Matrix& inputs);

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 0.05;
    double momentum = 0.9;  // sgd only
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;   // adam
    double epsilon = 1e-8;  // adam
};

struct OptimizerState {
    OptimizerConfig config;
    long step = 0;
    // one slab per parameter tensor, in model traversal order
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;  // adam only

    static OptimizerState init(const OptimizerConfig& config, const EncoderModel& model);
};

// 2B augmented views: rows 2i and 2i+1 come from one source sample and
// share a sample_id
struct TwoViewBatch {
    Matrix inputs;  // (2B, input_dim)
    std::vector<int> labels;
    std::vector<int> sample_ids;
};

struct ModelGradient {
    std::vector<DenseLayer> encoder;
    DenseLayer head;
};

// forward + clce value for the given loss config (used by gradient checks)
double model_clce_loss(const EncoderModel& model, const Matrix& inputs,
                       const std::vector<int>& labels, const LossConfig& config);

// full backpropagation of clce through head, normalization and encoder
ModelGradient clce_model_gradient(const EncoderModel& model, const Matrix& inputs,
                                  const std::vector<int>& labels,
                                  const LossConfig& config);

// One optimizer step on clce over the batch. Returns the pre-step loss
// breakdown; throws DivergenceError when the forward pass or loss is
// non-finite.
LossBreakdown train_step(EncoderModel& model, OptimizerState& optimizer,
                         const TwoViewBatch& batch, const LossConfig& config);

// Versioned binary checkpoint (magic "CLCE1"); round-trips are bit-exact.
void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

}  // namespace clce
