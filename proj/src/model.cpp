#include "clce/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "clce/errors.hpp"
#include "clce/rng.hpp"

namespace clce {

namespace {

constexpr char kMagic[5] = {'C', 'L', 'C', 'E', '1'};
constexpr std::uint32_t kMaxDim = 1u << 24;

void dense_apply(const DenseLayer& layer, const Matrix& in, Matrix& out) {
    const std::size_t rows = in.rows;
    const std::size_t fan_in = layer.weights.cols;
    const std::size_t fan_out = layer.weights.rows;
    out = Matrix(rows, fan_out);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto x = in.row(i);
        auto y = out.row(i);
        for (std::size_t o = 0; o < fan_out; ++o) {
            double acc = layer.bias[o];
            const auto w = layer.weights.row(o);
            for (std::size_t k = 0; k < fan_in; ++k) acc += w[k] * x[k];
            y[o] = acc;
        }
    }
}

struct ForwardCache {
    std::vector<Matrix> activations;  // a_0 = inputs, ..., a_L = raw
    std::vector<Matrix> pre_acts;     // z_1 ... z_L
    std::vector<double> raw_norms;
    Matrix normalized;
    Matrix logits;
};

ForwardCache forward_cached(const EncoderModel& model, const Matrix& inputs) {
    if (inputs.cols != model.dims.input_dim)
        throw ShapeError("input width " + std::to_string(inputs.cols) +
                         " does not match model input_dim " +
                         std::to_string(model.dims.input_dim));
    if (inputs.rows == 0) throw ShapeError("forward needs at least one row");

    ForwardCache cache;
    cache.activations.reserve(model.encoder.size() + 1);
    cache.activations.push_back(inputs);
    cache.pre_acts.resize(model.encoder.size());
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        dense_apply(model.encoder[l], cache.activations.back(), cache.pre_acts[l]);
        Matrix act = cache.pre_acts[l];
        if (l + 1 < model.encoder.size())  // hidden layers are ReLU, final is linear
            for (double& v : act.data) v = v > 0.0 ? v : 0.0;
        cache.activations.push_back(std::move(act));
    }

    const Matrix& raw = cache.activations.back();
    cache.normalized = Matrix(raw.rows, raw.cols);
    cache.raw_norms.resize(raw.rows);
    for (std::size_t i = 0; i < raw.rows; ++i) {
        const std::vector<double> unit = l2_normalize(raw.row(i));
        cache.raw_norms[i] = l2_norm(raw.row(i));
        std::copy(unit.begin(), unit.end(), cache.normalized.row(i).begin());
    }
    dense_apply(model.head, raw, cache.logits);
    return cache;
}

std::vector<int> iota_ids(std::size_t n) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

ModelGradient zero_gradient(const EncoderModel& model) {
    ModelGradient g;
    g.encoder.reserve(model.encoder.size());
    for (const DenseLayer& layer : model.encoder)
        g.encoder.push_back({Matrix(layer.weights.rows, layer.weights.cols),
                             std::vector<double>(layer.bias.size(), 0.0)});
    g.head = {Matrix(model.head.weights.rows, model.head.weights.cols),
              std::vector<double>(model.head.bias.size(), 0.0)};
    return g;
}

// accumulate dW = delta^T * activations and db = column sums of delta,
// then return the upstream delta for the previous layer
Matrix backprop_dense(const DenseLayer& layer, const Matrix& activations,
                      const Matrix& delta, DenseLayer& grad) {
    const std::size_t rows = delta.rows;
    const std::size_t fan_out = layer.weights.rows;
    const std::size_t fan_in = layer.weights.cols;
    for (std::size_t i = 0; i < rows; ++i) {
        const auto d = delta.row(i);
        const auto a = activations.row(i);
        for (std::size_t o = 0; o < fan_out; ++o) {
            auto gw = grad.weights.row(o);
            for (std::size_t k = 0; k < fan_in; ++k) gw[k] += d[o] * a[k];
            grad.bias[o] += d[o];
        }
    }
    Matrix upstream(rows, fan_in);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto d = delta.row(i);
        auto u = upstream.row(i);
        for (std::size_t o = 0; o < fan_out; ++o) {
            const auto w = layer.weights.row(o);
            for (std::size_t k = 0; k < fan_in; ++k) u[k] += d[o] * w[k];
        }
    }
    return upstream;
}

template <typename Fn>
void for_each_parameter_slab(EncoderModel& model, ModelGradient& grad, Fn&& fn) {
    std::size_t slab = 0;
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        fn(slab++, model.encoder[l].weights.data, grad.encoder[l].weights.data);
        fn(slab++, model.encoder[l].bias, grad.encoder[l].bias);
    }
    fn(slab++, model.head.weights.data, grad.head.weights.data);
    fn(slab++, model.head.bias, grad.head.bias);
}

void write_bytes(std::ofstream& out, const void* data, std::size_t size) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, sizeof(v)); }

void read_bytes(std::ifstream& in, void* data, std::size_t size) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in.gcount() != static_cast<std::streamsize>(size))
        throw CorruptCheckpoint("checkpoint file is truncated");
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    read_bytes(in, &v, sizeof(v));
    return v;
}

std::uint32_t read_dim(std::ifstream& in) {
    const std::uint32_t v = read_u32(in);
    if (v == 0 || v > kMaxDim)
        throw CorruptCheckpoint("checkpoint dimension " + std::to_string(v) +
                                " is out of range");
    return v;
}

DenseLayer read_layer(std::ifstream& in) {
    const std::uint32_t out_dim = read_dim(in);
    const std::uint32_t in_dim = read_dim(in);
    DenseLayer layer{Matrix(out_dim, in_dim), std::vector<double>(out_dim)};
    read_bytes(in, layer.weights.data.data(), layer.weights.data.size() * sizeof(double));
    read_bytes(in, layer.bias.data(), layer.bias.size() * sizeof(double));
    return layer;
}

void write_layer(std::ofstream& out, const DenseLayer& layer) {
    write_u32(out, static_cast<std::uint32_t>(layer.weights.rows));
    write_u32(out, static_cast<std::uint32_t>(layer.weights.cols));
    write_bytes(out, layer.weights.data.data(), layer.weights.data.size() * sizeof(double));
    write_bytes(out, layer.bias.data(), layer.bias.size() * sizeof(double));
}

}  // namespace

EncoderModel EncoderModel::init(const ModelDims& dims, std::uint64_t seed) {
    if (dims.input_dim == 0 || dims.embed_dim == 0 || dims.class_count == 0)
        throw ConfigError("model dims must be positive");
    for (std::size_t w : dims.hidden)
        if (w == 0) throw ConfigError("hidden widths must be positive");

    EncoderModel model;
    model.dims = dims;
    Rng rng(seed);
    std::vector<std::size_t> widths;
    widths.push_back(dims.input_dim);
    for (std::size_t w : dims.hidden) widths.push_back(w);
    widths.push_back(dims.embed_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        // small positive bias keeps freshly initialized units alive, so tiny
        // networks cannot emit an exactly-zero representation
        DenseLayer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.01)};
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& w : layer.weights.data) w = scale * rng.gaussian();
        model.encoder.push_back(std::move(layer));
    }
    model.head = {Matrix(dims.class_count, dims.embed_dim),
                  std::vector<double>(dims.class_count, 0.0)};
    const double head_scale = std::sqrt(1.0 / static_cast<double>(dims.embed_dim));
    for (double& w : model.head.weights.data) w = head_scale * rng.gaussian();
    return model;
}

std::size_t EncoderModel::parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& layer : encoder)
        n += layer.weights.data.size() + layer.bias.size();
    return n + head.weights.data.size() + head.bias.size();
}

ForwardResult forward(const EncoderModel& model, const Matrix& inputs) {
    ForwardCache cache = forward_cached(model, inputs);
    return {std::move(cache.activations.back()), std::move(cache.normalized),
            std::move(cache.logits)};
}

OptimizerState OptimizerState::init(const OptimizerConfig& config,
                                    const EncoderModel& model) {
    OptimizerState state;
    state.config = config;
    auto add_slab = [&state, &config](std::size_t n) {
        state.first_moment.emplace_back(n, 0.0);
        if (config.kind == OptimizerKind::Adam) state.second_moment.emplace_back(n, 0.0);
    };
    for (const DenseLayer& layer : model.encoder) {
        add_slab(layer.weights.data.size());
        add_slab(layer.bias.size());
    }
    add_slab(model.head.weights.data.size());
    add_slab(model.head.bias.size());
    return state;
}

double model_clce_loss(const EncoderModel& model, const Matrix& inputs,
                       const std::vector<int>& labels, const LossConfig& config) {
    ForwardCache cache = forward_cached(model, inputs);
    double value = 0.0;
    if (config.lambda < 1.0)
        value += (1.0 - config.lambda) * softmax_ce({cache.logits, labels});
    if (config.lambda > 0.0) {
        EmbeddingBatch emb{cache.normalized, labels, iota_ids(inputs.rows)};
        value += config.lambda * lacln_loss(emb, config).total;
    }
    return value;
}

ModelGradient clce_model_gradient(const EncoderModel& model, const Matrix& inputs,
                                  const std::vector<int>& labels,
                                  const LossConfig& config) {
    config.validate();
    ForwardCache cache = forward_cached(model, inputs);
    const std::size_t m = inputs.rows;
    const std::size_t d = model.dims.embed_dim;
    ModelGradient grad = zero_gradient(model);

    Matrix d_raw(m, d);

    if (config.lambda < 1.0) {
        Matrix d_logits = softmax_ce_gradient({cache.logits, labels});
        const double w = 1.0 - config.lambda;
        for (double& v : d_logits.data) v *= w;
        // head path: d_raw += d_logits * W_head, plus head parameter grads
        Matrix upstream = backprop_dense(model.head, cache.activations.back(),
                                         d_logits, grad.head);
        for (std::size_t i = 0; i < d_raw.data.size(); ++i)
            d_raw.data[i] += upstream.data[i];
    }

    if (config.lambda > 0.0) {
        EmbeddingBatch emb{cache.normalized, labels, iota_ids(m)};
        const Matrix grad_norm = lacln_embedding_gradient(emb, config);
        // chain through x = r / ||r||: J^T g = (g - (x.g) x) / ||r||
        for (std::size_t i = 0; i < m; ++i) {
            const auto x = cache.normalized.row(i);
            const auto gn = grad_norm.row(i);
            const double radial = dot(x, gn);
            const double inv_norm = 1.0 / cache.raw_norms[i];
            auto out = d_raw.row(i);
            for (std::size_t k = 0; k < d; ++k)
                out[k] += config.lambda * (gn[k] - radial * x[k]) * inv_norm;
        }
    }

    // encoder backprop; final layer is linear, hidden layers gate by ReLU
    Matrix delta = std::move(d_raw);
    for (std::size_t l = model.encoder.size(); l-- > 0;) {
        Matrix upstream = backprop_dense(model.encoder[l], cache.activations[l],
                                         delta, grad.encoder[l]);
        if (l > 0) {
            const Matrix& z = cache.pre_acts[l - 1];
            for (std::size_t i = 0; i < upstream.data.size(); ++i)
                upstream.data[i] = z.data[i] > 0.0 ? upstream.data[i] : 0.0;
        }
        delta = std::move(upstream);
    }
    return grad;
}

LossBreakdown train_step(EncoderModel& model, OptimizerState& optimizer,
                         const TwoViewBatch& batch, const LossConfig& config) {
    config.validate();
    if (batch.inputs.rows < 2 || batch.inputs.rows % 2 != 0)
        throw InvalidBatch("two-view batch must contain an even number of views");
    if (batch.labels.size() != batch.inputs.rows ||
        batch.sample_ids.size() != batch.inputs.rows)
        throw InvalidBatch("two-view batch labels/sample_ids must match view count");
    for (std::size_t i = 0; i + 1 < batch.inputs.rows; i += 2)
        if (batch.sample_ids[i] != batch.sample_ids[i + 1])
            throw InvalidBatch("views " + std::to_string(i) + "," +
                               std::to_string(i + 1) + " do not share a sample_id");

    ForwardCache cache = forward_cached(model, batch.inputs);
    if (!all_finite(cache.logits) || !all_finite(cache.activations.back()))
        throw DivergenceError("forward pass produced non-finite values");

    EmbeddingBatch emb{cache.normalized, batch.labels, batch.sample_ids};
    LossBreakdown breakdown = clce_loss(emb, {cache.logits, batch.labels}, config);
    if (!std::isfinite(breakdown.clce))
        throw DivergenceError("loss is non-finite");

    ModelGradient grad = clce_model_gradient(model, batch.inputs, batch.labels, config);

    const OptimizerConfig& oc = optimizer.config;
    optimizer.step += 1;
    if (oc.kind == OptimizerKind::SgdMomentum) {
        for_each_parameter_slab(model, grad, [&](std::size_t slab,
                                                 std::vector<double>& params,
                                                 std::vector<double>& g) {
            std::vector<double>& velocity = optimizer.first_moment[slab];
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = oc.momentum * velocity[i] + g[i];
                params[i] -= oc.learning_rate * velocity[i];
            }
        });
    } else {
        const double t = static_cast<double>(optimizer.step);
        const double bc1 = 1.0 - std::pow(oc.beta1, t);
        const double bc2 = 1.0 - std::pow(oc.beta2, t);
        for_each_parameter_slab(model, grad, [&](std::size_t slab,
                                                 std::vector<double>& params,
                                                 std::vector<double>& g) {
            std::vector<double>& m1 = optimizer.first_moment[slab];
            std::vector<double>& m2 = optimizer.second_moment[slab];
            for (std::size_t i = 0; i < params.size(); ++i) {
                m1[i] = oc.beta1 * m1[i] + (1.0 - oc.beta1) * g[i];
                m2[i] = oc.beta2 * m2[i] + (1.0 - oc.beta2) * g[i] * g[i];
                const double m_hat = m1[i] / bc1;
                const double v_hat = m2[i] / bc2;
                params[i] -= oc.learning_rate * m_hat / (std::sqrt(v_hat) + oc.epsilon);
            }
        });
    }
    return breakdown;
}

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    write_bytes(out, kMagic, sizeof(kMagic));
    write_u32(out, static_cast<std::uint32_t>(model.encoder.size()));
    write_u32(out, static_cast<std::uint32_t>(model.dims.input_dim));
    write_u32(out, static_cast<std::uint32_t>(model.dims.embed_dim));
    write_u32(out, static_cast<std::uint32_t>(model.dims.class_count));
    for (const DenseLayer& layer : model.encoder) write_layer(out, layer);
    write_layer(out, model.head);
    out.flush();
    if (!out) throw ConfigError("failed writing checkpoint to " + path.string());
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    char magic[5];
    read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CorruptCheckpoint("bad checkpoint magic in " + path.string());

    const std::uint32_t layer_count = read_u32(in);
    if (layer_count == 0 || layer_count > 64)
        throw CorruptCheckpoint("unreasonable encoder layer count");
    EncoderModel model;
    model.dims.input_dim = read_dim(in);
    model.dims.embed_dim = read_dim(in);
    model.dims.class_count = read_dim(in);

    std::size_t expected_in = model.dims.input_dim;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        DenseLayer layer = read_layer(in);
        if (layer.weights.cols != expected_in)
            throw CorruptCheckpoint("encoder layer shapes do not chain");
        if (l + 1 < layer_count) model.dims.hidden.push_back(layer.weights.rows);
        expected_in = layer.weights.rows;
        model.encoder.push_back(std::move(layer));
    }
    if (expected_in != model.dims.embed_dim)
        throw CorruptCheckpoint("final encoder layer does not produce embed_dim");
    model.head = read_layer(in);
    if (model.head.weights.cols != model.dims.embed_dim ||
        model.head.weights.rows != model.dims.class_count)
        throw CorruptCheckpoint("head shape does not match dims record");

    in.peek();
    if (!in.eof()) throw CorruptCheckpoint("trailing bytes after checkpoint payload");
    return model;
}

}  // namespace clce
