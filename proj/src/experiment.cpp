#include "clce/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "clce/csv.hpp"
#include "clce/diagnostics.hpp"
#include "clce/errors.hpp"
#include "clce/parallel.hpp"
#include "clce/rng.hpp"

namespace clce {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& context,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&key](const char* a) {
                return key == a;
            }) == allowed.end())
            throw ConfigError(context + ": unknown key '" + key + "'");
    }
}

const json* find_key(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& context, const char* key,
                  double fallback) {
    const json* v = find_key(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(context + "." + key + ": expected a number");
    return v->get<double>();
}

long get_integer(const json& obj, const std::string& context, const char* key,
                 long fallback) {
    const json* v = find_key(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer())
        throw ConfigError(context + "." + key + ": expected an integer");
    return v->get<long>();
}

std::uint64_t get_seed(const json& obj, const std::string& context, const char* key,
                       std::uint64_t fallback) {
    const json* v = find_key(obj, key);
    if (!v) return fallback;
    if (!v->is_number_unsigned() && !v->is_number_integer())
        throw ConfigError(context + "." + key + ": expected an unsigned integer");
    return v->get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& context, const char* key,
              bool fallback) {
    const json* v = find_key(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(context + "." + key + ": expected a boolean");
    return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& context, const char* key,
                       const std::string& fallback) {
    const json* v = find_key(obj, key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(context + "." + key + ": expected a string");
    return v->get<std::string>();
}

AugmentationPolicy parse_augment(const json& obj) {
    check_keys(obj, "train.augment",
               {"kind", "noise_sigma", "dropout_prob", "crop_padding", "flip_prob"});
    AugmentationPolicy policy;
    const std::string kind = get_string(obj, "train.augment", "kind", "compose");
    if (kind == "gaussian_noise")
        policy.kind = AugmentationKind::GaussianNoise;
    else if (kind == "coordinate_dropout")
        policy.kind = AugmentationKind::CoordinateDropout;
    else if (kind == "compose")
        policy.kind = AugmentationKind::Compose;
    else if (kind == "image_crop_flip")
        policy.kind = AugmentationKind::ImageCropFlip;
    else
        throw ConfigError("train.augment.kind: unknown kind '" + kind + "'");
    policy.noise_sigma = get_number(obj, "train.augment", "noise_sigma", policy.noise_sigma);
    policy.dropout_prob = get_number(obj, "train.augment", "dropout_prob", policy.dropout_prob);
    policy.crop_padding =
        static_cast<int>(get_integer(obj, "train.augment", "crop_padding", policy.crop_padding));
    policy.flip_prob = get_number(obj, "train.augment", "flip_prob", policy.flip_prob);
    policy.validate();
    return policy;
}

OptimizerConfig parse_optimizer(const json& obj) {
    check_keys(obj, "train.optimizer",
               {"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon"});
    OptimizerConfig oc;
    const std::string kind = get_string(obj, "train.optimizer", "kind", "sgd_momentum");
    if (kind == "sgd_momentum")
        oc.kind = OptimizerKind::SgdMomentum;
    else if (kind == "adam")
        oc.kind = OptimizerKind::Adam;
    else
        throw ConfigError("train.optimizer.kind: unknown kind '" + kind + "'");
    oc.learning_rate = get_number(obj, "train.optimizer", "learning_rate", oc.learning_rate);
    oc.momentum = get_number(obj, "train.optimizer", "momentum", oc.momentum);
    oc.beta1 = get_number(obj, "train.optimizer", "beta1", oc.beta1);
    oc.beta2 = get_number(obj, "train.optimizer", "beta2", oc.beta2);
    oc.epsilon = get_number(obj, "train.optimizer", "epsilon", oc.epsilon);
    if (!(oc.learning_rate >= 0.0))
        throw ConfigError("train.optimizer.learning_rate must be >= 0");
    return oc;
}

DatasetSpec parse_dataset(const json& obj) {
    DatasetSpec spec;
    const std::string kind = get_string(obj, "dataset", "kind", "");
    if (kind == "blobs") {
        check_keys(obj, "dataset", {"kind", "classes", "per_class", "dim", "spread", "seed"});
        spec.kind = DatasetSpec::Kind::Blobs;
        spec.blobs.classes =
            static_cast<int>(get_integer(obj, "dataset", "classes", spec.blobs.classes));
        spec.blobs.per_class =
            static_cast<int>(get_integer(obj, "dataset", "per_class", spec.blobs.per_class));
        spec.blobs.dim = static_cast<std::size_t>(
            get_integer(obj, "dataset", "dim", static_cast<long>(spec.blobs.dim)));
        spec.blobs.spread = get_number(obj, "dataset", "spread", spec.blobs.spread);
        spec.blobs.seed = get_seed(obj, "dataset", "seed", spec.blobs.seed);
    } else if (kind == "csv") {
        check_keys(obj, "dataset", {"kind", "path", "label_column"});
        spec.kind = DatasetSpec::Kind::Csv;
        spec.csv_path = get_string(obj, "dataset", "path", "");
        spec.label_column = get_string(obj, "dataset", "label_column", "label");
        if (spec.csv_path.empty()) throw ConfigError("dataset.path is required for csv");
    } else if (kind == "cifar10") {
        check_keys(obj, "dataset", {"kind", "dir"});
        spec.kind = DatasetSpec::Kind::Cifar10;
        spec.cifar_dir = get_string(obj, "dataset", "dir", "");
        if (spec.cifar_dir.empty()) throw ConfigError("dataset.dir is required for cifar10");
    } else {
        throw ConfigError("dataset.kind must be one of blobs, csv, cifar10");
    }
    return spec;
}

LossConfig parse_loss(const json& obj) {
    check_keys(obj, "loss", {"temperature", "lambda", "hnm", "reduction"});
    LossConfig lc;
    lc.temperature = get_number(obj, "loss", "temperature", lc.temperature);
    lc.lambda = get_number(obj, "loss", "lambda", lc.lambda);
    lc.hnm_enabled = get_bool(obj, "loss", "hnm", lc.hnm_enabled);
    const std::string reduction = get_string(obj, "loss", "reduction", "mean_over_anchors");
    if (reduction == "sum")
        lc.reduction = LaclnReduction::Sum;
    else if (reduction == "mean_over_anchors")
        lc.reduction = LaclnReduction::MeanOverAnchors;
    else
        throw ConfigError("loss.reduction must be 'sum' or 'mean_over_anchors'");
    lc.validate();
    return lc;
}

std::string effective_arm(const std::string& arm) {
    if (arm != "ce" && arm != "ce_cl" && arm != "ce_cl_hnm")
        throw ConfigError("sweep.arms: unknown arm '" + arm + "'");
    return arm;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(root, "config",
               {"dataset", "model", "train", "loss", "fewshot", "sweep", "output_dir"});

    ExperimentConfig config;
    const json* dataset = find_key(root, "dataset");
    if (!dataset || !dataset->is_object())
        throw ConfigError("config.dataset object is required");
    config.dataset = parse_dataset(*dataset);

    if (const json* model = find_key(root, "model")) {
        check_keys(*model, "model", {"hidden", "embed_dim"});
        if (const json* hidden = find_key(*model, "hidden")) {
            if (!hidden->is_array()) throw ConfigError("model.hidden: expected an array");
            config.model.hidden.clear();
            for (const json& w : *hidden) {
                if (!w.is_number_integer() || w.get<long>() < 1)
                    throw ConfigError("model.hidden: widths must be positive integers");
                config.model.hidden.push_back(w.get<std::size_t>());
            }
        }
        config.model.embed_dim = static_cast<std::size_t>(get_integer(
            *model, "model", "embed_dim", static_cast<long>(config.model.embed_dim)));
        if (config.model.embed_dim < 2) throw ConfigError("model.embed_dim must be >= 2");
    }

    if (const json* train = find_key(root, "train")) {
        check_keys(*train, "train",
                   {"batch_size", "epochs", "seed", "optimizer", "augment"});
        config.train.batch_size = static_cast<int>(
            get_integer(*train, "train", "batch_size", config.train.batch_size));
        config.train.epochs =
            static_cast<int>(get_integer(*train, "train", "epochs", config.train.epochs));
        config.train.seed = get_seed(*train, "train", "seed", config.train.seed);
        if (config.train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
        if (config.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (const json* optimizer = find_key(*train, "optimizer"))
            config.train.optimizer = parse_optimizer(*optimizer);
        if (const json* augment = find_key(*train, "augment"))
            config.train.augment = parse_augment(*augment);
    }

    if (const json* loss = find_key(root, "loss")) config.loss = parse_loss(*loss);

    if (const json* fewshot = find_key(root, "fewshot")) {
        check_keys(*fewshot, "fewshot", {"way", "shot", "query", "episodes", "seed"});
        config.fewshot.way =
            static_cast<int>(get_integer(*fewshot, "fewshot", "way", config.fewshot.way));
        config.fewshot.shot =
            static_cast<int>(get_integer(*fewshot, "fewshot", "shot", config.fewshot.shot));
        config.fewshot.query = static_cast<int>(
            get_integer(*fewshot, "fewshot", "query", config.fewshot.query));
        config.fewshot.episodes = static_cast<int>(
            get_integer(*fewshot, "fewshot", "episodes", config.fewshot.episodes));
        config.fewshot.seed = get_seed(*fewshot, "fewshot", "seed", config.fewshot.seed);
        if (config.fewshot.way < 2 || config.fewshot.shot < 1 ||
            config.fewshot.query < 1 || config.fewshot.episodes < 1)
            throw ConfigError("fewshot needs way >= 2, shot/query/episodes >= 1");
    }

    if (const json* sweep = find_key(root, "sweep")) {
        check_keys(*sweep, "sweep", {"arms", "lambdas", "batch_sizes", "seeds"});
        if (const json* arms = find_key(*sweep, "arms")) {
            if (!arms->is_array() || arms->empty())
                throw ConfigError("sweep.arms must be a non-empty array");
            config.sweep.arms.clear();
            for (const json& arm : *arms) {
                if (!arm.is_string()) throw ConfigError("sweep.arms entries must be strings");
                config.sweep.arms.push_back(effective_arm(arm.get<std::string>()));
            }
        }
        if (const json* lambdas = find_key(*sweep, "lambdas")) {
            if (!lambdas->is_array()) throw ConfigError("sweep.lambdas: expected an array");
            config.sweep.lambdas.clear();
            for (const json& v : *lambdas) {
                if (!v.is_number()) throw ConfigError("sweep.lambdas entries must be numbers");
                const double lambda = v.get<double>();
                if (!(lambda >= 0.0 && lambda <= 1.0))
                    throw ConfigError("sweep.lambdas values must lie in [0, 1]");
                config.sweep.lambdas.push_back(lambda);
            }
        }
        if (const json* batch_sizes = find_key(*sweep, "batch_sizes")) {
            if (!batch_sizes->is_array())
                throw ConfigError("sweep.batch_sizes: expected an array");
            config.sweep.batch_sizes.clear();
            for (const json& v : *batch_sizes) {
                if (!v.is_number_integer() || v.get<long>() < 2)
                    throw ConfigError("sweep.batch_sizes entries must be integers >= 2");
                config.sweep.batch_sizes.push_back(v.get<int>());
            }
        }
        if (const json* seeds = find_key(*sweep, "seeds")) {
            if (!seeds->is_array() || seeds->empty())
                throw ConfigError("sweep.seeds must be a non-empty array");
            config.sweep.seeds.clear();
            for (const json& v : *seeds) {
                if (!v.is_number_integer() && !v.is_number_unsigned())
                    throw ConfigError("sweep.seeds entries must be integers");
                config.sweep.seeds.push_back(v.get<std::uint64_t>());
            }
        }
    }

    config.output_dir = get_string(root, "config", "output_dir", config.output_dir.string());
    return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str());
}

Dataset load_dataset(const DatasetSpec& spec) {
    switch (spec.kind) {
        case DatasetSpec::Kind::Blobs:
            return generate_blobs(spec.blobs.classes, spec.blobs.per_class,
                                  spec.blobs.dim, spec.blobs.spread, spec.blobs.seed);
        case DatasetSpec::Kind::Csv:
            if (!std::filesystem::exists(spec.csv_path))
                throw ConfigError("dataset path does not exist: " + spec.csv_path.string());
            return load_csv(spec.csv_path, spec.label_column);
        case DatasetSpec::Kind::Cifar10:
            if (!std::filesystem::exists(spec.cifar_dir))
                throw ConfigError("dataset dir does not exist: " + spec.cifar_dir.string());
            return load_cifar10_binary(spec.cifar_dir);
    }
    throw ConfigError("unknown dataset kind");
}

TrainRun train_model(const Dataset& dataset, const ModelSpec& model_spec,
                     const TrainSpec& train_spec, const LossConfig& loss_config) {
    if (train_spec.batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (train_spec.epochs < 1) throw ConfigError("epochs must be >= 1");
    loss_config.validate();
    if (dataset.size() == 0) throw ConfigError("dataset is empty");

    ModelDims dims{dataset.input_dim(), model_spec.hidden, model_spec.embed_dim,
                   static_cast<std::size_t>(dataset.class_count)};
    TrainRun run{EncoderModel::init(dims, derive_seed(train_spec.seed, 0)), {}};
    OptimizerState optimizer = OptimizerState::init(train_spec.optimizer, run.model);

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < train_spec.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(train_spec.seed, 1, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(train_spec.batch_size)) {
            const std::size_t count = std::min(
                static_cast<std::size_t>(train_spec.batch_size), order.size() - start);
            const TwoViewBatch batch = make_two_view_batch(
                dataset, {order.data() + start, count}, train_spec.augment,
                derive_seed(train_spec.seed, 2, static_cast<std::uint64_t>(step)));
            const LossBreakdown breakdown =
                train_step(run.model, optimizer, batch, loss_config);
            run.history.push_back({step, breakdown.ce, breakdown.lacln, breakdown.clce});
            ++step;
        }
    }
    return run;
}

Matrix embed_dataset(const EncoderModel& model, const Dataset& dataset) {
    return forward(model, dataset.features).normalized;
}

EpisodeReport evaluate_fewshot(const Matrix& embeddings, std::span<const int> labels,
                               const FewshotSpec& spec, int threads) {
    return run_evaluation(embeddings, labels, spec.way, spec.shot, spec.query,
                          spec.episodes, spec.seed, threads);
}

namespace {

SweepCell run_sweep_cell(const ExperimentConfig& config, const std::string& arm,
                         double lambda, int batch_size, std::uint64_t seed) {
    SweepCell cell;
    cell.arm = arm;
    cell.lambda = lambda;
    cell.batch_size = batch_size;
    cell.seed = seed;
    try {
        LossConfig loss = config.loss;
        loss.lambda = lambda;
        if (arm == "ce") {
            loss.lambda = 0.0;
        } else if (arm == "ce_cl") {
            loss.hnm_enabled = false;
        } else {
            loss.hnm_enabled = true;
        }

        // data / init / episode streams depend only on the sweep seed, so
        // arms and lambdas compare like-for-like within a seed
        DatasetSpec dataset_spec = config.dataset;
        if (dataset_spec.kind == DatasetSpec::Kind::Blobs)
            dataset_spec.blobs.seed = derive_seed(seed, 100);
        const Dataset dataset = load_dataset(dataset_spec);

        TrainSpec train_spec = config.train;
        train_spec.batch_size = batch_size;
        train_spec.seed = derive_seed(seed, 101);
        const TrainRun run = train_model(dataset, config.model, train_spec, loss);

        const Matrix embeddings = embed_dataset(run.model, dataset);
        FewshotSpec fewshot = config.fewshot;
        fewshot.seed = derive_seed(seed, 102);
        const EpisodeReport report = evaluate_fewshot(embeddings, dataset.labels, fewshot);

        cell.accuracy_mean = report.mean;
        cell.accuracy_median = report.median;
        cell.accuracy_ci95 = report.ci95;
        cell.isotropy = isotropy_score(embeddings).score;
        if (!run.history.empty()) {
            cell.final_ce = run.history.back().ce;
            cell.final_lacln = run.history.back().lacln;
            cell.final_clce = run.history.back().clce;
        }
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

}  // namespace

std::vector<SweepCell> run_sweep(const ExperimentConfig& config, int threads) {
    std::vector<double> lambdas = config.sweep.lambdas;
    if (lambdas.empty()) lambdas.push_back(config.loss.lambda);
    std::vector<int> batch_sizes = config.sweep.batch_sizes;
    if (batch_sizes.empty()) batch_sizes.push_back(config.train.batch_size);
    if (config.sweep.arms.empty()) throw ConfigError("sweep.arms must be non-empty");
    if (config.sweep.seeds.empty()) throw ConfigError("sweep.seeds must be non-empty");

    struct CellKey {
        std::string arm;
        double lambda;
        int batch_size;
        std::uint64_t seed;
    };
    std::vector<CellKey> keys;
    for (const std::string& arm : config.sweep.arms)
        for (double lambda : lambdas)
            for (int batch_size : batch_sizes)
                for (std::uint64_t seed : config.sweep.seeds)
                    keys.push_back({effective_arm(arm), lambda, batch_size, seed});

    std::vector<SweepCell> cells(keys.size());
    parallel_for(keys.size(), threads, [&](std::size_t i) {
        const CellKey& k = keys[i];
        cells[i] = run_sweep_cell(config, k.arm, k.lambda, k.batch_size, k.seed);
    });
    return cells;  // generation order is already the sorted cell-key order
}

std::string sweep_csv_header() {
    return "arm,lambda,batch_size,seed,status,accuracy_mean,accuracy_median,"
           "accuracy_ci95,isotropy,final_ce,final_lacln,final_clce,error";
}

std::string sweep_csv_row(const SweepCell& cell) {
    std::string row = cell.arm + "," + real17(cell.lambda) + "," +
                      std::to_string(cell.batch_size) + "," + std::to_string(cell.seed) + ",";
    if (cell.ok) {
        row += "ok," + real17(cell.accuracy_mean) + "," + real17(cell.accuracy_median) +
               "," + real17(cell.accuracy_ci95) + "," + real17(cell.isotropy) + "," +
               real17(cell.final_ce) + "," + real17(cell.final_lacln) + "," +
               real17(cell.final_clce) + ",";
    } else {
        std::string sanitized = cell.error;
        for (char& c : sanitized)
            if (c == ',' || c == '\n' || c == '\r') c = ';';
        row += "error,,,,,,,," + sanitized;
    }
    return row;
}

RandomLossBatch make_random_loss_batch(std::size_t pair_count, std::size_t dim,
                                       std::size_t classes, std::uint64_t seed) {
    if (pair_count < 1 || dim < 2 || classes < 2)
        throw ConfigError("random batch needs pair_count >= 1, dim >= 2, classes >= 2");
    Rng rng(seed);
    const std::size_t m = 2 * pair_count;
    RandomLossBatch batch;
    batch.emb.embeddings = Matrix(m, dim);
    batch.emb.labels.resize(m);
    batch.emb.sample_ids.resize(m);
    batch.logits.logits = Matrix(m, classes);
    batch.logits.labels.resize(m);
    for (std::size_t p = 0; p < pair_count; ++p) {
        const int label = static_cast<int>(rng.uniform_index(classes));
        for (std::size_t view = 0; view < 2; ++view) {
            const std::size_t row = 2 * p + view;
            auto e = batch.emb.embeddings.row(row);
            double norm = 0.0;
            do {
                for (std::size_t k = 0; k < dim; ++k) e[k] = rng.gaussian();
                norm = l2_norm(e);
            } while (norm <= 1e-12);
            for (std::size_t k = 0; k < dim; ++k) e[k] /= norm;
            batch.emb.labels[row] = label;
            batch.emb.sample_ids[row] = static_cast<int>(p);
            auto z = batch.logits.logits.row(row);
            for (std::size_t c = 0; c < classes; ++c) z[c] = rng.gaussian();
            batch.logits.labels[row] = label;
        }
    }
    return batch;
}

GradcheckResult run_gradcheck(std::uint64_t seed, double h, double corruption) {
    if (!(h > 0.0)) throw InvalidStepSize("gradcheck step h must be positive");
    const std::size_t pair_counts[] = {2, 4, 8};
    const std::size_t dims[] = {4, 16};
    const std::size_t class_counts[] = {2, 4};
    const double lambdas[] = {0.0, 0.5, 0.9, 1.0};
    const double temperatures[] = {0.1, 0.5, 1.0};

    GradcheckResult result;
    std::uint64_t index = 0;
    for (std::size_t pairs : pair_counts) {
        for (std::size_t dim : dims) {
            for (std::size_t classes : class_counts) {
                for (double lambda : lambdas) {
                    for (double temperature : temperatures) {
                        const RandomLossBatch batch = make_random_loss_batch(
                            pairs, dim, classes, derive_seed(seed, index));
                        LossConfig config;
                        config.lambda = lambda;
                        config.temperature = temperature;
                        const double err = finite_difference_check(
                            batch.emb, batch.logits, config, h, corruption);
                        if (err > result.max_rel_error) {
                            result.max_rel_error = err;
                            result.worst_config =
                                "pairs=" + std::to_string(pairs) +
                                " dim=" + std::to_string(dim) +
                                " classes=" + std::to_string(classes) +
                                " lambda=" + real17(lambda) +
                                " temperature=" + real17(temperature);
                        }
                        ++result.config_count;
                        ++index;
                    }
                }
            }
        }
    }
    result.pass = result.max_rel_error < 1e-4;
    return result;
}

}  // namespace clce
