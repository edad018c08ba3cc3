#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clce/data.hpp"
#include "clce/fewshot.hpp"
#include "clce/loss.hpp"
#include "clce/model.hpp"

namespace clce {

struct BlobsSpec {
    int classes = 10;
    int per_class = 50;
    std::size_t dim = 32;
    double spread = 0.25;
    std::uint64_t seed = 1;
};

struct DatasetSpec {
    enum class Kind { Blobs, Csv, Cifar10 };
    Kind kind = Kind::Blobs;
    BlobsSpec blobs;
    std::filesystem::path csv_path;
    std::string label_column;
    std::filesystem::path cifar_dir;
};

struct ModelSpec {
    std::vector<std::size_t> hidden{64};
    std::size_t embed_dim = 32;
};

struct TrainSpec {
    int batch_size = 64;
    int epochs = 10;
    std::uint64_t seed = 7;
    OptimizerConfig optimizer;
    AugmentationPolicy augment;
};

struct FewshotSpec {
    int way = 5;
    int shot = 1;
    int query = 15;
    int episodes = 600;
    std::uint64_t seed = 1234;
};

struct SweepSpec {
    std::vector<std::string> arms{"ce", "ce_cl", "ce_cl_hnm"};
    std::vector<double> lambdas;      // empty -> current loss lambda
    std::vector<int> batch_sizes;     // empty -> current train batch size
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainSpec train;
    LossConfig loss;
    FewshotSpec fewshot;
    SweepSpec sweep;
    std::filesystem::path output_dir = "out";
};

// Strict parsing: unknown keys anywhere raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

Dataset load_dataset(const DatasetSpec& spec);

struct StepRecord {
    long step = 0;
    double ce = 0.0;
    double lacln = 0.0;
    double clce = 0.0;
};

struct TrainRun {
    EncoderModel model;
    std::vector<StepRecord> history;
};

// Epoch shuffles, per-step augmentation seeds and model init all derive
// from train.seed, so a run is a pure function of (dataset, specs).
TrainRun train_model(const Dataset& dataset, const ModelSpec& model_spec,
                     const TrainSpec& train_spec, const LossConfig& loss_config);

// Frozen-encoder unit-norm embeddings of every dataset row.
Matrix embed_dataset(const EncoderModel& model, const Dataset& dataset);

EpisodeReport evaluate_fewshot(const Matrix& embeddings, std::span<const int> labels,
                               const FewshotSpec& spec, int threads = 0);

struct SweepCell {
    std::string arm;
    double lambda = 0.0;
    int batch_size = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double accuracy_mean = 0.0;
    double accuracy_median = 0.0;
    double accuracy_ci95 = 0.0;
    double isotropy = 0.0;
    double final_ce = 0.0;
    double final_lacln = 0.0;
    double final_clce = 0.0;
};

// Full (arm x lambda x batch_size x seed) grid. Cells run independently
// (optionally in parallel); a failing cell records its error and the rest
// continue. Rows come back sorted by cell key.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config, int threads);

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepCell& cell);

struct RandomLossBatch {
    EmbeddingBatch emb;
    LogitsBatch logits;
};

// Paired-view batch of random unit embeddings and modest-scale logits;
// rows 2i and 2i+1 share a label so every anchor has a positive.
RandomLossBatch make_random_loss_batch(std::size_t pair_count, std::size_t dim,
                                       std::size_t classes, std::uint64_t seed);

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t config_count = 0;
    std::string worst_config;
    bool pass = false;
};

// Seeded grid over pair counts {2,4,8}, dims {4,16}, classes {2,4},
// lambda {0,0.5,0.9,1} and temperature {0.1,0.5,1}; passes when the max
// relative deviation from central differences stays below 1e-4.
GradcheckResult run_gradcheck(std::uint64_t seed, double h, double corruption = 0.0);

}  // namespace clce
