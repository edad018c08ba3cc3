#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "clce/csv.hpp"
#include "clce/diagnostics.hpp"
#include "clce/errors.hpp"
#include "clce/experiment.hpp"
#include "clce/rng.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// 0 success, 2 config error, 3 divergence, 4 data insufficiency,
// 5 verification failure
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitData = 4;
constexpr int kExitVerification = 5;

struct CommonOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool config_required = true) {
    auto* config = cmd->add_option("--config", opts.config_path, "experiment config JSON");
    if (config_required) config->required();
    cmd->add_option("--out", opts.out_dir, "output directory override");
    cmd->add_option("--seed", opts.seed, "seed override")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    cmd->add_option("--threads", opts.threads,
                    "worker threads (0 = single-threaded reference mode)");
}

clce::ExperimentConfig load_config(const CommonOptions& opts) {
    clce::ExperimentConfig config = clce::load_experiment_config(opts.config_path);
    if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
    return config;
}

fs::path prepare_output_dir(const clce::ExperimentConfig& config) {
    fs::create_directories(config.output_dir);
    return config.output_dir;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw clce::ConfigError("cannot write " + path.string());
    out << text;
}

void write_history_csv(const fs::path& path, const std::vector<clce::StepRecord>& history) {
    std::string text = "step,ce,lacln,clce\n";
    for (const clce::StepRecord& r : history)
        text += std::to_string(r.step) + "," + clce::real17(r.ce) + "," +
                clce::real17(r.lacln) + "," + clce::real17(r.clce) + "\n";
    write_text_file(path, text);
}

int cmd_train(const CommonOptions& opts) {
    clce::ExperimentConfig config = load_config(opts);
    if (opts.seed_set) config.train.seed = opts.seed;
    const fs::path out = prepare_output_dir(config);

    const clce::Dataset dataset = clce::load_dataset(config.dataset);
    const clce::TrainRun run =
        clce::train_model(dataset, config.model, config.train, config.loss);

    clce::save_checkpoint(run.model, out / "checkpoint.clce");
    write_history_csv(out / "history.csv", run.history);
    std::printf("trained %zu steps; final ce=%.6f lacln=%.6f clce=%.6f\n",
                run.history.size(), run.history.back().ce, run.history.back().lacln,
                run.history.back().clce);
    std::printf("wrote %s and %s\n", (out / "checkpoint.clce").c_str(),
                (out / "history.csv").c_str());
    return 0;
}

int cmd_eval_fewshot(const CommonOptions& opts, const std::string& checkpoint_path,
                     bool per_episode_csv) {
    clce::ExperimentConfig config = load_config(opts);
    if (opts.seed_set) config.fewshot.seed = opts.seed;
    const fs::path out = prepare_output_dir(config);

    const clce::EncoderModel model = clce::load_checkpoint(checkpoint_path);
    const clce::Dataset dataset = clce::load_dataset(config.dataset);
    const clce::Matrix embeddings = clce::embed_dataset(model, dataset);
    const clce::EpisodeReport report =
        clce::evaluate_fewshot(embeddings, dataset.labels, config.fewshot, opts.threads);

    json j;
    j["way"] = config.fewshot.way;
    j["shot"] = config.fewshot.shot;
    j["query"] = config.fewshot.query;
    j["episodes"] = config.fewshot.episodes;
    j["seed"] = config.fewshot.seed;
    j["mean"] = report.mean;
    j["median"] = report.median;
    j["ci95"] = report.ci95;
    j["single_episode"] = report.single_episode;
    write_text_file(out / "fewshot_report.json", j.dump(2) + "\n");

    if (per_episode_csv) {
        std::string text = "episode,accuracy\n";
        for (std::size_t e = 0; e < report.accuracies.size(); ++e)
            text += std::to_string(e) + "," + clce::real17(report.accuracies[e]) + "\n";
        write_text_file(out / "per_episode.csv", text);
    }
    std::printf("%d-way %d-shot over %d episodes: mean=%.4f median=%.4f ci95=%.4f%s\n",
                config.fewshot.way, config.fewshot.shot, config.fewshot.episodes,
                report.mean, report.median, report.ci95,
                report.single_episode ? " (single episode, ci95 undefined)" : "");
    return 0;
}

int cmd_sweep(const CommonOptions& opts) {
    clce::ExperimentConfig config = load_config(opts);
    if (opts.seed_set) config.sweep.seeds = {opts.seed};
    const fs::path out = prepare_output_dir(config);

    const std::vector<clce::SweepCell> cells = clce::run_sweep(config, opts.threads);
    std::string text = clce::sweep_csv_header() + "\n";
    for (const clce::SweepCell& cell : cells) text += clce::sweep_csv_row(cell) + "\n";
    write_text_file(out / "sweep.csv", text);

    std::size_t failures = 0;
    for (const clce::SweepCell& cell : cells)
        if (!cell.ok) ++failures;
    std::printf("sweep finished: %zu cells, %zu failed; wrote %s\n", cells.size(),
                failures, (out / "sweep.csv").c_str());
    return 0;
}

int cmd_diagnose(const CommonOptions& opts, const std::string& checkpoint_path,
                 int target_class, long max_pairs) {
    clce::ExperimentConfig config = load_config(opts);
    const fs::path out = prepare_output_dir(config);
    const std::uint64_t seed = opts.seed_set ? opts.seed : config.fewshot.seed;

    const clce::EncoderModel model = clce::load_checkpoint(checkpoint_path);
    const clce::Dataset dataset = clce::load_dataset(config.dataset);
    const clce::Matrix embeddings = clce::embed_dataset(model, dataset);

    const clce::SimilarityHistogram hist = clce::cosine_distribution(
        embeddings, dataset.labels, target_class, max_pairs, seed);
    std::string hist_text = "bin_left,bin_right,pos_count,neg_count\n";
    for (std::size_t b = 0; b + 1 < hist.bin_edges.size(); ++b)
        hist_text += clce::real17(hist.bin_edges[b]) + "," +
                     clce::real17(hist.bin_edges[b + 1]) + "," +
                     std::to_string(hist.positive_counts[b]) + "," +
                     std::to_string(hist.negative_counts[b]) + "\n";
    write_text_file(out / "cosine_histogram.csv", hist_text);

    const clce::IsotropyResult isotropy = clce::isotropy_score(embeddings);
    json j;
    j["score"] = isotropy.score;
    j["max_over_min"] = isotropy.max_over_min;
    j["candidate_count"] = isotropy.candidate_count;
    j["partition_values"] = isotropy.partition_values;
    write_text_file(out / "isotropy.json", j.dump(2) + "\n");

    const clce::Matrix projection = clce::pca_project_2d(embeddings);
    std::string proj_text = "x,y,label\n";
    for (std::size_t i = 0; i < projection.rows; ++i)
        proj_text += clce::real17(projection(i, 0)) + "," +
                     clce::real17(projection(i, 1)) + "," +
                     std::to_string(dataset.labels[i]) + "\n";
    write_text_file(out / "projection.csv", proj_text);

    std::printf("isotropy score %.6f over %zu candidates; wrote histogram, "
                "isotropy and projection to %s\n",
                isotropy.score, isotropy.candidate_count, out.c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double h, double corruption) {
    const clce::GradcheckResult result = clce::run_gradcheck(seed, h, corruption);
    std::printf("gradcheck: %zu configurations, max relative error %.3e\n",
                result.config_count, result.max_rel_error);
    if (!result.pass) {
        std::printf("FAIL at %s (threshold 1e-4)\n", result.worst_config.c_str());
        return kExitVerification;
    }
    std::printf("PASS (threshold 1e-4)\n");
    return 0;
}

int classify_error(const std::exception& e) {
    if (dynamic_cast<const clce::DivergenceError*>(&e)) return kExitDivergence;
    if (dynamic_cast<const clce::InsufficientData*>(&e)) return kExitData;
    if (dynamic_cast<const clce::ConfigError*>(&e) ||
        dynamic_cast<const clce::ParseError*>(&e) ||
        dynamic_cast<const clce::FormatError*>(&e) ||
        dynamic_cast<const clce::InvalidStepSize*>(&e) ||
        dynamic_cast<const clce::CorruptCheckpoint*>(&e))
        return kExitConfig;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CLCE loss workbench: training, few-shot evaluation, sweeps "
                 "and embedding diagnostics"};
    app.set_help_flag("--help", "print help");  // frees -h / --h for gradcheck
    app.require_subcommand(1);

    CommonOptions train_opts;
    CLI::App* train = app.add_subcommand("train", "train an encoder and write "
                                                  "checkpoint + step history");
    add_common(train, train_opts);

    CommonOptions eval_opts;
    std::string eval_checkpoint;
    bool per_episode_csv = false;
    CLI::App* eval = app.add_subcommand("eval-fewshot",
                                        "episodic N-way K-shot evaluation of a "
                                        "frozen checkpoint");
    add_common(eval, eval_opts);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_flag("--per-episode-csv", per_episode_csv, "also write per-episode accuracies");

    CommonOptions sweep_opts;
    CLI::App* sweep = app.add_subcommand("sweep", "train/evaluate the full "
                                                  "(arm, lambda, batch, seed) grid");
    add_common(sweep, sweep_opts);

    CommonOptions diagnose_opts;
    std::string diagnose_checkpoint;
    int target_class = 0;
    long max_pairs = 20000;
    CLI::App* diagnose = app.add_subcommand("diagnose",
                                            "cosine histogram, isotropy score and "
                                            "2-D projection of embeddings");
    add_common(diagnose, diagnose_opts);
    diagnose->add_option("--checkpoint", diagnose_checkpoint, "checkpoint file")->required();
    diagnose->add_option("--target-class", target_class, "class for the histogram");
    diagnose->add_option("--max-pairs", max_pairs, "pair subsample budget");

    std::uint64_t gradcheck_seed = 1;
    double gradcheck_h = 1e-5;
    double gradcheck_corruption = 0.0;
    CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                             "verify analytic gradients against "
                                             "central differences");
    gradcheck->set_help_flag("--help", "print help");
    gradcheck->add_option("--seed", gradcheck_seed, "base seed for the batch grid");
    gradcheck->add_option("--h", gradcheck_h, "finite-difference step");
    gradcheck->add_option("--corrupt-gradient", gradcheck_corruption,
                          "test hook: offset added to one analytic entry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (train->parsed()) return cmd_train(train_opts);
        if (eval->parsed())
            return cmd_eval_fewshot(eval_opts, eval_checkpoint, per_episode_csv);
        if (sweep->parsed()) return cmd_sweep(sweep_opts);
        if (diagnose->parsed())
            return cmd_diagnose(diagnose_opts, diagnose_checkpoint, target_class, max_pairs);
        if (gradcheck->parsed())
            return cmd_gradcheck(gradcheck_seed, gradcheck_h, gradcheck_corruption);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return classify_error(e);
    }
    return kExitConfig;
}
