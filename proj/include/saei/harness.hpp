// harness.hpp - run configuration, training/evaluation loop, metric files and
// SVG charts of entropy and accuracy dynamics.
#pragma once

#include "saei/grpo.hpp"
#include "saei/model_config.hpp"
#include "saei/policy.hpp"
#include "saei/task.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace saei {

struct RunConfig {
    TrainerConfig trainer;
    ModelConfig model;
    std::string manifest;  // empty: splits are generated from data_seed
    std::uint64_t data_seed = 20240601;
    std::size_t train_size = 2000;
    std::size_t test_size = 500;
    std::size_t total_steps = 200;
    std::size_t eval_every = 5;
    double eval_temperature = 0.6;
    std::uint64_t seed = 0;
    std::filesystem::path out = "runs/default";
    bool record_wall_time = false;  // wall_ms is written as 0 unless set
    bool dump_attack = false;       // write attack images of sample 0 at step 1

    void validate() const;
};

// Flat JSON object; every key is optional and unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& c);

struct EvalPoint {
    std::size_t step = 0;
    double accuracy = 0.0;
};

struct RunRecord {
    nlohmann::json config;
    std::vector<StepMetrics> metrics;
    std::vector<EvalPoint> evals;
    double best_accuracy = 0.0;
    std::size_t best_step = 0;
    std::filesystem::path best_checkpoint;
};

// pass@1 accuracy: one response per item at `temperature`. Item i draws from
// the stream (seed, i).
double evaluate(const PolicyParams& params, std::span<const TaskSample> split, double temperature,
                std::uint64_t seed);

struct Splits {
    std::vector<TaskSample> train;
    std::vector<TaskSample> test;
};
Splits load_splits(const RunConfig& config);

inline constexpr double kChartEma = 0.9;

// Trains for total_steps, evaluating every eval_every steps and after the last
// step. Writes metrics.csv, eval.csv, config.lock, ckpt/best and charts/ under
// out.
RunRecord run(const RunConfig& config);
// Same, reusing already materialized splits.
RunRecord run(const RunConfig& config, const Splits& splits);

struct SeedSummary {
    std::string label;
    std::vector<double> best_accuracy;  // one per seed
    double mean = 0.0;
    double stddev = 0.0;
};
SeedSummary summarize(std::string label, std::span<const RunRecord> runs);

// Runs the config once per seed into out/<label>/seed<k>/.
std::vector<RunRecord> run_seeds(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                 const std::string& label, const Splits& splits);
void write_summary(const std::filesystem::path& path, std::span<const SeedSummary> rows);

// EMA_0 = x_0, EMA_t = c * EMA_{t-1} + (1 - c) * x_t.
std::vector<double> ema(std::span<const double> xs, double c);

struct MetricsTable {
    std::vector<StepMetrics> rows;
};
// Throws std::runtime_error naming the offending row on malformed input.
MetricsTable read_metrics_csv(const std::filesystem::path& path);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
// Line chart with one light raw polyline and one dark EMA polyline per series.
std::string render_chart(std::span<const Series> series, const std::string& title, const std::string& y_label,
                         double ema_coefficient);

// entropy.svg and accuracy.svg from one or more metrics.csv files.
std::vector<std::filesystem::path> emit_charts(std::span<const std::filesystem::path> csvs,
                                               const std::filesystem::path& out_dir, double ema_coefficient);

}  // namespace saei
