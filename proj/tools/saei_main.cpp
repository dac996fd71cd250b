// saei - command line front end for training, evaluation, plotting and the
// ablation studies.
#include "saei/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using saei::RunConfig;

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoull(item));
    }
    if (out.empty()) throw std::invalid_argument("empty seed list");
    return out;
}

void print_summary(const saei::SeedSummary& s) {
    std::printf("%-24s mean best acc %.4f +- %.4f  (", s.label.c_str(), s.mean, s.stddev);
    for (std::size_t i = 0; i < s.best_accuracy.size(); ++i) std::printf("%s%.4f", i ? ", " : "", s.best_accuracy[i]);
    std::printf(")\n");
}

// Runs each labelled variant over the seeds and writes summary.csv.
void run_study(const RunConfig& base, const std::vector<std::pair<std::string, RunConfig>>& variants,
               const std::vector<std::uint64_t>& seeds) {
    const saei::Splits splits = saei::load_splits(base);
    std::vector<saei::SeedSummary> rows;
    std::vector<std::filesystem::path> csvs;
    for (const auto& [label, cfg] : variants) {
        auto runs = saei::run_seeds(cfg, seeds, label, splits);
        rows.push_back(saei::summarize(label, runs));
        print_summary(rows.back());
        csvs.push_back(cfg.out / label / ("seed" + std::to_string(seeds.front())) / "metrics.csv");
    }
    std::filesystem::create_directories(base.out);
    saei::write_summary(base.out / "summary.csv", rows);
    saei::emit_charts(csvs, base.out / "charts", 0.9);
    std::printf("wrote %s\n", (base.out / "summary.csv").string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropy-guided adversarial rollout sampling on a synthetic VQA task"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train one run");
    std::string config_path;
    std::string mode;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    train->add_option("--config", config_path, "JSON run config")->required();
    train->add_option("--mode", mode, "grpo | saei | noise");
    train->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s; seed_set = true; }, "seed");
    train->add_option("--out", out_dir, "output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest's test split");
    std::string ckpt_path;
    std::string split_path;
    double eval_temp = 0.6;
    std::uint64_t eval_seed = 0;
    eval->add_option("--checkpoint", ckpt_path)->required();
    eval->add_option("--split", split_path, "dataset manifest")->required();
    eval->add_option("--temperature", eval_temp);
    eval->add_option("--seed", eval_seed);

    // plot
    auto* plot = app.add_subcommand("plot", "entropy and accuracy charts from metrics.csv files");
    std::vector<std::string> runs;
    std::string plot_out;
    double ema_c = 0.9;
    plot->add_option("--runs", runs, "metrics.csv files")->required();
    plot->add_option("--out", plot_out)->required();
    plot->add_option("--ema", ema_c, "EMA coefficient");

    // make-manifest
    auto* manifest = app.add_subcommand("make-manifest", "write frozen train/test splits");
    std::string manifest_out;
    std::uint64_t data_seed = RunConfig{}.data_seed;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    manifest->add_option("--out", manifest_out)->required();
    manifest->add_option("--seed", data_seed);
    manifest->add_option("--train", n_train);
    manifest->add_option("--test", n_test);

    // studies
    std::string seeds_arg = "1,2,3";
    auto* tsec = app.add_subcommand("ablate-tsec", "token tercile used by the attack objective");
    std::string tercile;
    tsec->add_option("--tercile", tercile, "low | mid | high | all")
        ->required()
        ->check(CLI::IsMember({"low", "mid", "high", "all"}));
    auto* iters = app.add_subcommand("ablate-attack-iters", "number of attack iterations");
    std::size_t attack_t = 1;
    iters->add_option("--T", attack_t)->required()->check(CLI::Range(1, 16));
    auto* sweep = app.add_subcommand("sweep-noise", "random Gaussian noise baseline at several strengths");
    std::string steps_arg = "200,300,400,500";
    sweep->add_option("--steps", steps_arg, "comma separated noise step counts");
    for (auto* sub : {tsec, iters, sweep}) {
        sub->add_option("--config", config_path, "JSON run config")->required();
        sub->add_option("--seeds", seeds_arg, "comma separated seeds");
        sub->add_option("--out", out_dir, "output directory");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        auto load = [&] {
            RunConfig c = saei::load_config(config_path);
            if (!out_dir.empty()) c.out = out_dir;
            return c;
        };
        if (*train) {
            RunConfig c = load();
            if (!mode.empty()) c.trainer.mode = saei::parse_mode(mode);
            if (c.trainer.mode == saei::Mode::grpo) {
                // Same rollout budget, all on the clean image.
                c.trainer.n1 += c.trainer.n2;
                c.trainer.n2 = 0;
            }
            if (seed_set) c.seed = seed;
            const saei::RunRecord rec = saei::run(c);
            std::printf("best eval accuracy %.4f at step %zu (checkpoint %s)\n", rec.best_accuracy, rec.best_step,
                        rec.best_checkpoint.string().c_str());
        } else if (*eval) {
            const saei::PolicyParams params = saei::load_checkpoint(ckpt_path);
            const saei::Manifest m = saei::load_manifest(split_path);
            const auto& records = m.test.empty() ? m.train : m.test;
            const auto samples = saei::materialize(records, params.config);
            std::printf("accuracy %.4f on %zu items\n", saei::evaluate(params, samples, eval_temp, eval_seed),
                        samples.size());
        } else if (*plot) {
            std::vector<std::filesystem::path> paths(runs.begin(), runs.end());
            for (const auto& p : saei::emit_charts(paths, plot_out, ema_c)) std::printf("wrote %s\n", p.string().c_str());
        } else if (*manifest) {
            saei::save_manifest(saei::make_manifest(data_seed, n_train, n_test, saei::ModelConfig{}), manifest_out);
            std::printf("wrote %s\n", manifest_out.c_str());
        } else {
            const RunConfig base = load();
            const auto seeds = parse_seed_list(seeds_arg);
            std::vector<std::pair<std::string, RunConfig>> variants;
            if (*tsec) {
                RunConfig c = base;
                c.trainer.mode = saei::Mode::saei;
                c.trainer.attack.tokens = saei::parse_token_selection(tercile);
                variants.emplace_back("tsec-" + tercile, c);
            } else if (*iters) {
                RunConfig c = base;
                c.trainer.mode = saei::Mode::saei;
                c.trainer.attack.iterations = attack_t;
                variants.emplace_back("attack-T" + std::to_string(attack_t), c);
            } else {
                for (std::uint64_t steps : parse_seed_list(steps_arg)) {
                    RunConfig c = base;
                    c.trainer.mode = saei::Mode::noise;
                    c.trainer.noise_steps = steps;
                    variants.emplace_back("noise-" + std::to_string(steps), c);
                }
            }
            run_study(base, variants, seeds);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
