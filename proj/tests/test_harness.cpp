#include "saei/harness.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace saei;
using saei::testing::scripted_params;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "saei-unit" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
    return n;
}

RunConfig small_run(const std::filesystem::path& out) {
    RunConfig c;
    c.model.hidden_dim = 8;
    c.model.max_len = 6;
    c.trainer.n1 = 4;
    c.trainer.batch_size = 2;
    c.trainer.learning_rate = 0.5;
    c.train_size = 20;
    c.test_size = 10;
    c.total_steps = 1;
    c.eval_every = 5;
    c.seed = 3;
    c.out = out;
    return c;
}

// Minimal structural check: one root element, balanced text elements, finite
// coordinates.
void check_svg(const std::string& svg, std::size_t series) {
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(count(svg, "<svg ") == 1);
    CHECK(svg.size() >= 7);
    CHECK(svg.substr(svg.size() - 7) == "</svg>\n");
    CHECK(count(svg, "<text") == count(svg, "</text>"));
    CHECK(count(svg, "<polyline") == 2 * series);
    CHECK(count(svg, "class=\"raw\"") == series);
    CHECK(count(svg, "class=\"ema\"") == series);
    CHECK(count(svg, "nan") == 0);
    CHECK(count(svg, "inf") == 0);
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config JSON: keys, types and round trip") {
    const RunConfig c = config_from_json(nlohmann::json{{"mode", "saei"}, {"n2", 4}, {"alpha", -0.01}});
    CHECK(c.trainer.mode == Mode::saei);
    CHECK(c.trainer.n2 == 4);
    CHECK(c.trainer.attack.alpha == -0.01);
    CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"learning_rat", 0.1}}),
                         doctest::Contains("unknown config key 'learning_rat'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json{{"learning_rate", "fast"}}),
                         doctest::Contains("wrong type"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"n1", -2}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"mode", "ppo"}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), std::invalid_argument);

    RunConfig d;
    d.trainer.mode = Mode::noise;
    d.trainer.n2 = 3;
    d.trainer.attack.tokens = TokenSelection::high;
    d.trainer.loss_agg = LossAggregation::seq_mean_token_mean;
    d.model.hidden_dim = 13;
    d.seed = 99;
    d.out = "somewhere/else";
    const nlohmann::json j = config_to_json(d);
    CHECK(config_to_json(config_from_json(j)) == j);
}

TEST_CASE("shipped configs load and validate") {
    for (const char* name : {"desk.json"}) {
        const auto path = std::filesystem::path(SAEI_SOURCE_DIR) / "configs" / name;
        CHECK_NOTHROW(load_config(path).validate());
    }
    const auto bad = temp_dir("cfg") / "bad.json";
    std::ofstream(bad) << "{\"n1\": 4,";
    CHECK_THROWS_AS(load_config(bad), std::runtime_error);
}

TEST_CASE("one-step run writes every artefact") {
    const auto out = temp_dir("run1");
    const RunRecord rec = run(small_run(out));
    CHECK(rec.metrics.size() == 1);
    REQUIRE(rec.evals.size() == 1);
    CHECK(rec.evals[0].step == 1);
    CHECK(rec.best_accuracy == rec.evals[0].accuracy);
    for (const char* f : {"metrics.csv", "eval.csv", "config.lock", "ckpt/best", "charts/entropy.svg",
                          "charts/accuracy.svg"}) {
        CHECK_MESSAGE(std::filesystem::exists(out / f), f);
    }
    CHECK(read_metrics_csv(out / "metrics.csv").rows.size() == 1);
    CHECK(nlohmann::json::parse(slurp(out / "config.lock")) == rec.config);
    check_svg(slurp(out / "charts" / "entropy.svg"), 1);
}

TEST_CASE("reruns are byte-identical and best accuracy is the eval maximum") {
    RunConfig c = small_run(temp_dir("rerun_a"));
    c.total_steps = 6;
    c.eval_every = 2;
    c.trainer.mode = Mode::saei;
    c.trainer.n2 = 2;
    const RunRecord a = run(c);
    const std::string csv_a = slurp(c.out / "metrics.csv");
    const std::string eval_a = slurp(c.out / "eval.csv");
    c.out = temp_dir("rerun_b");
    const RunRecord b = run(c);
    CHECK(slurp(c.out / "metrics.csv") == csv_a);
    CHECK(slurp(c.out / "eval.csv") == eval_a);
    REQUIRE(a.evals.size() == 3);
    double best = 0.0;
    for (const EvalPoint& e : a.evals) best = std::max(best, e.accuracy);
    CHECK(a.best_accuracy == best);
    CHECK(bitwise_equal(load_checkpoint(c.out / "ckpt" / "best"), load_checkpoint(c.out / "ckpt" / "best")));
}

TEST_CASE("evaluate: scripted policies and the uniform policy") {
    std::vector<TaskSample> threes;
    for (std::uint64_t s = 0; threes.size() < 30; ++s) {
        TaskSample t = generate_sample(s, ModelConfig{});
        if (t.answer() == 3) threes.push_back(std::move(t));
    }
    CHECK(evaluate(scripted_params({kOpen, 3, kClose}), threes, 0.6, 1) == 1.0);
    CHECK(evaluate(scripted_params({kOpen, 4, kClose}), threes, 0.6, 1) == 0.0);
    CHECK_THROWS_AS(evaluate(scripted_params({kOpen, 3, kClose}), std::vector<TaskSample>{}, 0.6, 1),
                    std::invalid_argument);

    ModelConfig mc;
    mc.max_len = 12;
    std::vector<TaskSample> items;
    for (std::uint64_t s = 0; s < 500; ++s) items.push_back(generate_sample(s, mc));
    const double acc = evaluate(PolicyParams::init(mc, 1), items, 1.0, 2);
    CHECK(acc < 0.02);
    CHECK(evaluate(PolicyParams::init(mc, 1), items, 1.0, 2) == acc);
}

TEST_CASE("ema examples") {
    CHECK(ema(std::vector<double>{2, 2, 2}, 0.9) == std::vector<double>{2, 2, 2});
    const auto e = ema(std::vector<double>{0, 1}, 0.9);
    CHECK(e[0] == 0.0);
    CHECK(e[1] == doctest::Approx(0.1));
    CHECK(ema(std::vector<double>{}, 0.9).empty());
    CHECK(ema(std::vector<double>{1, 5}, 0.0) == std::vector<double>{1, 5});
}

TEST_CASE("read_metrics_csv errors name the row") {
    const auto dir = temp_dir("csv");
    StepMetrics m;
    m.step = 1;
    const std::string good = metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n";
    std::ofstream(dir / "ok.csv") << good;
    CHECK(read_metrics_csv(dir / "ok.csv").rows.size() == 1);

    std::ofstream(dir / "short.csv") << good << "2,grpo,0.1\n";
    CHECK_THROWS_WITH_AS(read_metrics_csv(dir / "short.csv"), doctest::Contains("row 3"), std::runtime_error);
    m.step = 2;
    std::string bad_num = metrics_csv_row(m);
    bad_num.replace(bad_num.find(",0,"), 3, ",x,");
    std::ofstream(dir / "num.csv") << good << bad_num << "\n";
    CHECK_THROWS_WITH_AS(read_metrics_csv(dir / "num.csv"), doctest::Contains("row 3"), std::runtime_error);
    std::ofstream(dir / "order.csv") << good << metrics_csv_row(StepMetrics{}) << "\n";
    CHECK_THROWS_WITH_AS(read_metrics_csv(dir / "order.csv"), doctest::Contains("row 3"), std::runtime_error);
    std::ofstream(dir / "header.csv") << "step,mode\n";
    CHECK_THROWS_WITH_AS(read_metrics_csv(dir / "header.csv"), doctest::Contains("row 1"), std::runtime_error);
    CHECK_THROWS_AS(read_metrics_csv(dir / "missing.csv"), std::runtime_error);
}

TEST_CASE("render_chart structure") {
    std::vector<Series> s = {{"grpo", {1, 2, 3}, {0.5, 0.7, 0.6}}, {"saei <mid>", {1, 2, 3}, {0.4, 0.4, 0.4}}};
    const std::string svg = render_chart(s, "Entropy & accuracy", "nats", 0.9);
    check_svg(svg, 2);
    CHECK(count(svg, "saei &lt;mid&gt;") == 1);
    CHECK(count(svg, "Entropy &amp; accuracy") == 1);
    // Degenerate inputs still render.
    check_svg(render_chart(std::vector<Series>{{"flat", {5}, {1.0}}}, "t", "y", 0.5), 1);
    check_svg(render_chart(std::vector<Series>{}, "t", "y", 0.5), 0);
}

TEST_CASE("emit_charts overlays several runs") {
    const auto dir = temp_dir("charts");
    std::vector<std::filesystem::path> csvs;
    for (const char* name : {"a", "b", "c"}) {
        std::filesystem::create_directories(dir / name);
        std::ofstream out(dir / name / "metrics.csv");
        out << metrics_csv_header() << "\n";
        for (std::size_t k = 1; k <= 4; ++k) {
            StepMetrics m;
            m.step = k;
            m.entropy_clean = 1.0 / static_cast<double>(k);
            out << metrics_csv_row(m) << "\n";
        }
        csvs.push_back(dir / name / "metrics.csv");
    }
    const auto paths = emit_charts(csvs, dir / "out", 0.9);
    REQUIRE(paths.size() == 2);
    for (const auto& p : paths) check_svg(slurp(p), 3);
    CHECK_THROWS_AS(emit_charts(csvs, dir / "out", 1.0), std::invalid_argument);
}

TEST_CASE("summarize and write_summary") {
    std::vector<RunRecord> runs(3);
    runs[0].best_accuracy = 0.1;
    runs[1].best_accuracy = 0.2;
    runs[2].best_accuracy = 0.3;
    const SeedSummary s = summarize("saei", runs);
    CHECK(s.mean == doctest::Approx(0.2));
    CHECK(s.stddev == doctest::Approx(0.1));
    CHECK(s.best_accuracy.size() == 3);
    const auto path = temp_dir("summary") / "summary.csv";
    write_summary(path, std::vector<SeedSummary>{s});
    CHECK(slurp(path) ==
          "label,seeds,mean_best_accuracy,std_best_accuracy,per_seed\nsaei,3,0.200000,0.100000,0.1000;0.2000;0.3000\n");
}

}  // TEST_SUITE
