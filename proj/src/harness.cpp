#include "saei/harness.hpp"

#include "saei/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace saei {

using nlohmann::json;

void RunConfig::validate() const {
    trainer.validate();
    model.validate();
    if (total_steps < 1) throw std::invalid_argument("total_steps must be at least 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
    if (!(eval_temperature > 0.0)) throw std::invalid_argument("eval_temperature must be positive");
    if (manifest.empty() && (train_size < 1 || test_size < 1)) {
        throw std::invalid_argument("train_size and test_size must be positive");
    }
}

// ---------------------------------------------------------------------------
// Config documents
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument("config key '" + key + "' has the wrong type");
    }
}

std::size_t as_count(const json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw std::invalid_argument("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

}  // namespace

RunConfig config_from_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        TrainerConfig& t = c.trainer;
        if (key == "mode") t.mode = parse_mode(as<std::string>(v, key));
        else if (key == "n1") t.n1 = as_count(v, key);
        else if (key == "n2") t.n2 = as_count(v, key);
        else if (key == "clip_eps") t.clip_eps = as<double>(v, key);
        else if (key == "kl_beta") t.kl_beta = as<double>(v, key);
        else if (key == "learning_rate") t.learning_rate = as<double>(v, key);
        else if (key == "rollout_temperature") t.rollout_temperature = as<double>(v, key);
        else if (key == "batch_size") t.batch_size = as_count(v, key);
        else if (key == "noise_steps") t.noise_steps = as_count(v, key);
        else if (key == "noise_sigma") t.noise_sigma = as<double>(v, key);
        else if (key == "std_floor") t.std_floor = as<double>(v, key);
        else if (key == "loss_agg") t.loss_agg = parse_loss_aggregation(as<std::string>(v, key));
        else if (key == "alpha") t.attack.alpha = as<double>(v, key);
        else if (key == "attack_iters") t.attack.iterations = as_count(v, key);
        else if (key == "tokens") t.attack.tokens = parse_token_selection(as<std::string>(v, key));
        else if (key == "vocab_size") c.model.vocab_size = as_count(v, key);
        else if (key == "hidden_dim") c.model.hidden_dim = as_count(v, key);
        else if (key == "max_len") c.model.max_len = as_count(v, key);
        else if (key == "num_questions") c.model.num_questions = as_count(v, key);
        else if (key == "manifest") c.manifest = as<std::string>(v, key);
        else if (key == "data_seed") c.data_seed = as<std::uint64_t>(v, key);
        else if (key == "train_size") c.train_size = as_count(v, key);
        else if (key == "test_size") c.test_size = as_count(v, key);
        else if (key == "total_steps") c.total_steps = as_count(v, key);
        else if (key == "eval_every") c.eval_every = as_count(v, key);
        else if (key == "eval_temperature") c.eval_temperature = as<double>(v, key);
        else if (key == "seed") c.seed = as<std::uint64_t>(v, key);
        else if (key == "out") c.out = as<std::string>(v, key);
        else if (key == "record_wall_time") c.record_wall_time = as<bool>(v, key);
        else if (key == "dump_attack") c.dump_attack = as<bool>(v, key);
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
    const TrainerConfig& t = c.trainer;
    return json{
        {"mode", to_string(t.mode)},
        {"n1", t.n1},
        {"n2", t.n2},
        {"clip_eps", t.clip_eps},
        {"kl_beta", t.kl_beta},
        {"learning_rate", t.learning_rate},
        {"rollout_temperature", t.rollout_temperature},
        {"batch_size", t.batch_size},
        {"noise_steps", t.noise_steps},
        {"noise_sigma", t.noise_sigma},
        {"std_floor", t.std_floor},
        {"loss_agg", to_string(t.loss_agg)},
        {"alpha", t.attack.alpha},
        {"attack_iters", t.attack.iterations},
        {"tokens", to_string(t.attack.tokens)},
        {"vocab_size", c.model.vocab_size},
        {"hidden_dim", c.model.hidden_dim},
        {"max_len", c.model.max_len},
        {"num_questions", c.model.num_questions},
        {"manifest", c.manifest},
        {"data_seed", c.data_seed},
        {"train_size", c.train_size},
        {"test_size", c.test_size},
        {"total_steps", c.total_steps},
        {"eval_every", c.eval_every},
        {"eval_temperature", c.eval_temperature},
        {"seed", c.seed},
        {"out", c.out.string()},
        {"record_wall_time", c.record_wall_time},
        {"dump_attack", c.dump_attack},
    };
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

double evaluate(const PolicyParams& params, std::span<const TaskSample> split, double temperature,
                std::uint64_t seed) {
    if (split.empty()) throw std::invalid_argument("evaluation split is empty");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        Rng rng = make_rng({0xe7a1'0000ULL, seed, i});
        const Rollout r = sample_response(params, split[i], temperature, params.config.max_len, rng);
        correct += static_cast<std::size_t>(reward(r.tokens, split[i]).accuracy);
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

Splits load_splits(const RunConfig& config) {
    Manifest m = config.manifest.empty()
                     ? make_manifest(config.data_seed, config.train_size, config.test_size, config.model)
                     : load_manifest(config.manifest);
    if (m.train.empty() || m.test.empty()) throw std::runtime_error("manifest needs non-empty train and test splits");
    return {materialize(m.train, config.model), materialize(m.test, config.model)};
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

RunRecord run(const RunConfig& config) {
    config.validate();
    return run(config, load_splits(config));
}

RunRecord run(const RunConfig& config, const Splits& splits) {
    config.validate();
    std::filesystem::create_directories(config.out / "ckpt");

    RunRecord rec;
    rec.config = config_to_json(config);
    {
        auto lock = open_out(config.out / "config.lock");
        lock << rec.config.dump(2) << '\n';
    }
    auto metrics_out = open_out(config.out / "metrics.csv");
    auto eval_out = open_out(config.out / "eval.csv");
    metrics_out << metrics_csv_header() << '\n';
    eval_out << "step,accuracy\n";

    PolicyParams theta = PolicyParams::init(config.model, config.seed);
    const PolicyParams ref = theta;
    PolicyParams old = theta;
    rec.best_checkpoint = config.out / "ckpt" / "best";
    bool have_best = false;

    std::vector<TaskSample> batch(config.trainer.batch_size);
    for (std::size_t step = 1; step <= config.total_steps; ++step) {
        Rng pick = make_rng({0xba7c'0000ULL, config.seed, step});
        for (auto& s : batch) s = splits.train[uniform_index(pick, splits.train.size())];

        const bool dump = config.dump_attack && step == 1 && config.trainer.n2 > 0;
        StepDiagnostics diag;
        StepMetrics m = train_step(theta, old, ref, batch, config.trainer, config.seed, step, dump ? &diag : nullptr);
        if (dump && diag.groups[0].adv_image) {
            dump_attack_images(config.out / "attack", batch[0].image, *diag.groups[0].adv_image);
        }
        if (!config.record_wall_time) m.wall_ms = 0.0;
        metrics_out << metrics_csv_row(m) << '\n';
        rec.metrics.push_back(m);

        if (step % config.eval_every == 0 || step == config.total_steps) {
            const double acc = evaluate(theta, splits.test, config.eval_temperature, config.seed);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%zu,%.10g", step, acc);
            eval_out << buf << '\n';
            rec.evals.push_back({step, acc});
            if (!have_best || acc > rec.best_accuracy) {
                have_best = true;
                rec.best_accuracy = acc;
                rec.best_step = step;
                save_checkpoint(theta, rec.best_checkpoint);
            }
        }
    }
    if (!metrics_out || !eval_out) throw std::runtime_error("failed writing metrics under " + config.out.string());
    metrics_out.close();
    const std::filesystem::path csv = config.out / "metrics.csv";
    emit_charts(std::span(&csv, 1), config.out / "charts", kChartEma);
    return rec;
}

SeedSummary summarize(std::string label, std::span<const RunRecord> runs) {
    SeedSummary s;
    s.label = std::move(label);
    for (const RunRecord& r : runs) s.best_accuracy.push_back(r.best_accuracy);
    if (s.best_accuracy.empty()) return s;
    const double n = static_cast<double>(s.best_accuracy.size());
    for (double a : s.best_accuracy) s.mean += a;
    s.mean /= n;
    if (s.best_accuracy.size() > 1) {
        double v = 0.0;
        for (double a : s.best_accuracy) v += (a - s.mean) * (a - s.mean);
        s.stddev = std::sqrt(v / (n - 1.0));
    }
    return s;
}

std::vector<RunRecord> run_seeds(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                 const std::string& label, const Splits& splits) {
    std::vector<RunRecord> out;
    for (std::uint64_t s : seeds) {
        RunConfig c = base;
        c.seed = s;
        c.out = base.out / label / ("seed" + std::to_string(s));
        out.push_back(run(c, splits));
    }
    return out;
}

void write_summary(const std::filesystem::path& path, std::span<const SeedSummary> rows) {
    auto out = open_out(path);
    out << "label,seeds,mean_best_accuracy,std_best_accuracy,per_seed\n";
    for (const SeedSummary& s : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,", s.best_accuracy.size(), s.mean, s.stddev);
        out << s.label << buf;
        for (std::size_t i = 0; i < s.best_accuracy.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s%.4f", i ? ";" : "", s.best_accuracy[i]);
            out << buf;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Charts
// ---------------------------------------------------------------------------

std::vector<double> ema(std::span<const double> xs, double c) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out.push_back(i == 0 ? xs[0] : c * out.back() + (1.0 - c) * xs[i]);
    }
    return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, bool& ok) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    ok = !s.empty() && end == s.c_str() + s.size();
    return v;
}

}  // namespace

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header()) {
        throw std::runtime_error(path.string() + ": row 1: unexpected header");
    }
    MetricsTable t;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) {
            throw std::runtime_error(path.string() + ": row " + std::to_string(row) + ": " + why);
        };
        const auto f = split_csv(line);
        if (f.size() != 11) fail("expected 11 fields, got " + std::to_string(f.size()));
        StepMetrics m;
        double vals[11] = {};
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (i == 1) continue;
            bool ok = false;
            vals[i] = parse_double(f[i], ok);
            if (!ok) fail("field " + std::to_string(i + 1) + " is not a number");
        }
        try {
            m.mode = parse_mode(f[1]);
        } catch (const std::invalid_argument&) {
            fail("unknown mode '" + f[1] + "'");
        }
        if (vals[0] < 0 || vals[0] != std::floor(vals[0])) fail("step is not a non-negative integer");
        m.step = static_cast<std::size_t>(vals[0]);
        if (!t.rows.empty() && m.step <= t.rows.back().step) fail("steps must strictly increase");
        m.mean_reward = vals[2];
        m.train_accuracy = vals[3];
        m.entropy = vals[4];
        m.entropy_moderate = vals[5];
        m.entropy_clean = vals[6];
        m.clip_fraction = vals[7];
        m.kl_mean = vals[8];
        m.mean_abs_pixel_delta = vals[9];
        m.wall_ms = vals[10];
        t.rows.push_back(m);
    }
    return t;
}

namespace {

constexpr const char* kColors[] = {"#1f4e9c", "#b2361f", "#2a7d3b", "#7a3f9d", "#a8731a", "#237a80"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

}  // namespace

std::string render_chart(std::span<const Series> series, const std::string& title, const std::string& y_label,
                         double ema_coefficient) {
    constexpr double W = 720, H = 420, L = 70, R = 170, T = 40, B = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const Series& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x0 = x1 = s.x[i];
                y0 = y1 = s.y[i];
                first = false;
            }
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
    o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << fmt(W / 2 - R / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"15\">" << escape(title) << "</text>\n";
    // axes and ticks
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = y0 + (y1 - y0) * k / 4.0;
        const double xv = x0 + (x1 - x0) * k / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", yv);
        o << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\" "
          << "font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.0f", xv);
        o << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(H - B + 16) << "\" text-anchor=\"middle\" "
          << "font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
    }
    o << "<text x=\"" << fmt((L + W - R) / 2) << "\" y=\"" << fmt(H - 12)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";
    o << "<text x=\"16\" y=\"" << fmt((T + H - B) / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"12\" transform=\"rotate(-90 16 " << fmt((T + H - B) / 2) << ")\">" << escape(y_label)
      << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const Series& s = series[k];
        const char* color = kColors[k % std::size(kColors)];
        const auto smooth = ema(s.y, ema_coefficient);
        auto points = [&](std::span<const double> ys) {
            std::string p;
            for (std::size_t i = 0; i < ys.size(); ++i) {
                if (i) p += ' ';
                p += fmt(px(s.x[i])) + "," + fmt(py(ys[i]));
            }
            return p;
        };
        o << "<polyline class=\"raw\" fill=\"none\" stroke=\"" << color
          << "\" stroke-opacity=\"0.3\" stroke-width=\"1\" points=\"" << points(s.y) << "\"/>\n";
        o << "<polyline class=\"ema\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
          << points(smooth) << "\"/>\n";
        const double ly = T + 10 + 18.0 * static_cast<double>(k);
        o << "<line x1=\"" << fmt(W - R + 12) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(W - R + 32) << "\" y2=\""
          << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << fmt(W - R + 38) << "\" y=\"" << fmt(ly + 4)
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::vector<std::filesystem::path> emit_charts(std::span<const std::filesystem::path> csvs,
                                               const std::filesystem::path& out_dir, double ema_coefficient) {
    if (!(ema_coefficient >= 0.0 && ema_coefficient < 1.0)) {
        throw std::invalid_argument("ema coefficient must lie in [0, 1)");
    }
    std::vector<Series> entropy;
    std::vector<Series> accuracy;
    for (const auto& path : csvs) {
        const MetricsTable t = read_metrics_csv(path);
        std::string label = path.parent_path().filename().string();
        if (label.empty()) label = path.stem().string();
        if (!t.rows.empty()) label = std::string(to_string(t.rows.front().mode)) + " " + label;
        Series e{label, {}, {}};
        Series a{label, {}, {}};
        for (const StepMetrics& m : t.rows) {
            e.x.push_back(static_cast<double>(m.step));
            e.y.push_back(m.entropy_clean);
            a.x.push_back(static_cast<double>(m.step));
            a.y.push_back(m.train_accuracy);
        }
        entropy.push_back(std::move(e));
        accuracy.push_back(std::move(a));
    }
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path e_path = out_dir / "entropy.svg";
    const std::filesystem::path a_path = out_dir / "accuracy.svg";
    open_out(e_path) << render_chart(entropy, "Policy entropy (clean rollouts)", "mean token entropy (nats)", ema_coefficient);
    open_out(a_path) << render_chart(accuracy, "Training accuracy", "accuracy", ema_coefficient);
    return {e_path, a_path};
}

}  // namespace saei
