#include "saei/task.hpp"

#include "saei/rng.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace saei {

void ModelConfig::validate() const {
    if (vocab_size < kMinVocab) {
        throw std::invalid_argument("vocab_size must be at least 13 (10 digits, open, close, end)");
    }
    if (max_len < 4) throw std::invalid_argument("max_len must be at least 4");
    if (hidden_dim == 0) throw std::invalid_argument("hidden_dim must be positive");
    if (num_questions == 0) throw std::invalid_argument("num_questions must be positive");
    if (image_height == 0 || image_width == 0 || image_channels == 0) {
        throw std::invalid_argument("bad image shape");
    }
}

namespace {

void check_task_shape(const ModelConfig& config) {
    if (config.image_height != kGridSide * kCellPixels || config.image_width != kGridSide * kCellPixels ||
        config.image_channels != 3) {
        throw std::invalid_argument("synthetic task requires a 16x16x3 image");
    }
}

void paint_cell(ad::Tensor& image, std::size_t cell, const Rgb& color) {
    const std::size_t width = kGridSide * kCellPixels;
    const std::size_t r0 = (cell / kGridSide) * kCellPixels;
    const std::size_t c0 = (cell % kGridSide) * kCellPixels;
    for (std::size_t r = r0; r < r0 + kCellPixels; ++r) {
        for (std::size_t c = c0; c < c0 + kCellPixels; ++c) {
            for (std::size_t ch = 0; ch < 3; ++ch) image.data[(r * width + c) * 3 + ch] = color[ch];
        }
    }
}

}  // namespace

TaskSample generate_sample(std::uint64_t seed, const ModelConfig& config) {
    check_task_shape(config);
    Rng rng = make_rng({0x7a5c'0001ULL, seed});

    TaskSample s;
    s.rng_seed = seed;
    s.question_id = uniform_index(rng, config.num_questions);
    const std::size_t color = question_color(s.question_id);
    const std::size_t k = uniform_index(rng, kDigitCount);

    constexpr std::size_t cells = kGridSide * kGridSide;
    std::array<std::size_t, cells> order{};
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = cells - 1; i > 0; --i) {
        std::swap(order[i], order[uniform_index(rng, i + 1)]);
    }
    const std::size_t max_distractors = std::min<std::size_t>(6, cells - k);
    const std::size_t m = uniform_index(rng, max_distractors + 1);

    s.image = ad::Tensor::zeros(config.image_shape());
    for (std::size_t i = 0; i < k; ++i) paint_cell(s.image, order[i], kPalette[color]);
    for (std::size_t i = k; i < k + m; ++i) {
        std::size_t other = uniform_index(rng, kPaletteSize - 1);
        if (other >= color) ++other;
        paint_cell(s.image, order[i], kPalette[other]);
    }
    s.answer_digits = {static_cast<Token>(k)};
    return s;
}

std::size_t count_cells(const ad::Tensor& image, std::size_t color) {
    const std::size_t width = kGridSide * kCellPixels;
    std::size_t n = 0;
    for (std::size_t cell = 0; cell < kGridSide * kGridSide; ++cell) {
        const std::size_t r0 = (cell / kGridSide) * kCellPixels;
        const std::size_t c0 = (cell % kGridSide) * kCellPixels;
        bool match = true;
        for (std::size_t r = r0; r < r0 + kCellPixels && match; ++r) {
            for (std::size_t c = c0; c < c0 + kCellPixels && match; ++c) {
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    if (image.data[(r * width + c) * 3 + ch] != kPalette[color][ch]) match = false;
                }
            }
        }
        if (match) ++n;
    }
    return n;
}

Reward reward(std::span<const Token> tokens, const TaskSample& sample) {
    std::size_t spans = 0;
    Token digit = 0;
    for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
        if (tokens[i] == kOpen && is_digit(tokens[i + 1]) && tokens[i + 2] == kClose) {
            ++spans;
            digit = tokens[i + 1];
        }
    }
    Reward r;
    if (spans == 1) {
        r.format = 1;
        r.accuracy = (digit == sample.answer_digits.at(0)) ? 1 : 0;
    }
    r.total = kAccuracyWeight * r.accuracy + kFormatWeight * r.format;
    return r;
}

// ---------------------------------------------------------------------------

Manifest make_manifest(std::uint64_t data_seed, std::size_t train_size, std::size_t test_size,
                       const ModelConfig& config) {
    Manifest m;
    Rng rng = make_rng({0x7a5c'0002ULL, data_seed});
    auto draw = [&](std::size_t n, std::vector<ManifestRecord>& out) {
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t seed = rng();
            out.push_back({seed, generate_sample(seed, config).question_id});
        }
    };
    draw(train_size, m.train);
    draw(test_size, m.test);
    return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    out << "# saei-manifest v1\n";
    for (const auto& r : m.train) out << "train " << r.seed << ' ' << r.question_id << '\n';
    for (const auto& r : m.test) out << "test " << r.seed << ' ' << r.question_id << '\n';
    if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string split;
        ManifestRecord r;
        if (!(ss >> split >> r.seed >> r.question_id)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed record");
        }
        if (split == "train") {
            m.train.push_back(r);
        } else if (split == "test") {
            m.test.push_back(r);
        } else {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unknown split '" + split + "'");
        }
    }
    return m;
}

std::vector<TaskSample> materialize(std::span<const ManifestRecord> records, const ModelConfig& config) {
    std::vector<TaskSample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TaskSample s = generate_sample(r.seed, config);
        if (s.question_id != r.question_id) {
            throw std::runtime_error("manifest record " + std::to_string(r.seed) + " has a mismatched question id");
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace saei
