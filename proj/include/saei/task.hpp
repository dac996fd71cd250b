// task.hpp - synthetic "count the cells of colour c" visual question answering.
//
// Images are a 4x4 grid of 4x4-pixel cells on a black background. A sample
// paints k cells (k uniform in 0..9) with the queried colour and a random
// number of the remaining cells with distractor colours. The ground truth is
// the single digit k.
#pragma once

#include "saei/autodiff.hpp"
#include "saei/model_config.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace saei {

inline constexpr std::size_t kGridSide = 4;
inline constexpr std::size_t kCellPixels = 4;
inline constexpr std::size_t kPaletteSize = 4;

using Rgb = std::array<double, 3>;
// Red, green, blue, yellow.
inline constexpr std::array<Rgb, kPaletteSize> kPalette = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
}};

// Question ids cycle through the palette: question q asks for colour q % 4.
inline std::size_t question_color(std::size_t question_id) { return question_id % kPaletteSize; }

struct TaskSample {
    ad::Tensor image;  // (H, W, C), values in [0, 1]
    std::size_t question_id = 0;
    std::vector<Token> answer_digits;
    std::uint64_t rng_seed = 0;

    std::size_t answer() const { return answer_digits.at(0); }
};

struct Reward {
    int accuracy = 0;
    int format = 0;
    double total = 0.0;

    bool operator==(const Reward&) const = default;
};

inline constexpr double kAccuracyWeight = 0.9;
inline constexpr double kFormatWeight = 0.1;

// Deterministic in (seed, config). Requires a 16x16x3 image shape.
TaskSample generate_sample(std::uint64_t seed, const ModelConfig& config);

// Number of grid cells whose colour matches `color` exactly.
std::size_t count_cells(const ad::Tensor& image, std::size_t color);

// Rule-based reward: format needs exactly one OPEN d CLOSE span; accuracy
// needs that span's digit to match the ground truth.
Reward reward(std::span<const Token> tokens, const TaskSample& sample);

// ---------------------------------------------------------------------------
// Dataset manifest: text, one record per line.
//
//   # saei-manifest v1
//   train <seed> <question_id>
//   test <seed> <question_id>
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::uint64_t seed = 0;
    std::size_t question_id = 0;
};

struct Manifest {
    std::vector<ManifestRecord> train;
    std::vector<ManifestRecord> test;
};

Manifest make_manifest(std::uint64_t data_seed, std::size_t train_size, std::size_t test_size,
                       const ModelConfig& config);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Regenerates the samples of a split; throws if a record's question id does
// not match what its seed produces.
std::vector<TaskSample> materialize(std::span<const ManifestRecord> records, const ModelConfig& config);

}  // namespace saei
