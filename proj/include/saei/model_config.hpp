#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace saei {

using Token = std::uint32_t;

// Token layout: digits 0-9 map to ids 0-9, followed by the answer delimiters
// and the end-of-sequence marker. Ids above kEnd are filler.
inline constexpr Token kDigitCount = 10;
inline constexpr Token kOpen = 10;
inline constexpr Token kClose = 11;
inline constexpr Token kEnd = 12;
inline constexpr std::size_t kMinVocab = 13;

inline constexpr bool is_digit(Token t) { return t < kDigitCount; }

struct ModelConfig {
    std::size_t vocab_size = 16;
    std::size_t image_height = 16;
    std::size_t image_width = 16;
    std::size_t image_channels = 3;
    std::size_t hidden_dim = 64;
    std::size_t max_len = 12;
    std::size_t num_questions = 8;

    std::size_t image_size() const { return image_height * image_width * image_channels; }
    std::vector<std::size_t> image_shape() const { return {image_height, image_width, image_channels}; }

    // Throws std::invalid_argument on violation.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace saei
