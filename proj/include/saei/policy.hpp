// policy.hpp - tiny autoregressive vision-language policy.
//
//   context = tanh(W_img * image + b_img + question_embedding[q])
//   h_0     = 0
//   h_t     = tanh(W_h * h_{t-1} + W_e * token_embedding[prev] + b_h + context)
//   p_t     = softmax((W_o * h_t + b_o) / temperature)
//
// The first decoder step consumes a dedicated begin-of-sequence embedding
// (row vocab_size of the token table). Every quantity is built on an ad::Tape,
// so the same code path serves sampling, teacher forcing and training.
#pragma once

#include "saei/autodiff.hpp"
#include "saei/model_config.hpp"
#include "saei/rng.hpp"
#include "saei/task.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace saei {

struct PolicyParams {
    ModelConfig config;
    ad::Tensor w_img;    // [hidden, image_size]
    ad::Tensor b_img;    // [hidden]
    ad::Tensor q_emb;    // [num_questions, hidden]
    ad::Tensor tok_emb;  // [vocab + 1, hidden]
    ad::Tensor w_h;      // [hidden, hidden]
    ad::Tensor w_e;      // [hidden, hidden]
    ad::Tensor b_h;      // [hidden]
    ad::Tensor w_o;      // [vocab, hidden]
    ad::Tensor b_o;      // [vocab]

    static constexpr std::size_t kTensorCount = 9;
    static constexpr double kInitScale = 0.08;

    // Uniform(-0.08, 0.08) weights, zero biases and a zero output head, so a
    // fresh policy is exactly uniform over the vocabulary.
    static PolicyParams init(const ModelConfig& config, std::uint64_t seed);
    static PolicyParams zeros(const ModelConfig& config);

    std::array<ad::Tensor*, kTensorCount> tensors();
    std::array<const ad::Tensor*, kTensorCount> tensors() const;
    std::size_t parameter_count() const;
    bool all_finite() const;
};

bool bitwise_equal(const PolicyParams& a, const PolicyParams& b);

// PolicyParams placed on a tape, either as trainable parameters or constants.
struct BoundPolicy {
    const ModelConfig* config = nullptr;
    ad::Var w_img, b_img, q_emb, tok_emb, w_h, w_e, b_h, w_o, b_o;
};

BoundPolicy bind(ad::Tape& tape, const PolicyParams& params, bool trainable);

// Context vector for q = (image, question). `image` may be a tape leaf that
// requires a gradient.
ad::Var encode(const BoundPolicy& policy, ad::Var image, std::size_t question_id);
std::vector<double> encode(const PolicyParams& params, const ad::Tensor& image, std::size_t question_id);

// One recurrence step.
struct DecoderStep {
    ad::Var hidden;
    ad::Var logits;
};
DecoderStep decoder_step(const BoundPolicy& policy, ad::Var context, ad::Var hidden, Token prev);

// Log-probabilities, probabilities and entropy of one position.
struct TokenDist {
    ad::Var logp;
    ad::Var probs;
    ad::Var entropy;
};
TokenDist token_dist(ad::Var logits, double temperature);

// Distribution of the next token given the context and the tokens emitted so
// far (the begin-of-sequence step is implicit).
std::vector<double> next_token_dist(const PolicyParams& params, std::span<const double> context,
                                    std::span<const Token> prev_tokens, double temperature);

enum class Origin { clean, adversarial };

struct Rollout {
    std::vector<Token> tokens;
    std::vector<double> old_logprobs;
    std::vector<double> token_entropies;
    Origin origin = Origin::clean;
    Reward reward;

    std::size_t size() const { return tokens.size(); }
};

// Ancestral sampling until kEnd or max_len tokens. Records log pi(y_t) and the
// full-distribution entropy at every position.
Rollout sample_response(const PolicyParams& params, const ad::Tensor& image, std::size_t question_id,
                        double temperature, std::size_t max_len, Rng& rng, Origin origin = Origin::clean);
Rollout sample_response(const PolicyParams& params, const TaskSample& sample, double temperature,
                        std::size_t max_len, Rng& rng);
// Same as above from a precomputed context; lets a group share one encoding.
Rollout sample_from_context(const PolicyParams& params, const ad::Tensor& context, double temperature,
                            std::size_t max_len, Rng& rng, Origin origin);

// Per-position distributions along a fixed token sequence, built on `tape` so
// they stay differentiable with respect to `image` and the bound parameters.
std::vector<TokenDist> teacher_force(const BoundPolicy& policy, ad::Var image, std::size_t question_id,
                                     std::span<const Token> tokens, double temperature);
// Same, reusing an already encoded context.
std::vector<TokenDist> teacher_force_context(const BoundPolicy& policy, ad::Var context,
                                             std::span<const Token> tokens, double temperature);
std::vector<std::vector<double>> teacher_forced_dists(const PolicyParams& params, const ad::Tensor& image,
                                                      std::size_t question_id, std::span<const Token> tokens,
                                                      double temperature);

// Binary checkpoint, little-endian:
//   8 bytes  magic "SAEICKPT"
//   u32      format version (1)
//   u64 x 7  vocab, height, width, channels, hidden, max_len, num_questions
//   u64      total number of doubles
//   f64 ...  tensors in declaration order, row-major
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace saei
