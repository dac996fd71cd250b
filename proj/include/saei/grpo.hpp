// grpo.hpp - group-relative advantages, the clipped surrogate with a k3 KL
// penalty, and one on-policy SGD update per rollout batch.
//
// Modes:
//   grpo   n1 clean rollouts per sample.
//   saei   n1 clean rollouts, an entropy-guided adversarial image, then n2
//          rollouts on that image.
//   noise  n1 clean rollouts, then n2 rollouts on a Gaussian-noised image.
//
// In every mode the policy ratio's numerator is evaluated on the clean image,
// while its denominator is the log-probability recorded when the rollout was
// sampled (on the clean, adversarial or noised image).
#pragma once

#include "saei/egas.hpp"
#include "saei/policy.hpp"
#include "saei/rollout.hpp"
#include "saei/task.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace saei {

enum class Mode { grpo, saei, noise };
Mode parse_mode(std::string_view s);
std::string_view to_string(Mode m);

enum class LossAggregation {
    token_mean,           // one global mean over every token in the batch
    seq_mean_token_mean,  // mean over responses of per-response token means
};
LossAggregation parse_loss_aggregation(std::string_view s);
std::string_view to_string(LossAggregation a);

struct TrainerConfig {
    Mode mode = Mode::grpo;
    std::size_t n1 = 4;
    std::size_t n2 = 0;
    double clip_eps = 0.2;
    double kl_beta = 1e-2;
    double learning_rate = 1e-3;
    double rollout_temperature = 1.0;
    std::size_t batch_size = 8;
    std::size_t noise_steps = 300;
    double noise_sigma = 0.01;
    double std_floor = 1e-6;
    LossAggregation loss_agg = LossAggregation::token_mean;
    AttackConfig attack;

    void validate() const;
};

// (R - mean) / population std; all zeros when std < std_floor.
std::vector<double> normalize_advantages(std::span<const double> rewards, double std_floor = 1e-6);

// min(ratio * A, clamp(ratio, 1 - eps, 1 + eps) * A)
double clipped_term(double ratio, double advantage, double clip_eps);

// k3 estimator r - log r - 1 with r = pi_ref / pi_theta.
double kl_term(double logp_theta, double logp_ref);

// One per scored token when tracing is requested.
struct TokenTrace {
    std::size_t group = 0;
    std::size_t rollout = 0;
    std::size_t position = 0;
    Origin origin = Origin::clean;
    double numerator_logp = 0.0;    // log pi_theta(y_t | clean image, prefix)
    double denominator_logp = 0.0;  // recorded log pi_old(y_t | sampling image, prefix)
    double ratio = 1.0;
    bool clipped = false;
};

struct ObjectiveResult {
    double objective = 0.0;  // surrogate minus KL penalty (to be maximized)
    double loss = 0.0;       // -objective
    PolicyParams gradient;   // d loss / d theta
    double clip_fraction = 0.0;
    double kl_mean = 0.0;
    std::size_t token_count = 0;
};

// Requires every group's advantages to be filled in.
ObjectiveResult policy_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                                 const PolicyParams& ref, const TrainerConfig& config,
                                 std::vector<TokenTrace>* trace = nullptr);

// image + Normal(0, steps * sigma^2) per pixel, clamped to [0, 1].
ad::Tensor random_noise_image(const ad::Tensor& image, std::size_t steps, double sigma, Rng& rng);

struct StepMetrics {
    std::size_t step = 0;
    Mode mode = Mode::grpo;
    double mean_reward = 0.0;
    double train_accuracy = 0.0;
    double entropy = 0.0;           // group entropy over every rollout of a group
    double entropy_moderate = 0.0;  // same restricted to the moderate tercile
    double entropy_clean = 0.0;     // group entropy of the clean rollouts only
    double clip_fraction = 0.0;
    double kl_mean = 0.0;
    double mean_abs_pixel_delta = 0.0;
    double wall_ms = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

// Extra outputs of a step, for tests and debugging.
struct StepDiagnostics {
    std::vector<RolloutGroup> groups;
    std::vector<TokenTrace> trace;
};

// Runs one full step: snapshot old <- theta, sample (and attack/noise), score,
// normalize advantages over the joint group, update theta by one SGD step.
// Random streams are keyed by (seed, step, sample index, rollout index).
StepMetrics train_step(PolicyParams& theta, PolicyParams& old, const PolicyParams& ref,
                       std::span<const TaskSample> batch, const TrainerConfig& config, std::uint64_t seed,
                       std::uint64_t step, StepDiagnostics* diagnostics = nullptr);

}  // namespace saei
