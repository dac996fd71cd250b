// egas.hpp - entropy-guided adversarial image via sign-gradient (PGD) steps.
#pragma once

#include "saei/autodiff.hpp"
#include "saei/policy.hpp"
#include "saei/rollout.hpp"

#include <filesystem>
#include <span>

namespace saei {

struct AttackConfig {
    double alpha = -2.0 / 255.0;  // negative step size
    std::size_t iterations = 1;
    double pixel_min = 0.0;
    double pixel_max = 1.0;
    TokenSelection tokens = TokenSelection::moderate;
    double temperature = 1.0;  // temperature of the entropies being attacked

    // Throws std::invalid_argument on violation. alpha == 0 is accepted as a
    // disabled attack.
    void validate() const;
};

// Entropy of the fixed responses, teacher-forced on `image`, under the
// configured token selection. Returns the value and its image gradient.
struct EntropyAtImage {
    double entropy = 0.0;
    std::vector<double> grad;
};
EntropyAtImage attack_objective(const PolicyParams& old_params, const TaskSample& sample, const ad::Tensor& image,
                                std::span<const Rollout> clean_rollouts, const AttackConfig& config);

// Iterates  image <- clamp(image + alpha * sign(grad_image(-H)))  starting from
// the clean image, projecting onto the max-norm ball of radius
// iterations * |alpha| around it. sign(0) = 0.
ad::Tensor egas_attack(const PolicyParams& old_params, const TaskSample& sample,
                       std::span<const Rollout> clean_rollouts, const AttackConfig& config);

// Writes clean.ppm, adversarial.ppm and diff.ppm (|difference| stretched to
// full range) for inspection.
void dump_attack_images(const std::filesystem::path& dir, const ad::Tensor& clean, const ad::Tensor& adversarial);

}  // namespace saei
