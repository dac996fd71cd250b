// rollout.hpp - response groups, policy entropy and token-selective entropy.
#pragma once

#include "saei/autodiff.hpp"
#include "saei/policy.hpp"
#include "saei/task.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace saei {

struct RolloutGroup {
    const TaskSample* sample = nullptr;
    std::vector<Rollout> clean;
    std::vector<Rollout> adversarial;
    std::optional<ad::Tensor> adv_image;
    std::vector<double> advantages;  // clean first, then adversarial

    std::size_t size() const { return clean.size() + adversarial.size(); }
    const Rollout& at(std::size_t i) const { return i < clean.size() ? clean[i] : adversarial[i - clean.size()]; }
    std::vector<const Rollout*> all() const;
};

// Identifies the random stream of one rollout: (seed, step, sample, index).
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::uint64_t sample = 0;
};

Rng rollout_rng(const StreamKey& key, std::uint64_t rollout_index);

// n rollouts sampled on `image`; rollout i draws from stream first_index + i.
std::vector<Rollout> sample_group(const PolicyParams& old_params, const TaskSample& sample, const ad::Tensor& image,
                                  std::size_t n, double temperature, Origin origin, const StreamKey& key,
                                  std::uint64_t first_index = 0);

// Mean over responses of each response's mean token entropy.
double group_entropy(std::span<const Rollout* const> rollouts);
double group_entropy(std::span<const Rollout> rollouts);

// Which entropy tercile of a response feeds the adversarial objective.
enum class TokenSelection { all, low, moderate, high };
TokenSelection parse_token_selection(std::string_view s);
std::string_view to_string(TokenSelection s);

// Positions ranked by ascending entropy (ties: earlier position first) and
// cut into rank windows [0, L/3), [L/3, 2L/3), [2L/3, L) with floor division.
// Responses shorter than 3 tokens keep every position. Result is sorted by
// position.
std::vector<std::size_t> select_tokens(std::span<const double> entropies, TokenSelection which);
// Middle tercile.
std::vector<std::size_t> tsec_select(std::span<const double> entropies);

// group_entropy restricted to each response's selected positions.
double selective_group_entropy(std::span<const Rollout* const> rollouts,
                               TokenSelection which = TokenSelection::moderate);
double selective_group_entropy(std::span<const Rollout> rollouts, TokenSelection which = TokenSelection::moderate);

// Differentiable counterpart: per-response vectors of per-position entropy
// nodes, reduced with the same selection rule (ranked on current values).
ad::Var group_entropy_var(std::span<const std::vector<ad::Var>> entropies, TokenSelection which);

}  // namespace saei
