#include "saei/rollout.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace saei {

std::vector<const Rollout*> RolloutGroup::all() const {
    std::vector<const Rollout*> out;
    out.reserve(size());
    for (const Rollout& r : clean) out.push_back(&r);
    for (const Rollout& r : adversarial) out.push_back(&r);
    return out;
}

Rng rollout_rng(const StreamKey& key, std::uint64_t rollout_index) {
    return make_rng({0x5a3e'1000ULL, key.seed, key.step, key.sample, rollout_index});
}

std::vector<Rollout> sample_group(const PolicyParams& old_params, const TaskSample& sample, const ad::Tensor& image,
                                  std::size_t n, double temperature, Origin origin, const StreamKey& key,
                                  std::uint64_t first_index) {
    if (n == 0) throw std::invalid_argument("group size must be at least 1");
    const ad::Tensor context = ad::Tensor::vector(encode(old_params, image, sample.question_id));
    std::vector<Rollout> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = rollout_rng(key, first_index + i);
        Rollout r = sample_from_context(old_params, context, temperature, old_params.config.max_len, rng, origin);
        r.reward = reward(r.tokens, sample);
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

double mean_of(std::span<const double> xs, std::span<const std::size_t> idx) {
    double s = 0.0;
    for (std::size_t i : idx) s += xs[i];
    return s / static_cast<double>(idx.size());
}

std::vector<const Rollout*> pointers(std::span<const Rollout> rollouts) {
    std::vector<const Rollout*> out;
    for (const Rollout& r : rollouts) out.push_back(&r);
    return out;
}

}  // namespace

double selective_group_entropy(std::span<const Rollout* const> rollouts, TokenSelection which) {
    if (rollouts.empty()) throw std::invalid_argument("empty rollout group");
    double total = 0.0;
    for (const Rollout* r : rollouts) {
        if (r->token_entropies.empty()) throw std::invalid_argument("empty response");
        const auto idx = select_tokens(r->token_entropies, which);
        total += mean_of(r->token_entropies, idx);
    }
    return total / static_cast<double>(rollouts.size());
}

double selective_group_entropy(std::span<const Rollout> rollouts, TokenSelection which) {
    const auto p = pointers(rollouts);
    return selective_group_entropy(std::span<const Rollout* const>(p), which);
}

double group_entropy(std::span<const Rollout* const> rollouts) {
    return selective_group_entropy(rollouts, TokenSelection::all);
}

double group_entropy(std::span<const Rollout> rollouts) {
    return selective_group_entropy(rollouts, TokenSelection::all);
}

TokenSelection parse_token_selection(std::string_view s) {
    if (s == "all") return TokenSelection::all;
    if (s == "low") return TokenSelection::low;
    if (s == "mid" || s == "moderate") return TokenSelection::moderate;
    if (s == "high") return TokenSelection::high;
    throw std::invalid_argument("unknown token selection '" + std::string(s) + "'");
}

std::string_view to_string(TokenSelection s) {
    switch (s) {
        case TokenSelection::all: return "all";
        case TokenSelection::low: return "low";
        case TokenSelection::moderate: return "mid";
        case TokenSelection::high: return "high";
    }
    return "?";
}

std::vector<std::size_t> select_tokens(std::span<const double> entropies, TokenSelection which) {
    const std::size_t n = entropies.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (which == TokenSelection::all || n < 3) return order;

    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return entropies[a] < entropies[b]; });
    std::size_t lo = 0;
    std::size_t hi = n;
    switch (which) {
        case TokenSelection::low: hi = n / 3; break;
        case TokenSelection::moderate: lo = n / 3; hi = 2 * n / 3; break;
        case TokenSelection::high: lo = 2 * n / 3; break;
        case TokenSelection::all: break;
    }
    std::vector<std::size_t> picked(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                    order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<std::size_t> tsec_select(std::span<const double> entropies) {
    return select_tokens(entropies, TokenSelection::moderate);
}

ad::Var group_entropy_var(std::span<const std::vector<ad::Var>> entropies, TokenSelection which) {
    if (entropies.empty()) throw std::invalid_argument("empty rollout group");
    std::optional<ad::Var> total;
    for (const auto& response : entropies) {
        if (response.empty()) throw std::invalid_argument("empty response");
        std::vector<double> values;
        values.reserve(response.size());
        for (const ad::Var& v : response) values.push_back(v.item());
        const auto idx = select_tokens(values, which);
        ad::Var s = response[idx[0]];
        for (std::size_t k = 1; k < idx.size(); ++k) s = s + response[idx[k]];
        ad::Var m = ad::scale(s, 1.0 / static_cast<double>(idx.size()));
        total = total ? *total + m : m;
    }
    return ad::scale(*total, 1.0 / static_cast<double>(entropies.size()));
}

}  // namespace saei
