// Helpers shared by the unit tests and the acceptance suite.
#pragma once

#include "saei/policy.hpp"
#include "saei/rng.hpp"
#include "saei/rollout.hpp"
#include "saei/task.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace saei::testing {

// Small policy for property checks.
inline ModelConfig tiny_config(std::size_t hidden = 8, std::size_t max_len = 6) {
    ModelConfig c;
    c.hidden_dim = hidden;
    c.max_len = max_len;
    return c;
}

// Default initialisation plus a random output head, so next-token
// distributions are neither uniform nor independent of the image.
inline PolicyParams random_params(const ModelConfig& config, std::uint64_t seed, double head_scale = 1.0) {
    PolicyParams p = PolicyParams::init(config, seed);
    Rng rng = make_rng({0x4ead, seed});
    for (ad::Tensor* t : {&p.w_o, &p.b_o}) {
        for (double& v : t->data) v = (2.0 * uniform01(rng) - 1.0) * head_scale;
    }
    return p;
}

// A policy that deterministically emits `script` and then END. Token
// embeddings are basis vectors, the recurrence copies the previous token's
// embedding and the output head maps "previous token" to "next token" with a
// very large margin. Tokens of the script must be distinct.
inline PolicyParams scripted_params(const std::vector<Token>& script, std::size_t vocab = 16) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.hidden_dim = vocab + 1;  // one direction per token, including BOS
    c.max_len = script.size() + 1;
    PolicyParams p = PolicyParams::zeros(c);
    const std::size_t h = c.hidden_dim;
    for (std::size_t v = 0; v <= vocab; ++v) p.tok_emb.data[v * h + v] = 1.0;
    for (std::size_t i = 0; i < h; ++i) p.w_e.data[i * h + i] = 1.0;
    Token prev = static_cast<Token>(vocab);  // BOS
    std::vector<Token> seq = script;
    seq.push_back(kEnd);
    for (Token next : seq) {
        p.w_o.data[next * h + prev] = 1000.0;
        prev = next;
    }
    return p;
}

// Reference ranking oracle: stable sort by (entropy, position), then slice.
inline std::vector<std::size_t> oracle_select(const std::vector<double>& e, TokenSelection which) {
    const std::size_t n = e.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    // Insertion sort keeps the oracle independent of the library's sort.
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = i; j > 0 && e[order[j]] < e[order[j - 1]]; --j) std::swap(order[j], order[j - 1]);
    }
    std::size_t lo = 0, hi = n;
    if (n >= 3) {
        if (which == TokenSelection::low) hi = n / 3;
        if (which == TokenSelection::moderate) lo = n / 3, hi = 2 * n / 3;
        if (which == TokenSelection::high) lo = 2 * n / 3;
    }
    std::vector<std::size_t> out(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                 order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace saei::testing
