#include "saei/rollout.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace saei;
using saei::testing::oracle_select;
using saei::testing::random_params;
using saei::testing::scripted_params;
using saei::testing::tiny_config;

namespace {

Rollout with_entropies(std::vector<double> h) {
    Rollout r;
    r.tokens.assign(h.size(), 1);
    r.old_logprobs.assign(h.size(), -1.0);
    r.token_entropies = std::move(h);
    return r;
}

// Brute-force reference for the selective group entropy.
double oracle_group(const std::vector<Rollout>& rs, TokenSelection which) {
    double total = 0.0;
    for (const Rollout& r : rs) {
        const auto idx = oracle_select(r.token_entropies, which);
        double s = 0.0;
        for (std::size_t i : idx) s += r.token_entropies[i];
        total += s / static_cast<double>(idx.size());
    }
    return total / static_cast<double>(rs.size());
}

std::vector<double> random_entropies(Rng& rng, std::size_t n) {
    std::vector<double> e(n);
    for (double& v : e) v = uniform01(rng) * std::log(16.0);
    return e;
}

}  // namespace

TEST_SUITE("rollout") {

TEST_CASE("group_entropy examples") {
    const double ln2 = std::log(2.0);
    CHECK(group_entropy(std::vector<Rollout>{with_entropies({ln2, ln2})}) == doctest::Approx(0.6931).epsilon(1e-4));
    // Response-level averaging: token-level averaging would give 7/3.
    const std::vector<Rollout> two = {with_entropies({1.0}), with_entropies({3.0, 3.0, 3.0, 3.0, 3.0})};
    CHECK(group_entropy(two) == 2.0);
}

TEST_CASE("group_entropy of a uniform policy is ln 16 regardless of lengths") {
    const PolicyParams p = PolicyParams::init(tiny_config(8, 12), 2);
    const TaskSample s = generate_sample(5, p.config);
    const auto rs = sample_group(p, s, s.image, 6, 1.0, Origin::clean, {1, 1, 0});
    CHECK(group_entropy(rs) == doctest::Approx(std::log(16.0)).epsilon(1e-14));
}

TEST_CASE("entropy errors") {
    CHECK_THROWS_WITH_AS(group_entropy(std::vector<Rollout>{with_entropies({})}), "empty response",
                         std::invalid_argument);
    CHECK_THROWS_AS(group_entropy(std::vector<Rollout>{}), std::invalid_argument);
}

TEST_CASE("tsec_select examples") {
    CHECK(tsec_select(std::vector<double>{9, 1, 8, 2, 7, 3, 6, 4, 5}) == std::vector<std::size_t>{6, 7, 8});
    CHECK(tsec_select(std::vector<double>{0.1, 0.5, 0.9}) == std::vector<std::size_t>{1});
    CHECK(tsec_select(std::vector<double>{0.3, 0.2}) == std::vector<std::size_t>{0, 1});
    CHECK(tsec_select(std::vector<double>{0.3}) == std::vector<std::size_t>{0});
    // Ties: earlier position ranks first.
    CHECK(tsec_select(std::vector<double>{1, 1, 1, 1, 1, 1}) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("select_tokens terciles") {
    const std::vector<double> e = {9, 1, 8, 2, 7, 3, 6, 4, 5};
    CHECK(select_tokens(e, TokenSelection::low) == std::vector<std::size_t>{1, 3, 5});
    CHECK(select_tokens(e, TokenSelection::high) == std::vector<std::size_t>{0, 2, 4});
    CHECK(select_tokens(e, TokenSelection::all).size() == 9);
    CHECK(parse_token_selection("mid") == TokenSelection::moderate);
    CHECK(parse_token_selection("moderate") == TokenSelection::moderate);
    CHECK(to_string(parse_token_selection("low")) == "low");
    CHECK_THROWS_AS(parse_token_selection("middle"), std::invalid_argument);
}

TEST_CASE("selection sizes and terciles partition the response") {
    Rng rng = make_rng({1});
    for (std::size_t n = 1; n <= 60; ++n) {
        const auto e = random_entropies(rng, n);
        const auto lo = select_tokens(e, TokenSelection::low);
        const auto mid = tsec_select(e);
        const auto hi = select_tokens(e, TokenSelection::high);
        CHECK(std::is_sorted(mid.begin(), mid.end()));
        if (n < 3) {
            CHECK(mid.size() == n);
            continue;
        }
        CHECK(mid.size() == 2 * n / 3 - n / 3);
        std::vector<std::size_t> u;
        u.insert(u.end(), lo.begin(), lo.end());
        u.insert(u.end(), mid.begin(), mid.end());
        u.insert(u.end(), hi.begin(), hi.end());
        std::sort(u.begin(), u.end());
        std::vector<std::size_t> want(n);
        std::iota(want.begin(), want.end(), std::size_t{0});
        CHECK(u == want);
        // Every low entropy <= every moderate entropy <= every high entropy.
        for (std::size_t a : lo) for (std::size_t b : mid) CHECK(e[a] <= e[b]);
        for (std::size_t a : mid) for (std::size_t b : hi) CHECK(e[a] <= e[b]);
    }
}

TEST_CASE("selection matches the brute-force oracle") {
    Rng rng = make_rng({2});
    for (int k = 0; k < 1000; ++k) {
        auto e = random_entropies(rng, 1 + uniform_index(rng, 50));
        if (k % 3 == 0) for (double& v : e) v = std::round(v);  // ties
        for (TokenSelection w : {TokenSelection::all, TokenSelection::low, TokenSelection::moderate,
                                 TokenSelection::high}) {
            CHECK(select_tokens(e, w) == oracle_select(e, w));
        }
    }
}

TEST_CASE("selection is permutation consistent") {
    Rng rng = make_rng({3});
    for (int k = 0; k < 300; ++k) {
        const std::size_t n = 1 + uniform_index(rng, 40);
        const auto e = random_entropies(rng, n);  // continuous, so no ties
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
        std::vector<double> permuted(n);
        for (std::size_t i = 0; i < n; ++i) permuted[i] = e[perm[i]];
        std::vector<std::size_t> mapped;
        for (std::size_t i : tsec_select(permuted)) mapped.push_back(perm[i]);
        std::sort(mapped.begin(), mapped.end());
        CHECK(mapped == tsec_select(e));
    }
}

TEST_CASE("selective_group_entropy examples and properties") {
    CHECK(selective_group_entropy(std::vector<Rollout>{with_entropies({0, 1, 2})}) == 1.0);
    const std::vector<Rollout> flat = {with_entropies({0.7, 0.7, 0.7, 0.7}), with_entropies({1.3, 1.3})};
    CHECK(selective_group_entropy(flat) == doctest::Approx(group_entropy(flat)).epsilon(1e-15));

    Rng rng = make_rng({4});
    for (int k = 0; k < 100; ++k) {
        std::vector<Rollout> rs;
        const std::size_t n = 1 + uniform_index(rng, 6);
        for (std::size_t i = 0; i < n; ++i) rs.push_back(with_entropies(random_entropies(rng, 1 + uniform_index(rng, 20))));
        for (TokenSelection w : {TokenSelection::all, TokenSelection::low, TokenSelection::moderate,
                                 TokenSelection::high}) {
            CHECK(selective_group_entropy(rs, w) == oracle_group(rs, w));
        }
        const auto& e = rs[0].token_entropies;
        const double single = selective_group_entropy(std::vector<Rollout>{rs[0]});
        CHECK(single >= *std::min_element(e.begin(), e.end()));
        CHECK(single <= *std::max_element(e.begin(), e.end()));
        // Order of rollouts does not matter (up to summation order).
        std::vector<Rollout> rev(rs.rbegin(), rs.rend());
        CHECK(group_entropy(rev) == doctest::Approx(group_entropy(rs)).epsilon(1e-14));
    }
}

TEST_CASE("differentiable group entropy agrees with the plain one") {
    Rng rng = make_rng({5});
    for (int k = 0; k < 50; ++k) {
        ad::Tape t;
        std::vector<Rollout> rs;
        std::vector<std::vector<ad::Var>> vars;
        for (int i = 0; i < 3; ++i) {
            rs.push_back(with_entropies(random_entropies(rng, 1 + uniform_index(rng, 12))));
            std::vector<ad::Var> v;
            for (double h : rs.back().token_entropies) v.push_back(t.leaf(ad::Tensor::scalar(h)));
            vars.push_back(std::move(v));
        }
        for (TokenSelection w : {TokenSelection::all, TokenSelection::moderate}) {
            CHECK(group_entropy_var(vars, w).item() == doctest::Approx(selective_group_entropy(rs, w)).epsilon(1e-14));
        }
    }
}

TEST_CASE("sample_group: one-hot policy gives identical rollouts") {
    const PolicyParams p = scripted_params({kOpen, 3, kClose});
    const TaskSample s = generate_sample(1, ModelConfig{});
    const auto rs = sample_group(p, s, s.image, 4, 1.0, Origin::clean, {0, 0, 0});
    REQUIRE(rs.size() == 4);
    for (const Rollout& r : rs) {
        CHECK(r.tokens == rs[0].tokens);
        CHECK(r.origin == Origin::clean);
        CHECK(r.reward == reward(r.tokens, s));
    }
}

TEST_CASE("sample_group is reproducible and keyed per rollout index") {
    const PolicyParams p = random_params(tiny_config(8, 8), 3, 1.5);
    const TaskSample s = generate_sample(9, p.config);
    const StreamKey key{7, 3, 2};
    const auto a = sample_group(p, s, s.image, 6, 1.0, Origin::adversarial, key);
    const auto b = sample_group(p, s, s.image, 6, 1.0, Origin::adversarial, key);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].old_logprobs == b[i].old_logprobs);
        CHECK(a[i].origin == Origin::adversarial);
    }
    // A group started at index 2 reproduces members 2.. of the full group.
    const auto tail = sample_group(p, s, s.image, 4, 1.0, Origin::adversarial, key, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(tail[i].tokens == a[i + 2].tokens);
    // Other keys give other streams.
    const auto c = sample_group(p, s, s.image, 6, 1.0, Origin::clean, {7, 4, 2});
    bool differs = false;
    for (std::size_t i = 0; i < 6; ++i) differs = differs || c[i].tokens != a[i].tokens;
    CHECK(differs);
    CHECK_THROWS_AS(sample_group(p, s, s.image, 0, 1.0, Origin::clean, key), std::invalid_argument);
}

TEST_CASE("recorded log-probs match teacher-forced re-evaluation") {
    const PolicyParams p = random_params(tiny_config(8, 8), 4, 1.5);
    const TaskSample s = generate_sample(10, p.config);
    for (const Rollout& r : sample_group(p, s, s.image, 8, 1.0, Origin::clean, {1, 2, 3})) {
        const auto d = teacher_forced_dists(p, s.image, s.question_id, r.tokens, 1.0);
        for (std::size_t t = 0; t < r.size(); ++t) CHECK(std::abs(std::log(d[t][r.tokens[t]]) - r.old_logprobs[t]) <= 1e-12);
    }
}

}  // TEST_SUITE
