#include "saei/egas.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace saei;
using saei::testing::random_params;
using saei::testing::tiny_config;

namespace {

struct Instance {
    PolicyParams params;
    TaskSample sample;
    std::vector<Rollout> clean;
};

// Rollouts are resampled after any edit of the image so they stay consistent
// with it.
Instance instance(std::uint64_t seed, double fill = -1.0) {
    Instance in{random_params(tiny_config(8, 6), seed, 1.5), {}, {}};
    in.sample = generate_sample(seed * 31 + 5, in.params.config);
    if (fill >= 0.0) for (double& v : in.sample.image.data) v = fill;
    in.clean = sample_group(in.params, in.sample, in.sample.image, 4, 1.0, Origin::clean, {seed, 0, 0});
    return in;
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

TEST_SUITE("egas") {

TEST_CASE("zero image gradient leaves the image unchanged") {
    // A fresh policy has a zero head: its entropy does not depend on the image.
    const PolicyParams p = PolicyParams::init(tiny_config(8, 6), 1);
    const TaskSample s = generate_sample(2, p.config);
    const auto clean = sample_group(p, s, s.image, 4, 1.0, Origin::clean, {1, 0, 0});
    const auto obj = attack_objective(p, s, s.image, clean, AttackConfig{});
    for (double g : obj.grad) REQUIRE(g == 0.0);
    AttackConfig cfg;
    cfg.iterations = 3;
    CHECK(egas_attack(p, s, clean, cfg).data == s.image.data);
}

TEST_CASE("one step follows the update rule pixel by pixel") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Instance in = instance(seed);
        AttackConfig cfg;
        cfg.alpha = -8.0 / 255.0;
        const auto g = attack_objective(in.params, in.sample, in.sample.image, in.clean, cfg).grad;
        const ad::Tensor adv = egas_attack(in.params, in.sample, in.clean, cfg);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double want = std::clamp(in.sample.image.data[i] + cfg.alpha * sgn(-g[i]), 0.0, 1.0);
            CHECK(std::abs(adv.data[i] - want) <= 1e-15);
        }
    }
}

TEST_CASE("mid-grey and near-black pixel examples") {
    const Instance grey = instance(3, 0.5);
    AttackConfig cfg;  // alpha = -2/255, one step
    const auto g = attack_objective(grey.params, grey.sample, grey.sample.image, grey.clean, cfg).grad;
    const ad::Tensor adv = egas_attack(grey.params, grey.sample, grey.clean, cfg);
    std::size_t down = 0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        if (g[i] < 0.0) {
            CHECK(adv.data[i] == doctest::Approx(0.492157).epsilon(1e-6));
            ++down;
        } else if (g[i] > 0.0) {
            CHECK(adv.data[i] == doctest::Approx(0.507843).epsilon(1e-6));
        }
    }
    CHECK(down > 0);

    const Instance dark = instance(3, 0.001);
    const auto gd = attack_objective(dark.params, dark.sample, dark.sample.image, dark.clean, cfg).grad;
    const ad::Tensor adv_dark = egas_attack(dark.params, dark.sample, dark.clean, cfg);
    for (std::size_t i = 0; i < adv_dark.size(); ++i) {
        if (gd[i] < 0.0) CHECK(adv_dark.data[i] == 0.0);
    }
}

TEST_CASE("small steps increase the attacked entropy as linearisation predicts") {
    int increased = 0;
    const int n = 60;
    for (int k = 0; k < n; ++k) {
        const Instance in = instance(100 + static_cast<std::uint64_t>(k));
        AttackConfig cfg;
        cfg.alpha = -1.0 / 255.0;
        const auto before = attack_objective(in.params, in.sample, in.sample.image, in.clean, cfg);
        const ad::Tensor adv = egas_attack(in.params, in.sample, in.clean, cfg);
        const double after = attack_objective(in.params, in.sample, adv, in.clean, cfg).entropy;
        double predicted = 0.0;
        for (std::size_t i = 0; i < adv.size(); ++i) predicted += before.grad[i] * (adv.data[i] - in.sample.image.data[i]);
        if (after > before.entropy) ++increased;
        if (predicted > 0.0) CHECK(sgn(after - before.entropy) == sgn(predicted));
    }
    CHECK(increased >= 0.95 * n);
}

TEST_CASE("alpha zero returns the clean image, runs are deterministic") {
    const Instance in = instance(7);
    AttackConfig cfg;
    cfg.alpha = 0.0;
    CHECK(egas_attack(in.params, in.sample, in.clean, cfg).data == in.sample.image.data);
    cfg.alpha = -4.0 / 255.0;
    cfg.iterations = 4;
    CHECK(egas_attack(in.params, in.sample, in.clean, cfg).data == egas_attack(in.params, in.sample, in.clean, cfg).data);
}

TEST_CASE("attack errors") {
    const Instance a = instance(8);
    const Instance b = instance(9);
    CHECK_THROWS_WITH_AS(egas_attack(a.params, b.sample, a.clean, AttackConfig{}), "rollout/sample mismatch",
                         std::invalid_argument);
    CHECK_THROWS_AS(egas_attack(a.params, a.sample, std::vector<Rollout>{}, AttackConfig{}), std::invalid_argument);
    AttackConfig cfg;
    cfg.alpha = 0.01;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.pixel_max = cfg.pixel_min;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AttackConfig{};
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dump_attack_images writes three PPM files") {
    const Instance in = instance(10);
    const ad::Tensor adv = egas_attack(in.params, in.sample, in.clean, AttackConfig{});
    const auto dir = std::filesystem::temp_directory_path() / "saei-unit" / "attack";
    std::filesystem::remove_all(dir);
    dump_attack_images(dir, in.sample.image, adv);
    const std::string header = "P6\n16 16\n255\n";
    for (const char* name : {"clean.ppm", "adversarial.ppm", "diff.ppm"}) {
        REQUIRE(std::filesystem::exists(dir / name));
        CHECK(std::filesystem::file_size(dir / name) == header.size() + 768);
    }
    CHECK_THROWS_AS(dump_attack_images(dir, in.sample.image, ad::Tensor::zeros({4, 4, 3})), std::invalid_argument);
}

}  // TEST_SUITE
