#include "saei/egas.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace saei {

void AttackConfig::validate() const {
    if (!(alpha <= 0.0)) throw std::invalid_argument("attack step size alpha must not be positive");
    if (iterations < 1) throw std::invalid_argument("attack iterations must be at least 1");
    if (!(pixel_min < pixel_max)) throw std::invalid_argument("pixel_min must be below pixel_max");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

namespace {

// Recorded entropies must be reproducible by teacher forcing on the clean
// image; anything else means the rollouts came from another sample or policy.
constexpr double kMismatchTolerance = 1e-9;

EntropyAtImage objective_impl(const PolicyParams& old_params, const TaskSample& sample, const ad::Tensor& image,
                              std::span<const Rollout> rollouts, const AttackConfig& config, bool verify) {
    if (rollouts.empty()) throw std::invalid_argument("attack needs at least one clean rollout");
    ad::Tape tape;
    BoundPolicy policy = bind(tape, old_params, false);
    ad::Var img = tape.leaf(image, true);
    ad::Var ctx = encode(policy, img, sample.question_id);

    std::vector<std::vector<ad::Var>> entropies;
    entropies.reserve(rollouts.size());
    for (const Rollout& r : rollouts) {
        if (r.tokens.empty()) throw std::invalid_argument("empty response");
        auto dists = teacher_force_context(policy, ctx, r.tokens, config.temperature);
        std::vector<ad::Var> hs;
        hs.reserve(dists.size());
        for (std::size_t t = 0; t < dists.size(); ++t) {
            if (verify && (t >= r.token_entropies.size() ||
                           std::abs(dists[t].entropy.item() - r.token_entropies[t]) > kMismatchTolerance)) {
                throw std::invalid_argument("rollout/sample mismatch");
            }
            hs.push_back(dists[t].entropy);
        }
        entropies.push_back(std::move(hs));
    }
    ad::Var h = group_entropy_var(entropies, config.tokens);
    tape.backward(h);
    auto g = tape.grad(img);
    return {h.item(), std::vector<double>(g.begin(), g.end())};
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Projection onto |v - c| <= radius. The final nudge absorbs rounding so the
// bound holds exactly as evaluated in double precision.
double project(double v, double c, double radius) {
    v = std::clamp(v, c - radius, c + radius);
    while (std::abs(v - c) > radius) v = std::nextafter(v, c);
    return v;
}

}  // namespace

EntropyAtImage attack_objective(const PolicyParams& old_params, const TaskSample& sample, const ad::Tensor& image,
                                std::span<const Rollout> clean_rollouts, const AttackConfig& config) {
    return objective_impl(old_params, sample, image, clean_rollouts, config, false);
}

ad::Tensor egas_attack(const PolicyParams& old_params, const TaskSample& sample,
                       std::span<const Rollout> clean_rollouts, const AttackConfig& config) {
    config.validate();
    ad::Tensor adv = sample.image;
    adv.grad.clear();
    const double radius = static_cast<double>(config.iterations) * std::abs(config.alpha);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        // grad(H) is returned; the step direction uses grad(-H) = -grad(H).
        EntropyAtImage obj = objective_impl(old_params, sample, adv, clean_rollouts, config, it == 0);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double stepped = adv.data[i] + config.alpha * sign(-obj.grad[i]);
            adv.data[i] = project(std::clamp(stepped, config.pixel_min, config.pixel_max), sample.image.data[i], radius);
        }
    }
    return adv;
}

void dump_attack_images(const std::filesystem::path& dir, const ad::Tensor& clean, const ad::Tensor& adversarial) {
    if (clean.shape != adversarial.shape || clean.rank() != 3 || clean.shape[2] != 3) {
        throw std::invalid_argument("bad image shape");
    }
    std::filesystem::create_directories(dir);
    const std::size_t h = clean.shape[0];
    const std::size_t w = clean.shape[1];
    auto write = [&](const char* name, auto pixel) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write image: " + path.string());
        out << "P6\n" << w << ' ' << h << "\n255\n";
        for (std::size_t i = 0; i < clean.size(); ++i) {
            const double v = std::clamp(pixel(i), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    };
    double max_diff = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(adversarial.data[i] - clean.data[i]));
    }
    write("clean.ppm", [&](std::size_t i) { return clean.data[i]; });
    write("adversarial.ppm", [&](std::size_t i) { return adversarial.data[i]; });
    write("diff.ppm", [&](std::size_t i) {
        return max_diff > 0.0 ? std::abs(adversarial.data[i] - clean.data[i]) / max_diff : 0.0;
    });
}

}  // namespace saei
