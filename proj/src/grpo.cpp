#include "saei/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

namespace saei {

Mode parse_mode(std::string_view s) {
    if (s == "grpo") return Mode::grpo;
    if (s == "saei") return Mode::saei;
    if (s == "noise") return Mode::noise;
    throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected grpo, saei or noise)");
}

std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::grpo: return "grpo";
        case Mode::saei: return "saei";
        case Mode::noise: return "noise";
    }
    return "?";
}

LossAggregation parse_loss_aggregation(std::string_view s) {
    if (s == "token_mean") return LossAggregation::token_mean;
    if (s == "seq_mean_token_mean") return LossAggregation::seq_mean_token_mean;
    throw std::invalid_argument("unknown loss aggregation '" + std::string(s) + "'");
}

std::string_view to_string(LossAggregation a) {
    return a == LossAggregation::token_mean ? "token_mean" : "seq_mean_token_mean";
}

void TrainerConfig::validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must lie in (0, 1)");
    if (!(kl_beta >= 0.0)) throw std::invalid_argument("kl_beta must be non-negative");
    if (n1 < 1) throw std::invalid_argument("n1 must be at least 1");
    if (mode == Mode::grpo && n2 != 0) throw std::invalid_argument("mode grpo requires n2 = 0");
    if (n1 + n2 < 2) throw std::invalid_argument("group too small");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (!(rollout_temperature > 0.0)) throw std::invalid_argument("rollout_temperature must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be non-negative");
    if (!(std_floor >= 0.0)) throw std::invalid_argument("std_floor must be non-negative");
    attack.validate();
}

std::vector<double> normalize_advantages(std::span<const double> rewards, double std_floor) {
    if (rewards.size() < 2) throw std::invalid_argument("group too small");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> adv(rewards.size(), 0.0);
    if (sd < std_floor) return adv;
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

namespace {

// True when the constant (clipped) branch of the min is the active one.
bool clip_active(double ratio, double advantage, double eps) {
    return advantage >= 0.0 ? ratio > 1.0 + eps : ratio < 1.0 - eps;
}

}  // namespace

double clipped_term(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double kl_term(double logp_theta, double logp_ref) {
    const double d = logp_ref - logp_theta;
    return std::exp(d) - d - 1.0;
}

ObjectiveResult policy_objective(std::span<const RolloutGroup> groups, const PolicyParams& theta,
                                 const PolicyParams& ref, const TrainerConfig& config,
                                 std::vector<TokenTrace>* trace) {
    const double eps = config.clip_eps;
    const double beta = config.kl_beta;
    const double temp = config.rollout_temperature;

    ad::Tape tape;
    BoundPolicy pol = bind(tape, theta, true);
    std::optional<BoundPolicy> ref_pol;
    if (beta > 0.0) ref_pol = bind(tape, ref, false);

    std::optional<ad::Var> total;
    std::size_t tokens = 0;
    std::size_t responses = 0;
    std::size_t clipped = 0;
    double kl_sum = 0.0;

    for (std::size_t g = 0; g < groups.size(); ++g) {
        const RolloutGroup& group = groups[g];
        if (group.sample == nullptr) throw std::invalid_argument("rollout group without a sample");
        if (group.advantages.size() != group.size()) throw std::invalid_argument("advantages not computed");
        ad::Var clean_image = tape.constant(group.sample->image);
        ad::Var ctx = encode(pol, clean_image, group.sample->question_id);
        std::optional<ad::Var> ref_ctx;
        if (ref_pol) ref_ctx = encode(*ref_pol, clean_image, group.sample->question_id);

        for (std::size_t i = 0; i < group.size(); ++i) {
            const Rollout& r = group.at(i);
            const double adv = group.advantages[i];
            if (r.old_logprobs.size() != r.tokens.size()) throw std::invalid_argument("rollout missing old_logprobs");
            if (r.tokens.empty()) throw std::invalid_argument("empty response");
            auto dists = teacher_force_context(pol, ctx, r.tokens, temp);
            std::vector<TokenDist> ref_dists;
            if (ref_ctx) ref_dists = teacher_force_context(*ref_pol, *ref_ctx, r.tokens, temp);

            std::optional<ad::Var> response_sum;
            for (std::size_t t = 0; t < r.tokens.size(); ++t) {
                ad::Var logp = ad::gather(dists[t].logp, r.tokens[t]);
                ad::Var ratio = ad::exp(ad::add_scalar(logp, -r.old_logprobs[t]));
                const double ratio_v = ratio.item();
                const bool is_clipped = clip_active(ratio_v, adv, eps);
                ad::Var term = is_clipped
                                   ? tape.constant(std::clamp(ratio_v, 1.0 - eps, 1.0 + eps) * adv)
                                   : ad::scale(ratio, adv);
                if (ref_ctx) {
                    const double ref_logp = ref_dists[t].logp.value().data[r.tokens[t]];
                    ad::Var d = ad::add_scalar(-logp, ref_logp);
                    ad::Var k3 = ad::add_scalar(ad::exp(d) - d, -1.0);
                    kl_sum += k3.item();
                    term = term - ad::scale(k3, beta);
                }
                response_sum = response_sum ? *response_sum + term : term;
                if (is_clipped) ++clipped;
                if (trace) {
                    trace->push_back({g, i, t, r.origin, logp.item(), r.old_logprobs[t], ratio_v, is_clipped});
                }
                ++tokens;
            }
            ++responses;
            ad::Var contribution = config.loss_agg == LossAggregation::token_mean
                                       ? *response_sum
                                       : ad::scale(*response_sum, 1.0 / static_cast<double>(r.tokens.size()));
            total = total ? *total + contribution : contribution;
        }
    }
    if (!total) throw std::invalid_argument("no rollouts to optimize");

    const double denom = config.loss_agg == LossAggregation::token_mean ? static_cast<double>(tokens)
                                                                        : static_cast<double>(responses);
    ad::Var objective = ad::scale(*total, 1.0 / denom);
    ad::Var loss = -objective;
    tape.backward(loss);

    ObjectiveResult res;
    res.objective = objective.item();
    res.loss = loss.item();
    res.gradient = PolicyParams::zeros(theta.config);
    const std::array<ad::Var, PolicyParams::kTensorCount> vars = {pol.w_img, pol.b_img, pol.q_emb, pol.tok_emb, pol.w_h,
                                                                  pol.w_e,   pol.b_h,   pol.w_o,   pol.b_o};
    auto grads = res.gradient.tensors();
    for (std::size_t k = 0; k < vars.size(); ++k) {
        auto g = tape.grad(vars[k]);
        std::copy(g.begin(), g.end(), grads[k]->data.begin());
    }
    res.token_count = tokens;
    res.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
    res.kl_mean = kl_sum / static_cast<double>(tokens);
    return res;
}

ad::Tensor random_noise_image(const ad::Tensor& image, std::size_t steps, double sigma, Rng& rng) {
    ad::Tensor out = image;
    out.grad.clear();
    if (steps == 0) return out;
    std::normal_distribution<double> noise(0.0, std::sqrt(static_cast<double>(steps)) * sigma);
    for (double& v : out.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
    return out;
}

std::string metrics_csv_header() {
    return "step,mode,mean_reward,train_accuracy,entropy,entropy_moderate,entropy_clean,clip_fraction,kl_mean,"
           "mean_abs_pixel_delta,wall_ms";
}

std::string metrics_csv_row(const StepMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f", m.step,
                  std::string(to_string(m.mode)).c_str(), m.mean_reward, m.train_accuracy, m.entropy,
                  m.entropy_moderate, m.entropy_clean, m.clip_fraction, m.kl_mean, m.mean_abs_pixel_delta, m.wall_ms);
    return buf;
}

namespace {

double mean_abs_delta(const ad::Tensor& a, const ad::Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.size());
}

void check_finite(const PolicyParams& p, std::string_view what, std::uint64_t step) {
    if (!p.all_finite()) {
        throw std::runtime_error("non-finite " + std::string(what) + " at step " + std::to_string(step));
    }
}

}  // namespace

StepMetrics train_step(PolicyParams& theta, PolicyParams& old, const PolicyParams& ref,
                       std::span<const TaskSample> batch, const TrainerConfig& config, std::uint64_t seed,
                       std::uint64_t step, StepDiagnostics* diagnostics) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const auto started = std::chrono::steady_clock::now();
    old = theta;

    AttackConfig attack = config.attack;
    attack.temperature = config.rollout_temperature;

    std::vector<RolloutGroup> groups(batch.size());
    double pixel_delta = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const TaskSample& s = batch[b];
        const StreamKey key{seed, step, b};
        RolloutGroup& g = groups[b];
        g.sample = &s;
        g.clean = sample_group(old, s, s.image, config.n1, config.rollout_temperature, Origin::clean, key, 0);
        if (config.n2 > 0) {
            if (config.mode == Mode::saei) {
                g.adv_image = egas_attack(old, s, g.clean, attack);
            } else if (config.mode == Mode::noise) {
                Rng rng = make_rng({0x0015'e000ULL, seed, step, b});
                g.adv_image = random_noise_image(s.image, config.noise_steps, config.noise_sigma, rng);
            }
            g.adversarial = sample_group(old, s, *g.adv_image, config.n2, config.rollout_temperature,
                                         Origin::adversarial, key, config.n1);
            pixel_delta += mean_abs_delta(*g.adv_image, s.image);
        }
        std::vector<double> rewards;
        for (const Rollout* r : g.all()) rewards.push_back(r->reward.total);
        g.advantages = normalize_advantages(rewards, config.std_floor);
    }

    StepMetrics m;
    m.step = step;
    m.mode = config.mode;
    std::size_t n_rollouts = 0;
    for (const RolloutGroup& g : groups) {
        const auto all = g.all();
        for (const Rollout* r : all) {
            m.mean_reward += r->reward.total;
            m.train_accuracy += r->reward.accuracy;
            ++n_rollouts;
        }
        m.entropy += group_entropy(all);
        m.entropy_moderate += selective_group_entropy(all, TokenSelection::moderate);
        m.entropy_clean += group_entropy(g.clean);
    }
    const double nb = static_cast<double>(groups.size());
    m.mean_reward /= static_cast<double>(n_rollouts);
    m.train_accuracy /= static_cast<double>(n_rollouts);
    m.entropy /= nb;
    m.entropy_moderate /= nb;
    m.entropy_clean /= nb;
    m.mean_abs_pixel_delta = pixel_delta / nb;

    ObjectiveResult obj = policy_objective(groups, theta, ref, config, diagnostics ? &diagnostics->trace : nullptr);
    check_finite(obj.gradient, "gradient", step);
    auto params = theta.tensors();
    auto grads = obj.gradient.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t j = 0; j < params[k]->size(); ++j) {
            params[k]->data[j] -= config.learning_rate * grads[k]->data[j];
        }
    }
    check_finite(theta, "parameters", step);

    m.clip_fraction = obj.clip_fraction;
    m.kl_mean = obj.kl_mean;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (diagnostics) diagnostics->groups = std::move(groups);
    return m;
}

}  // namespace saei
