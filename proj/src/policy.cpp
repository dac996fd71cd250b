#include "saei/policy.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace saei {

namespace {

ad::Tensor uniform_tensor(std::vector<std::size_t> shape, Rng& rng) {
    ad::Tensor t = ad::Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = (2.0 * uniform01(rng) - 1.0) * PolicyParams::kInitScale;
    return t;
}

Token bos_token(const ModelConfig& c) { return static_cast<Token>(c.vocab_size); }

}  // namespace

PolicyParams PolicyParams::zeros(const ModelConfig& config) {
    config.validate();
    const std::size_t h = config.hidden_dim;
    const std::size_t v = config.vocab_size;
    PolicyParams p;
    p.config = config;
    p.w_img = ad::Tensor::zeros({h, config.image_size()});
    p.b_img = ad::Tensor::zeros({h});
    p.q_emb = ad::Tensor::zeros({config.num_questions, h});
    p.tok_emb = ad::Tensor::zeros({v + 1, h});
    p.w_h = ad::Tensor::zeros({h, h});
    p.w_e = ad::Tensor::zeros({h, h});
    p.b_h = ad::Tensor::zeros({h});
    p.w_o = ad::Tensor::zeros({v, h});
    p.b_o = ad::Tensor::zeros({v});
    return p;
}

PolicyParams PolicyParams::init(const ModelConfig& config, std::uint64_t seed) {
    PolicyParams p = zeros(config);
    Rng rng = make_rng({0x9011'c700ULL, seed});
    p.w_img = uniform_tensor(p.w_img.shape, rng);
    p.q_emb = uniform_tensor(p.q_emb.shape, rng);
    p.tok_emb = uniform_tensor(p.tok_emb.shape, rng);
    p.w_h = uniform_tensor(p.w_h.shape, rng);
    p.w_e = uniform_tensor(p.w_e.shape, rng);
    return p;
}

std::array<ad::Tensor*, PolicyParams::kTensorCount> PolicyParams::tensors() {
    return {&w_img, &b_img, &q_emb, &tok_emb, &w_h, &w_e, &b_h, &w_o, &b_o};
}

std::array<const ad::Tensor*, PolicyParams::kTensorCount> PolicyParams::tensors() const {
    return {&w_img, &b_img, &q_emb, &tok_emb, &w_h, &w_e, &b_h, &w_o, &b_o};
}

std::size_t PolicyParams::parameter_count() const {
    std::size_t n = 0;
    for (const ad::Tensor* t : tensors()) n += t->size();
    return n;
}

bool PolicyParams::all_finite() const {
    const auto ts = tensors();
    return std::all_of(ts.begin(), ts.end(), [](const ad::Tensor* t) { return t->all_finite(); });
}

bool bitwise_equal(const PolicyParams& a, const PolicyParams& b) {
    if (!(a.config == b.config)) return false;
    auto ta = a.tensors();
    auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i]->shape != tb[i]->shape) return false;
        if (std::memcmp(ta[i]->data.data(), tb[i]->data.data(), ta[i]->size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

BoundPolicy bind(ad::Tape& tape, const PolicyParams& params, bool trainable) {
    auto put = [&](const ad::Tensor& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
    BoundPolicy b;
    b.config = &params.config;
    b.w_img = put(params.w_img);
    b.b_img = put(params.b_img);
    b.q_emb = put(params.q_emb);
    b.tok_emb = put(params.tok_emb);
    b.w_h = put(params.w_h);
    b.w_e = put(params.w_e);
    b.b_h = put(params.b_h);
    b.w_o = put(params.w_o);
    b.b_o = put(params.b_o);
    return b;
}

ad::Var encode(const BoundPolicy& policy, ad::Var image, std::size_t question_id) {
    const ModelConfig& c = *policy.config;
    if (image.value().shape != c.image_shape()) throw std::invalid_argument("bad image shape");
    if (question_id >= c.num_questions) throw std::invalid_argument("question id out of range");
    ad::Var pre = ad::matmul(policy.w_img, image) + policy.b_img + ad::row(policy.q_emb, question_id);
    return ad::tanh(pre);
}

std::vector<double> encode(const PolicyParams& params, const ad::Tensor& image, std::size_t question_id) {
    ad::Tape tape;
    BoundPolicy b = bind(tape, params, false);
    return encode(b, tape.constant(image), question_id).value().data;
}

DecoderStep decoder_step(const BoundPolicy& policy, ad::Var context, ad::Var hidden, Token prev) {
    if (prev > policy.config->vocab_size) throw std::invalid_argument("token id out of range");
    ad::Var emb = ad::row(policy.tok_emb, prev);
    ad::Var pre = ad::matmul(policy.w_h, hidden) + ad::matmul(policy.w_e, emb) + policy.b_h + context;
    ad::Var h = ad::tanh(pre);
    return {h, ad::matmul(policy.w_o, h) + policy.b_o};
}

TokenDist token_dist(ad::Var logits, double temperature) {
    ad::Var logp = ad::log_softmax(logits, temperature);
    ad::Var probs = ad::softmax(logits, temperature);
    return {logp, probs, ad::entropy_from_logp(logp)};
}

namespace {

ad::Var initial_hidden(ad::Tape& tape, const ModelConfig& c) {
    return tape.leaf(ad::Tensor::zeros({c.hidden_dim}), false);
}

}  // namespace

std::vector<double> next_token_dist(const PolicyParams& params, std::span<const double> context,
                                    std::span<const Token> prev_tokens, double temperature) {
    const ModelConfig& c = params.config;
    if (prev_tokens.size() >= c.max_len) throw std::invalid_argument("prefix reaches max_len");
    if (context.size() != c.hidden_dim) throw std::invalid_argument("context has wrong length");
    ad::Tape tape;
    BoundPolicy b = bind(tape, params, false);
    ad::Var ctx = tape.leaf(ad::Tensor::vector({context.begin(), context.end()}), false);
    ad::Var h = initial_hidden(tape, c);
    DecoderStep step = decoder_step(b, ctx, h, bos_token(c));
    for (Token t : prev_tokens) {
        if (t >= c.vocab_size) throw std::invalid_argument("token id out of range");
        step = decoder_step(b, ctx, step.hidden, t);
    }
    return ad::softmax(step.logits, temperature).value().data;
}

Rollout sample_from_context(const PolicyParams& params, const ad::Tensor& context, double temperature,
                            std::size_t max_len, Rng& rng, Origin origin) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    const ModelConfig& c = params.config;
    ad::Tape tape;
    BoundPolicy b = bind(tape, params, false);
    ad::Var ctx = tape.constant(context);
    ad::Var h = initial_hidden(tape, c);
    Token prev = bos_token(c);

    Rollout r;
    r.origin = origin;
    while (r.tokens.size() < max_len) {
        DecoderStep step = decoder_step(b, ctx, h, prev);
        TokenDist d = token_dist(step.logits, temperature);
        const Token tok = static_cast<Token>(sample_categorical(d.probs.value().data, rng));
        r.tokens.push_back(tok);
        r.old_logprobs.push_back(d.logp.value().data[tok]);
        r.token_entropies.push_back(d.entropy.item());
        if (tok == kEnd) break;
        h = step.hidden;
        prev = tok;
    }
    return r;
}

Rollout sample_response(const PolicyParams& params, const ad::Tensor& image, std::size_t question_id,
                        double temperature, std::size_t max_len, Rng& rng, Origin origin) {
    ad::Tensor ctx = ad::Tensor::vector(encode(params, image, question_id));
    return sample_from_context(params, ctx, temperature, max_len, rng, origin);
}

Rollout sample_response(const PolicyParams& params, const TaskSample& sample, double temperature,
                        std::size_t max_len, Rng& rng) {
    return sample_response(params, sample.image, sample.question_id, temperature, max_len, rng);
}

std::vector<TokenDist> teacher_force_context(const BoundPolicy& policy, ad::Var context,
                                             std::span<const Token> tokens, double temperature) {
    const ModelConfig& c = *policy.config;
    std::vector<TokenDist> out;
    out.reserve(tokens.size());
    ad::Var h = initial_hidden(*context.tape, c);
    Token prev = bos_token(c);
    for (Token t : tokens) {
        if (t >= c.vocab_size) throw std::invalid_argument("token id out of range");
        DecoderStep step = decoder_step(policy, context, h, prev);
        out.push_back(token_dist(step.logits, temperature));
        h = step.hidden;
        prev = t;
    }
    return out;
}

std::vector<TokenDist> teacher_force(const BoundPolicy& policy, ad::Var image, std::size_t question_id,
                                     std::span<const Token> tokens, double temperature) {
    return teacher_force_context(policy, encode(policy, image, question_id), tokens, temperature);
}

std::vector<std::vector<double>> teacher_forced_dists(const PolicyParams& params, const ad::Tensor& image,
                                                      std::size_t question_id, std::span<const Token> tokens,
                                                      double temperature) {
    ad::Tape tape;
    BoundPolicy b = bind(tape, params, false);
    std::vector<std::vector<double>> out;
    for (const TokenDist& d : teacher_force(b, tape.constant(image), question_id, tokens, temperature)) {
        out.push_back(d.probs.value().data);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'A', 'E', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw std::runtime_error("truncated checkpoint: " + path.string());
    }
    return v;
}

}  // namespace

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    const ModelConfig& c = params.config;
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    for (std::size_t v : {c.vocab_size, c.image_height, c.image_width, c.image_channels, c.hidden_dim, c.max_len,
                          c.num_questions}) {
        put<std::uint64_t>(out, v);
    }
    put<std::uint64_t>(out, params.parameter_count());
    for (const ad::Tensor* t : params.tensors()) {
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    if (get<std::uint32_t>(in, path) != kVersion) {
        throw std::runtime_error("unsupported checkpoint version: " + path.string());
    }
    ModelConfig c;
    c.vocab_size = get<std::uint64_t>(in, path);
    c.image_height = get<std::uint64_t>(in, path);
    c.image_width = get<std::uint64_t>(in, path);
    c.image_channels = get<std::uint64_t>(in, path);
    c.hidden_dim = get<std::uint64_t>(in, path);
    c.max_len = get<std::uint64_t>(in, path);
    c.num_questions = get<std::uint64_t>(in, path);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("bad checkpoint header (" + std::string(e.what()) + "): " + path.string());
    }
    PolicyParams p = PolicyParams::zeros(c);
    if (get<std::uint64_t>(in, path) != p.parameter_count()) {
        throw std::runtime_error("checkpoint parameter count does not match its header: " + path.string());
    }
    for (ad::Tensor* t : p.tensors()) {
        if (!in.read(reinterpret_cast<char*>(t->data.data()), static_cast<std::streamsize>(t->size() * sizeof(double)))) {
            throw std::runtime_error("truncated checkpoint: " + path.string());
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error("trailing bytes in checkpoint: " + path.string());
    }
    return p;
}

}  // namespace saei
