#include "advleaf/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace advleaf::attacks {

namespace {

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

int64_t per_sample(const Tensor& x) { return x.size() / x.dim(0); }

void check_batch(const Tensor& x, const std::vector<int>& y) {
    if (x.shape().size() != 4)
        throw ShapeError("attack input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (static_cast<int64_t>(y.size()) != x.dim(0))
        throw ShapeError("attack: " + std::to_string(y.size()) + " labels for batch of " +
                         std::to_string(x.dim(0)));
}

void check_finite_grad(const std::vector<float>& g, int64_t n, int64_t stride) {
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < stride; ++j)
            if (!std::isfinite(g[static_cast<size_t>(i * stride + j)]))
                throw NumericError("non-finite input gradient for batch index " +
                                   std::to_string(i));
}

/// Per-sample noise streams: stream i depends only on (cfg.seed, i), so the
/// same sample gets the same noise regardless of batch partitioning.
std::vector<Rng> sample_streams(const AttackConfig& cfg, int64_t n) {
    Rng root(cfg.seed);
    std::vector<Rng> streams;
    streams.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) streams.push_back(root.substream(static_cast<uint64_t>(i)));
    return streams;
}

AdversarialBatch finish(std::string name, const AttackConfig& cfg, Tensor x_adv) {
    AdversarialBatch b;
    b.x_adv = std::move(x_adv);
    b.attack_name = std::move(name);
    b.config = cfg;
    return b;
}

/// Shared iterative skeleton: start from `x0`, take `steps` sign steps of
/// `step_size` along `grad_fn`'s output, projecting after every step.
template <typename GradFn>
Tensor iterate_signed(const Tensor& x, Tensor x0, const AttackConfig& cfg, int steps,
                      float step_size, GradFn grad_fn) {
    Tensor cur = std::move(x0);
    for (int t = 0; t < steps; ++t) {
        const std::vector<float> g = grad_fn(cur, t);
        Tensor cand = cur.clone();
        float* p = cand.data().data();
        for (int64_t i = 0; i < cand.size(); ++i)
            p[i] += step_size * sign(g[static_cast<size_t>(i)]);
        cur = project_and_clamp(cand, x, cfg);
    }
    return cur;
}

} // namespace

void AttackConfig::validate() const {
    if (epsilon < 0.0f) throw ConfigError("attack: epsilon must be >= 0");
    if (alpha < 0.0f) throw ConfigError("attack: alpha must be >= 0");
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (eot_samples < 1) throw ConfigError("attack: eot_samples must be >= 1");
    if (noise_sigma < 0.0f) throw ConfigError("attack: noise_sigma must be >= 0");
    if (valid_min >= valid_max) throw ConfigError("attack: valid_min must be < valid_max");
}

const std::vector<AttackKind>& all_attacks() {
    static const std::vector<AttackKind> kinds = {
        AttackKind::Fgsm, AttackKind::Rfgsm, AttackKind::Ffgsm, AttackKind::Mifgsm,
        AttackKind::Bim,  AttackKind::Pgd,   AttackKind::Tpgd,  AttackKind::Eotpgd};
    return kinds;
}

std::string attack_name(AttackKind kind) {
    switch (kind) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Rfgsm: return "rfgsm";
    case AttackKind::Ffgsm: return "ffgsm";
    case AttackKind::Mifgsm: return "mifgsm";
    case AttackKind::Bim: return "bim";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Tpgd: return "tpgd";
    case AttackKind::Eotpgd: return "eotpgd";
    }
    return "?";
}

AttackKind attack_from_name(const std::string& name) {
    for (AttackKind k : all_attacks())
        if (attack_name(k) == name) return k;
    std::string valid;
    for (AttackKind k : all_attacks())
        valid += (valid.empty() ? "" : ", ") + attack_name(k);
    throw ConfigError("unknown attack '" + name + "'; valid attacks: " + valid);
}

Tensor project_and_clamp(const Tensor& x_candidate, const Tensor& x_origin,
                         const AttackConfig& cfg) {
    if (x_candidate.shape() != x_origin.shape())
        throw ShapeError("project_and_clamp: candidate " + shape_str(x_candidate.shape()) +
                         " vs origin " + shape_str(x_origin.shape()));
    Tensor out = x_candidate.clone();
    float* po = out.data().data();
    const float* px = x_origin.data().data();
    for (int64_t i = 0; i < out.size(); ++i) {
        const float lo = px[i] - cfg.epsilon;
        const float hi = px[i] + cfg.epsilon;
        po[i] = std::clamp(std::clamp(po[i], lo, hi), cfg.valid_min, cfg.valid_max);
    }
    return out;
}

std::vector<float> input_gradient(const Model& model, const Tensor& x,
                                  const std::vector<int>& y) {
    ParamGradPause pause(const_cast<Model&>(model));
    Tensor input = x.clone().set_requires_grad(true);
    Tape tape;
    Tensor loss = cross_entropy(model.forward(input, {.training = false}), y);
    backward(tape, loss);
    auto g = input.grad();
    std::vector<float> out(g.begin(), g.end());
    check_finite_grad(out, x.dim(0), per_sample(x));
    return out;
}

// --- fgsm -------------------------------------------------------------------

AdversarialBatch fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const auto g = input_gradient(model, x, y);
    Tensor adv = x.clone();
    float* p = adv.data().data();
    for (int64_t i = 0; i < adv.size(); ++i) {
        p[i] += cfg.epsilon * sign(g[static_cast<size_t>(i)]);
        p[i] = std::clamp(p[i], cfg.valid_min, cfg.valid_max);
    }
    return finish("fgsm", cfg, std::move(adv));
}

// --- rfgsm ------------------------------------------------------------------

AdversarialBatch rfgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    if (cfg.alpha > cfg.epsilon)
        throw ConfigError("rfgsm: alpha (" + std::to_string(cfg.alpha) +
                          ") must not exceed epsilon (" + std::to_string(cfg.epsilon) + ")");
    const int64_t n = x.dim(0), stride = per_sample(x);
    auto streams = sample_streams(cfg, n);

    Tensor start = x.clone();
    float* ps = start.data().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < stride; ++j)
            ps[i * stride + j] += cfg.alpha * sign(streams[static_cast<size_t>(i)].normal());
    start = project_and_clamp(start, x, cfg);

    Tensor adv = iterate_signed(x, std::move(start), cfg, cfg.steps,
                                cfg.epsilon - cfg.alpha, [&](const Tensor& cur, int) {
                                    return input_gradient(model, cur, y);
                                });
    return finish("rfgsm", cfg, std::move(adv));
}

// --- ffgsm ------------------------------------------------------------------

AdversarialBatch ffgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const int64_t n = x.dim(0), stride = per_sample(x);
    auto streams = sample_streams(cfg, n);

    Tensor start = x.clone();
    float* ps = start.data().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < stride; ++j)
            ps[i * stride + j] += streams[static_cast<size_t>(i)].uniform(-cfg.epsilon, cfg.epsilon);
    start = project_and_clamp(start, x, cfg); // keep the start in the valid range

    Tensor adv = iterate_signed(x, std::move(start), cfg, 1, cfg.alpha,
                                [&](const Tensor& cur, int) {
                                    return input_gradient(model, cur, y);
                                });
    return finish("ffgsm", cfg, std::move(adv));
}

// --- mifgsm -----------------------------------------------------------------

AdversarialBatch mifgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const int64_t n = x.dim(0), stride = per_sample(x);

    std::vector<float> momentum(static_cast<size_t>(x.size()), 0.0f);
    Tensor adv = iterate_signed(
        x, x.clone(), cfg, cfg.steps, cfg.alpha, [&](const Tensor& cur, int) {
            const auto g = input_gradient(model, cur, y);
            for (int64_t i = 0; i < n; ++i) {
                double l1 = 0.0;
                for (int64_t j = 0; j < stride; ++j)
                    l1 += std::fabs(g[static_cast<size_t>(i * stride + j)]);
                // zero-gradient samples contribute nothing this step
                const float inv = l1 > 0.0 ? static_cast<float>(1.0 / l1) : 0.0f;
                for (int64_t j = 0; j < stride; ++j) {
                    auto& m = momentum[static_cast<size_t>(i * stride + j)];
                    m = cfg.mu * m + g[static_cast<size_t>(i * stride + j)] * inv;
                }
            }
            return momentum;
        });
    return finish("mifgsm", cfg, std::move(adv));
}

// --- bim / pgd ----------------------------------------------------------------

AdversarialBatch bim(const Model& model, const Tensor& x, const std::vector<int>& y,
                     const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    Tensor adv = iterate_signed(x, x.clone(), cfg, cfg.steps, cfg.alpha,
                                [&](const Tensor& cur, int) {
                                    return input_gradient(model, cur, y);
                                });
    return finish("bim", cfg, std::move(adv));
}

AdversarialBatch pgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                     const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const int64_t n = x.dim(0), stride = per_sample(x);

    Tensor start = x.clone();
    if (cfg.random_start) {
        auto streams = sample_streams(cfg, n);
        float* ps = start.data().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < stride; ++j)
                ps[i * stride + j] +=
                    streams[static_cast<size_t>(i)].uniform(-cfg.epsilon, cfg.epsilon);
        start = project_and_clamp(start, x, cfg);
    }
    Tensor adv = iterate_signed(x, std::move(start), cfg, cfg.steps, cfg.alpha,
                                [&](const Tensor& cur, int) {
                                    return input_gradient(model, cur, y);
                                });
    return finish("pgd", cfg, std::move(adv));
}

// --- tpgd -------------------------------------------------------------------

AdversarialBatch tpgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    (void)y; // label-free: ascends KL(f(x) || f(x'))
    const int64_t n = x.dim(0), stride = per_sample(x);

    const Tensor clean_logits = model.forward(x, {.training = false}).detach();

    Tensor start = x.clone();
    {
        auto streams = sample_streams(cfg, n);
        float* ps = start.data().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < stride; ++j)
                ps[i * stride + j] += cfg.noise_sigma * streams[static_cast<size_t>(i)].normal();
        start = project_and_clamp(start, x, cfg);
    }

    Tensor adv = iterate_signed(
        x, std::move(start), cfg, cfg.steps, cfg.alpha, [&](const Tensor& cur, int) {
            ParamGradPause pause(const_cast<Model&>(model));
            Tensor input = cur.clone().set_requires_grad(true);
            Tape tape;
            Tensor loss =
                kl_divergence(clean_logits, model.forward(input, {.training = false}));
            backward(tape, loss);
            auto g = input.grad();
            std::vector<float> out(g.begin(), g.end());
            check_finite_grad(out, n, stride);
            return out;
        });
    return finish("tpgd", cfg, std::move(adv));
}

// --- eotpgd -----------------------------------------------------------------

AdversarialBatch eotpgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const int64_t n = x.dim(0), stride = per_sample(x);

    Tensor start = x.clone();
    if (cfg.random_start) {
        auto streams = sample_streams(cfg, n);
        float* ps = start.data().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < stride; ++j)
                ps[i * stride + j] +=
                    streams[static_cast<size_t>(i)].uniform(-cfg.epsilon, cfg.epsilon);
        start = project_and_clamp(start, x, cfg);
    }

    // stochastic layers stay active so the m-sample mean realises E[grad]
    Rng eot_rng = Rng(cfg.seed).substream(0x0E07);
    Tensor adv = iterate_signed(
        x, std::move(start), cfg, cfg.steps, cfg.alpha, [&](const Tensor& cur, int) {
            std::vector<double> acc(static_cast<size_t>(cur.size()), 0.0);
            ParamGradPause pause(const_cast<Model&>(model));
            for (int s = 0; s < cfg.eot_samples; ++s) {
                Tensor input = cur.clone().set_requires_grad(true);
                Tape tape;
                Tensor loss =
                    cross_entropy(model.forward(input, {.training = true, .rng = &eot_rng}), y);
                backward(tape, loss);
                auto g = input.grad();
                for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
            }
            std::vector<float> out(acc.size());
            const double inv = 1.0 / static_cast<double>(cfg.eot_samples);
            for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] * inv);
            check_finite_grad(out, n, stride);
            return out;
        });
    return finish("eotpgd", cfg, std::move(adv));
}

AdversarialBatch run_attack(AttackKind kind, const Model& model, const Tensor& x,
                            const std::vector<int>& y, const AttackConfig& cfg) {
    switch (kind) {
    case AttackKind::Fgsm: return fgsm(model, x, y, cfg);
    case AttackKind::Rfgsm: return rfgsm(model, x, y, cfg);
    case AttackKind::Ffgsm: return ffgsm(model, x, y, cfg);
    case AttackKind::Mifgsm: return mifgsm(model, x, y, cfg);
    case AttackKind::Bim: return bim(model, x, y, cfg);
    case AttackKind::Pgd: return pgd(model, x, y, cfg);
    case AttackKind::Tpgd: return tpgd(model, x, y, cfg);
    case AttackKind::Eotpgd: return eotpgd(model, x, y, cfg);
    }
    throw ConfigError("unknown attack kind");
}

} // namespace advleaf::attacks
