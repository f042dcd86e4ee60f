#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advleaf/nn.hpp"
#include "advleaf/tensor.hpp"

namespace advleaf::attacks {

/// Shared knobs for the eight gradient-based attacks. All distances are in
/// normalized pixel units ([0,1] domain).
struct AttackConfig {
    float epsilon = 8.0f / 255.0f; ///< L-inf budget
    float alpha = 2.0f / 255.0f;   ///< per-step size
    int steps = 10;                ///< iteration count T
    float mu = 1.0f;               ///< momentum decay (mifgsm)
    int eot_samples = 10;          ///< expectation sample count m (eotpgd)
    bool random_start = true;      ///< uniform start (pgd / eotpgd)
    float noise_sigma = 0.001f;    ///< gaussian start scale (tpgd)
    float valid_min = 0.0f;
    float valid_max = 1.0f;
    uint64_t seed = 0;

    void validate() const;
};

/// Adversarial counterpart of one input batch.
struct AdversarialBatch {
    Tensor x_adv;
    std::vector<int64_t> source_indices;
    std::string attack_name;
    AttackConfig config;
};

enum class AttackKind { Fgsm, Rfgsm, Ffgsm, Mifgsm, Bim, Pgd, Tpgd, Eotpgd };

const std::vector<AttackKind>& all_attacks();
std::string attack_name(AttackKind kind);
/// ConfigError listing the eight valid names on failure.
AttackKind attack_from_name(const std::string& name);

/// Clamp each element into [x_origin - eps, x_origin + eps], then into
/// [valid_min, valid_max].
Tensor project_and_clamp(const Tensor& x_candidate, const Tensor& x_origin,
                         const AttackConfig& cfg);

// The eight generators. `x` is [N,C,H,W] in the valid range, `y` holds the
// ground-truth labels. The model is evaluated in eval mode (eotpgd keeps its
// stochastic layers live to realise the gradient expectation); parameters are
// left untouched. Generation is deterministic per (model, x, y, cfg.seed) and
// uses per-sample noise streams derived from (seed, sample index).
AdversarialBatch fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg);
AdversarialBatch rfgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const AttackConfig& cfg);
AdversarialBatch ffgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const AttackConfig& cfg);
AdversarialBatch mifgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg);
AdversarialBatch bim(const Model& model, const Tensor& x, const std::vector<int>& y,
                     const AttackConfig& cfg);
AdversarialBatch pgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                     const AttackConfig& cfg);
AdversarialBatch tpgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg);
AdversarialBatch eotpgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg);

AdversarialBatch run_attack(AttackKind kind, const Model& model, const Tensor& x,
                            const std::vector<int>& y, const AttackConfig& cfg);

/// Gradient of mean cross-entropy w.r.t. the input, parameters frozen.
/// Raises NumericError naming the batch index if a gradient is non-finite.
std::vector<float> input_gradient(const Model& model, const Tensor& x,
                                  const std::vector<int>& y);

} // namespace advleaf::attacks
