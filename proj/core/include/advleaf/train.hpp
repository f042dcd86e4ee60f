#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "advleaf/attacks.hpp"
#include "advleaf/data.hpp"
#include "advleaf/nn.hpp"

namespace advleaf {

enum class MixMode { Augment, Replace };

struct AdversarialTraining {
    attacks::AttackKind attack = attacks::AttackKind::Bim;
    attacks::AttackConfig config;
    MixMode mix = MixMode::Augment;
};

/// Adam with a linear learning-rate decay to zero over the whole run
/// (lr(step) = lr0 * (1 - step/total_steps); beta1 0.9, beta2 0.999,
/// eps 1e-8).
struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    float lr0 = 5e-4f;
    uint64_t seed = 0;
    std::string train_split = "train";
    std::optional<AdversarialTraining> adversarial;
};

struct EpochStats {
    double loss = 0.0;     ///< mean cross-entropy over the epoch
    double accuracy = 0.0; ///< train-split accuracy from the training forward passes
    float lr = 0.0f;       ///< learning rate at the first step of the epoch
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0;
};

/// Train in place; deterministic per cfg.seed. Delegates to
/// adversarial_train() when cfg.adversarial is set. NaN loss aborts with
/// epoch/step context.
TrainHistory train(Model& model, const Dataset& ds, const TrainConfig& cfg);

/// Every batch is paired with adversarial counterparts generated against the
/// current weights; Augment trains on clean+adversarial, Replace on the
/// adversarial examples only.
TrainHistory adversarial_train(Model& model, const Dataset& ds, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Knowledge distillation
// ---------------------------------------------------------------------------

struct KDConfig {
    float alpha = 0.1f;      ///< weight of the hard-label cross-entropy term
    float temperature = 3.0f;

    void validate() const;
};

/// alpha * CE(student_logits, labels)
///   + (1-alpha) * T^2 * KL(softmax(teacher/T) || softmax(student/T)).
/// Differentiable w.r.t. the student logits only.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int>& labels, const KDConfig& kd);

/// Mean of the member softmax distributions, returned in the log domain so
/// the result plugs in wherever logits are expected.
Tensor ensemble_logits(const std::vector<const Model*>& teachers, const Tensor& x);

/// Teacher outputs keyed by sample id ("ALTL" file format).
struct LogitTable {
    uint32_t class_count = 0;
    std::vector<std::pair<uint64_t, std::vector<float>>> rows;

    std::unordered_map<uint64_t, size_t> index() const;
};

LogitTable import_teacher_logits(const std::string& path);
void export_teacher_logits(const LogitTable& table, const std::string& path);
/// Run every dataset sample through frozen teachers (mean softmax in the log
/// domain for an ensemble).
LogitTable compute_teacher_logits(const std::vector<const Model*>& teachers, const Dataset& ds);

using TeacherSource = std::variant<std::vector<const Model*>, LogitTable>;

/// Train the student with kd_loss against frozen teachers (or a logit file
/// that must cover every training sample).
TrainHistory distill(Model& student, const TeacherSource& teachers, const Dataset& ds,
                     const TrainConfig& cfg, const KDConfig& kd);

} // namespace advleaf
