#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advleaf/attacks.hpp"
#include "advleaf/data.hpp"
#include "advleaf/nn.hpp"
#include "advleaf/train.hpp"

namespace advleaf {

/// K x K counts, rows = true class, columns = predicted class.
struct ConfusionMatrix {
    int k = 0;
    std::vector<int64_t> counts; ///< row-major k*k

    int64_t& at(int true_class, int predicted);
    int64_t at(int true_class, int predicted) const;
    int64_t total() const;
};

/// Argmax predictions over one split (ties to the lowest class index).
ConfusionMatrix confusion(const Model& model, const Dataset& ds, const std::string& split);

double accuracy(const ConfusionMatrix& cm);   ///< trace/total
/// Unweighted mean of per-class F1; a class with undefined precision or
/// recall (0/0) contributes 0.
double macro_f1(const ConfusionMatrix& cm);

/// Accuracy/macro-F1 on a split after attacking every batch.
struct AttackedEval {
    ConfusionMatrix cm;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};
AttackedEval evaluate_under_attack(const Model& model, const Dataset& ds,
                                   const std::string& split, attacks::AttackKind kind,
                                   const attacks::AttackConfig& cfg, int batch_size = 32);

struct ScenarioCell {
    std::string train_mode; ///< "regular" | "adversarial"
    std::string test_mode;  ///< "clean" | "attacked"
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// The 2x2 evaluation matrix: {regular, adversarial} training crossed with
/// {clean, attacked} test data.
struct ScenarioReport {
    std::vector<ScenarioCell> cells; ///< exactly four
    std::string attack;
    attacks::AttackConfig attack_config;
    uint64_t seed = 0;
    std::string config_hash;
    std::string split_note; ///< which splits were used

    const ScenarioCell& cell(const std::string& train_mode, const std::string& test_mode) const;
    std::string to_json() const;            ///< schema-versioned document
    static ScenarioReport from_json(const std::string& text); ///< strict parse
    std::string to_csv() const;
};

ScenarioReport four_scenario_eval(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                  attacks::AttackKind attack, const attacks::AttackConfig& acfg,
                                  const Dataset& ds);

/// Size/efficiency comparison table. Percentages are reference/member, kept
/// with two-decimal truncation so printed ratios agree with values computed
/// from already-rounded unit figures.
struct SizeEntry {
    std::string name;
    double params = 0.0;
    double flops = 0.0;
};

struct SizeEfficiencyRow {
    std::string name;
    double params = 0.0;
    double flops = 0.0;
    double params_pct_of_reference = -1.0; ///< -1 for the reference row itself
    double flops_pct_of_reference = -1.0;
};

struct SizeEfficiencyReport {
    std::string reference;
    std::vector<SizeEfficiencyRow> rows;
    std::string to_json() const;
    std::string to_text() const;
};

/// `reference` names the row whose size is expressed as a percentage of every
/// other row (reference/member * 100, truncated to two decimals).
SizeEfficiencyReport size_efficiency_report(const std::vector<SizeEntry>& entries,
                                            const std::string& reference);

/// Truncate (not round) to two decimals; matches ratio tables derived from
/// pre-rounded values.
double truncate2(double percent);

} // namespace advleaf
