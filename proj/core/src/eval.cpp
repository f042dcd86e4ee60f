#include "advleaf/eval.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace advleaf {

using nlohmann::json;

int64_t& ConfusionMatrix::at(int t, int p) {
    return counts[static_cast<size_t>(t) * k + p];
}

int64_t ConfusionMatrix::at(int t, int p) const {
    return counts[static_cast<size_t>(t) * k + p];
}

int64_t ConfusionMatrix::total() const {
    int64_t n = 0;
    for (int64_t c : counts) n += c;
    return n;
}

namespace {

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

ConfusionMatrix tally(const Model& model, const Dataset& ds,
                      const std::vector<int64_t>& indices, int batch_size) {
    ConfusionMatrix cm;
    cm.k = model.class_count();
    cm.counts.assign(static_cast<size_t>(cm.k) * cm.k, 0);
    for (size_t at = 0; at < indices.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<int64_t> idx(indices.begin() + static_cast<ptrdiff_t>(at),
                                 indices.begin() +
                                     static_cast<ptrdiff_t>(std::min(
                                         indices.size(), at + static_cast<size_t>(batch_size))));
        Batch b = make_batch(ds, idx);
        Tensor logits = model.forward(b.x, {.training = false});
        const float* lp = logits.data().data();
        for (size_t r = 0; r < idx.size(); ++r)
            ++cm.at(b.y[r], argmax_row(lp + r * static_cast<size_t>(cm.k), cm.k));
    }
    return cm;
}

} // namespace

ConfusionMatrix confusion(const Model& model, const Dataset& ds, const std::string& split) {
    const auto& idx = ds.split(split);
    if (idx.empty()) throw DataError("confusion: split '" + split + "' is empty");
    return tally(model, ds, idx, 64);
}

double accuracy(const ConfusionMatrix& cm) {
    const int64_t n = cm.total();
    if (n == 0) throw DataError("accuracy: empty confusion matrix");
    int64_t trace = 0;
    for (int i = 0; i < cm.k; ++i) trace += cm.at(i, i);
    return static_cast<double>(trace) / static_cast<double>(n);
}

double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("macro_f1: empty confusion matrix");
    double sum = 0.0;
    for (int c = 0; c < cm.k; ++c) {
        int64_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        // 0/0 precision or recall contributes F1 = 0 for the class
        if (tp == 0) continue;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        sum += 2.0 * precision * recall / (precision + recall);
    }
    return sum / static_cast<double>(cm.k);
}

AttackedEval evaluate_under_attack(const Model& model, const Dataset& ds,
                                   const std::string& split, attacks::AttackKind kind,
                                   const attacks::AttackConfig& cfg, int batch_size) {
    const auto& idx = ds.split(split);
    if (idx.empty()) throw DataError("evaluate_under_attack: split '" + split + "' is empty");
    AttackedEval out;
    out.cm.k = model.class_count();
    out.cm.counts.assign(static_cast<size_t>(out.cm.k) * out.cm.k, 0);
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<int64_t> part(idx.begin() + static_cast<ptrdiff_t>(at),
                                  idx.begin() + static_cast<ptrdiff_t>(std::min(
                                                    idx.size(), at + static_cast<size_t>(batch_size))));
        Batch b = make_batch(ds, part);
        auto adv = attacks::run_attack(kind, model, b.x, b.y, cfg);
        Tensor logits = model.forward(adv.x_adv, {.training = false});
        const float* lp = logits.data().data();
        for (size_t r = 0; r < part.size(); ++r)
            ++out.cm.at(b.y[r], argmax_row(lp + r * static_cast<size_t>(out.cm.k), out.cm.k));
    }
    out.accuracy = accuracy(out.cm);
    out.macro_f1 = macro_f1(out.cm);
    return out;
}

// ---------------------------------------------------------------------------
// Scenario matrix
// ---------------------------------------------------------------------------

const ScenarioCell& ScenarioReport::cell(const std::string& train_mode,
                                         const std::string& test_mode) const {
    for (const auto& c : cells)
        if (c.train_mode == train_mode && c.test_mode == test_mode) return c;
    throw ConfigError("scenario cell (" + train_mode + ", " + test_mode + ") missing");
}

namespace {

json attack_config_to_json(const attacks::AttackConfig& c) {
    return json{{"epsilon", c.epsilon},
                {"alpha", c.alpha},
                {"steps", c.steps},
                {"mu", c.mu},
                {"eot_samples", c.eot_samples},
                {"random_start", c.random_start},
                {"noise_sigma", c.noise_sigma},
                {"valid_min", c.valid_min},
                {"valid_max", c.valid_max},
                {"seed", c.seed}};
}

attacks::AttackConfig attack_config_from_json(const json& j) {
    attacks::AttackConfig c;
    c.epsilon = j.at("epsilon").get<float>();
    c.alpha = j.at("alpha").get<float>();
    c.steps = j.at("steps").get<int>();
    c.mu = j.at("mu").get<float>();
    c.eot_samples = j.at("eot_samples").get<int>();
    c.random_start = j.at("random_start").get<bool>();
    c.noise_sigma = j.at("noise_sigma").get<float>();
    c.valid_min = j.at("valid_min").get<float>();
    c.valid_max = j.at("valid_max").get<float>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

constexpr int kScenarioSchemaVersion = 1;

} // namespace

std::string ScenarioReport::to_json() const {
    json cells_json = json::array();
    for (const auto& c : cells)
        cells_json.push_back(json{{"train_mode", c.train_mode},
                                  {"test_mode", c.test_mode},
                                  {"accuracy", c.accuracy},
                                  {"macro_f1", c.macro_f1}});
    json doc{{"schema_version", kScenarioSchemaVersion},
             {"kind", "scenario_report"},
             {"attack", attack},
             {"attack_config", attack_config_to_json(attack_config)},
             {"seed", seed},
             {"config_hash", config_hash},
             {"split_note", split_note},
             {"cells", cells_json}};
    return doc.dump(2) + "\n";
}

ScenarioReport ScenarioReport::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("scenario report: ") + e.what());
    }
    if (doc.value("schema_version", -1) != kScenarioSchemaVersion)
        throw FormatError("scenario report: unsupported schema_version");
    if (doc.value("kind", "") != std::string("scenario_report"))
        throw FormatError("scenario report: wrong document kind");
    ScenarioReport r;
    r.attack = doc.at("attack").get<std::string>();
    r.attack_config = attack_config_from_json(doc.at("attack_config"));
    r.seed = doc.at("seed").get<uint64_t>();
    r.config_hash = doc.at("config_hash").get<std::string>();
    r.split_note = doc.at("split_note").get<std::string>();
    for (const auto& c : doc.at("cells")) {
        ScenarioCell cell;
        cell.train_mode = c.at("train_mode").get<std::string>();
        cell.test_mode = c.at("test_mode").get<std::string>();
        cell.accuracy = c.at("accuracy").get<double>();
        cell.macro_f1 = c.at("macro_f1").get<double>();
        r.cells.push_back(cell);
    }
    if (r.cells.size() != 4) throw FormatError("scenario report: expected 4 cells");
    return r;
}

std::string ScenarioReport::to_csv() const {
    std::ostringstream os;
    os << "train_mode,test_mode,attack,accuracy,macro_f1\n";
    for (const auto& c : cells)
        os << c.train_mode << ',' << c.test_mode << ','
           << (c.test_mode == "attacked" || c.train_mode == "adversarial" ? attack : "-") << ','
           << c.accuracy << ',' << c.macro_f1 << '\n';
    return os.str();
}

ScenarioReport four_scenario_eval(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                  attacks::AttackKind attack, const attacks::AttackConfig& acfg,
                                  const Dataset& ds) {
    const std::string test_split = ds.splits.contains("test") ? "test" : train_cfg.train_split;

    Model regular = model_cfg.build(ds.class_count(),
                                    {ds.channels, ds.height, ds.width}, train_cfg.seed);
    TrainConfig reg_cfg = train_cfg;
    reg_cfg.adversarial.reset();
    train(regular, ds, reg_cfg);

    Model robust = model_cfg.build(ds.class_count(),
                                   {ds.channels, ds.height, ds.width}, train_cfg.seed);
    TrainConfig adv_cfg = train_cfg;
    if (!adv_cfg.adversarial) {
        AdversarialTraining at;
        at.attack = attack;
        at.config = acfg;
        adv_cfg.adversarial = at;
    }
    adversarial_train(robust, ds, adv_cfg);

    ScenarioReport report;
    report.attack = attacks::attack_name(attack);
    report.attack_config = acfg;
    report.seed = train_cfg.seed;
    report.split_note = "train='" + train_cfg.train_split + "', test='" + test_split + "'";

    auto clean_cell = [&](const Model& m, const std::string& mode) {
        ConfusionMatrix cm = confusion(m, ds, test_split);
        return ScenarioCell{mode, "clean", accuracy(cm), macro_f1(cm)};
    };
    auto attacked_cell = [&](const Model& m, const std::string& mode) {
        AttackedEval ae = evaluate_under_attack(m, ds, test_split, attack, acfg,
                                                train_cfg.batch_size);
        return ScenarioCell{mode, "attacked", ae.accuracy, ae.macro_f1};
    };
    report.cells.push_back(clean_cell(regular, "regular"));
    report.cells.push_back(attacked_cell(regular, "regular"));
    report.cells.push_back(clean_cell(robust, "adversarial"));
    report.cells.push_back(attacked_cell(robust, "adversarial"));
    return report;
}

// ---------------------------------------------------------------------------
// Size / efficiency report
// ---------------------------------------------------------------------------

double truncate2(double percent) {
    return std::floor(percent * 100.0) / 100.0;
}

SizeEfficiencyReport size_efficiency_report(const std::vector<SizeEntry>& entries,
                                            const std::string& reference) {
    const SizeEntry* ref = nullptr;
    for (const auto& e : entries)
        if (e.name == reference) ref = &e;
    if (!ref) throw ConfigError("size report: reference '" + reference + "' not in entries");

    SizeEfficiencyReport rep;
    rep.reference = reference;
    for (const auto& e : entries) {
        SizeEfficiencyRow row;
        row.name = e.name;
        row.params = e.params;
        row.flops = e.flops;
        if (e.name != reference) {
            row.params_pct_of_reference = truncate2(100.0 * ref->params / e.params);
            row.flops_pct_of_reference = truncate2(100.0 * ref->flops / e.flops);
        } else {
            row.params_pct_of_reference = 100.0;
            row.flops_pct_of_reference = 100.0;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

std::string SizeEfficiencyReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows)
        rows_json.push_back(json{{"name", r.name},
                                 {"params", r.params},
                                 {"flops", r.flops},
                                 {"params_pct_of_reference", r.params_pct_of_reference},
                                 {"flops_pct_of_reference", r.flops_pct_of_reference}});
    json doc{{"kind", "size_efficiency_report"},
             {"reference", reference},
             {"note", "multiply-accumulate = 2 FLOPs; percentages are reference/member, "
                      "truncated to two decimals"},
             {"rows", rows_json}};
    return doc.dump(2) + "\n";
}

std::string SizeEfficiencyReport::to_text() const {
    std::ostringstream os;
    os << "model\tparams\tflops\t%params(" << reference << ")\t%flops(" << reference << ")\n";
    for (const auto& r : rows) {
        os << r.name << '\t' << r.params << '\t' << r.flops << '\t';
        os << r.params_pct_of_reference << '\t' << r.flops_pct_of_reference << '\n';
    }
    return os.str();
}

} // namespace advleaf
