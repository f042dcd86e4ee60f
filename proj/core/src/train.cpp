#include "advleaf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "advleaf/io_util.hpp"

namespace advleaf {

namespace {

constexpr float kBeta1 = 0.9f;
constexpr float kBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;

class Adam {
public:
    Adam(Model& model, float lr0, int64_t total_steps)
        : model_(model), lr0_(lr0), total_steps_(total_steps) {
        for (const auto& p : model.params()) {
            m_.emplace_back(p.size(), 0.0f);
            v_.emplace_back(p.size(), 0.0f);
        }
    }

    float lr() const {
        return lr0_ * (1.0f - static_cast<float>(step_) / static_cast<float>(total_steps_));
    }

    void step() {
        const float lr_t = lr();
        ++step_;
        const double t = static_cast<double>(step_);
        const float bc1 = static_cast<float>(1.0 - std::pow(kBeta1, t));
        const float bc2 = static_cast<float>(1.0 - std::pow(kBeta2, t));
        auto& params = model_.params();
        for (size_t i = 0; i < params.size(); ++i) {
            auto g = params[i].grad();
            auto val = params[i].data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < m.size(); ++j) {
                m[j] = kBeta1 * m[j] + (1.0f - kBeta1) * g[j];
                v[j] = kBeta2 * v[j] + (1.0f - kBeta2) * g[j] * g[j];
                const float mhat = m[j] / bc1;
                const float vhat = v[j] / bc2;
                val[j] -= lr_t * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        }
    }

private:
    Model& model_;
    float lr0_;
    int64_t total_steps_;
    int64_t step_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

TrainHistory run_training(Model& model, const Dataset& ds, const TrainConfig& cfg,
                          const std::optional<AdversarialTraining>& adv) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (ds.class_count() != model.class_count())
        throw ConfigError("train: dataset has " + std::to_string(ds.class_count()) +
                          " classes, model expects " + std::to_string(model.class_count()));
    const auto& train_idx = ds.split(cfg.train_split);
    if (train_idx.empty()) throw DataError("train: split '" + cfg.train_split + "' is empty");

    const auto t0 = std::chrono::steady_clock::now();
    const int64_t batches_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + cfg.batch_size - 1) / cfg.batch_size;
    Adam opt(model, cfg.lr0, static_cast<int64_t>(cfg.epochs) * batches_per_epoch);

    model.reseed_dropout(cfg.seed ^ 0xD20);
    Rng shuffle_root(cfg.seed);

    TrainHistory history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchStream stream(ds, cfg.train_split, cfg.batch_size,
                           shuffle_root.substream(static_cast<uint64_t>(epoch)).seed());
        EpochStats stats;
        stats.lr = opt.lr();
        double loss_sum = 0.0;
        int64_t seen = 0, correct = 0;
        int64_t batch_no = 0;
        model.set_training(true);
        while (auto batch = stream.next()) {
            Tensor x = batch->x;
            std::vector<int> y = batch->y;
            if (adv) {
                model.set_training(false);
                attacks::AttackConfig acfg = adv->config;
                // decorrelate attack noise across steps while staying seeded
                acfg.seed = Rng(cfg.seed ^ 0xA77ACC).substream(
                    static_cast<uint64_t>(epoch) * 1000003ull +
                    static_cast<uint64_t>(batch_no)).seed();
                auto adv_batch = attacks::run_attack(adv->attack, model, x, y, acfg);
                model.set_training(true);
                if (adv->mix == MixMode::Replace) {
                    x = adv_batch.x_adv;
                } else {
                    const int n = x.dim(0);
                    auto joined = Tensor::zeros({2 * n, x.dim(1), x.dim(2), x.dim(3)});
                    const int64_t per = x.size();
                    std::copy_n(x.data().data(), per, joined.data().data());
                    std::copy_n(adv_batch.x_adv.data().data(), per,
                                joined.data().data() + per);
                    x = std::move(joined);
                    std::vector<int> y2 = y;
                    y2.insert(y2.end(), y.begin(), y.end());
                    y = std::move(y2);
                }
            }

            model.zero_grads();
            Tape tape;
            Tensor logits = model.forward(x);
            Tensor loss = cross_entropy(logits, y);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericError("training loss is not finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no));
            backward(tape, loss);
            tape.clear();
            opt.step();

            const int n_rows = logits.dim(0);
            const int k = logits.dim(1);
            const float* lp = logits.data().data();
            for (int r = 0; r < n_rows; ++r)
                if (argmax_row(lp + static_cast<int64_t>(r) * k, k) ==
                    y[static_cast<size_t>(r)])
                    ++correct;
            loss_sum += loss_value * n_rows;
            seen += n_rows;
            ++batch_no;
        }
        model.set_training(false);
        stats.loss = loss_sum / static_cast<double>(seen);
        stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        history.epochs.push_back(stats);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

} // namespace

TrainHistory train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    return run_training(model, ds, cfg, cfg.adversarial);
}

TrainHistory adversarial_train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    if (!cfg.adversarial)
        throw ConfigError("adversarial_train: cfg.adversarial is not set");
    return run_training(model, ds, cfg, cfg.adversarial);
}

// ---------------------------------------------------------------------------
// Knowledge distillation
// ---------------------------------------------------------------------------

void KDConfig::validate() const {
    if (alpha < 0.0f || alpha > 1.0f)
        throw ConfigError("kd: alpha must be in [0,1], got " + std::to_string(alpha));
    if (temperature <= 0.0f)
        throw ConfigError("kd: temperature must be > 0, got " + std::to_string(temperature));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
               const std::vector<int>& labels, const KDConfig& kd) {
    kd.validate();
    if (student_logits.shape() != teacher_logits.shape())
        throw ShapeError("kd_loss: student " + shape_str(student_logits.shape()) +
                         " vs teacher " + shape_str(teacher_logits.shape()));
    const float t = kd.temperature;
    Tensor ce = cross_entropy(student_logits, labels);
    // the teacher side is a constant: detach so no rule is recorded for it
    Tensor kl = kl_divergence(scale(teacher_logits.detach(), 1.0f / t),
                              scale(student_logits, 1.0f / t));
    return add(scale(ce, kd.alpha), scale(kl, (1.0f - kd.alpha) * t * t));
}

Tensor ensemble_logits(const std::vector<const Model*>& teachers, const Tensor& x) {
    if (teachers.empty()) throw ConfigError("ensemble_logits: no teachers");
    const int k = teachers.front()->class_count();
    for (const Model* m : teachers)
        if (m->class_count() != k)
            throw ConfigError("ensemble_logits: class_count mismatch (" +
                              std::to_string(m->class_count()) + " vs " + std::to_string(k) +
                              ")");
    const int n = x.dim(0);
    std::vector<double> mean(static_cast<size_t>(n) * k, 0.0);
    for (const Model* m : teachers) {
        Tensor p = softmax(m->forward(x, {.training = false}));
        const float* pp = p.data().data();
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += pp[i];
    }
    const double inv = 1.0 / static_cast<double>(teachers.size());
    auto out = Tensor::zeros({n, k});
    float* po = out.data().data();
    for (size_t i = 0; i < mean.size(); ++i)
        po[i] = static_cast<float>(std::log(mean[i] * inv));
    return out;
}

std::unordered_map<uint64_t, size_t> LogitTable::index() const {
    std::unordered_map<uint64_t, size_t> map;
    map.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) map[rows[i].first] = i;
    return map;
}

// "ALTL": magic, version u32, N u64, K u32, N x (sample_id u64, K f32), CRC32.
namespace {
constexpr uint32_t kLogitVersion = 1;
}

void export_teacher_logits(const LogitTable& table, const std::string& path) {
    BinaryWriter w(path);
    w.magic("ALTL");
    w.u32(kLogitVersion);
    w.u64(table.rows.size());
    w.u32(table.class_count);
    for (const auto& [id, logits] : table.rows) {
        if (logits.size() != table.class_count)
            throw ShapeError("logit table row " + std::to_string(id) + " has " +
                             std::to_string(logits.size()) + " values, expected " +
                             std::to_string(table.class_count));
        w.u64(id);
        w.f32_array(logits.data(), logits.size());
    }
    w.crc();
    w.close();
}

LogitTable import_teacher_logits(const std::string& path) {
    BinaryReader r(path);
    r.check_trailing_crc("teacher logits");
    r.expect_magic("ALTL", "teacher logits");
    const uint32_t version = r.u32();
    if (version != kLogitVersion)
        throw FormatError("'" + path + "': unsupported logit file version " +
                          std::to_string(version));
    LogitTable t;
    const uint64_t n = r.u64();
    t.class_count = r.u32();
    if (t.class_count == 0)
        throw FormatError("'" + path + "': zero class count");
    t.rows.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        const uint64_t id = r.u64();
        std::vector<float> logits(t.class_count);
        r.f32_array(logits.data(), logits.size());
        t.rows.emplace_back(id, std::move(logits));
    }
    return t;
}

LogitTable compute_teacher_logits(const std::vector<const Model*>& teachers,
                                  const Dataset& ds) {
    if (teachers.empty()) throw ConfigError("compute_teacher_logits: no teachers");
    LogitTable table;
    table.class_count = static_cast<uint32_t>(teachers.front()->class_count());
    std::vector<int64_t> all(ds.samples.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    const int chunk = 64;
    for (size_t at = 0; at < all.size(); at += chunk) {
        std::vector<int64_t> idx(all.begin() + static_cast<ptrdiff_t>(at),
                                 all.begin() + static_cast<ptrdiff_t>(
                                                   std::min(all.size(), at + chunk)));
        Batch b = make_batch(ds, idx);
        Tensor logits = teachers.size() == 1
                            ? teachers.front()->forward(b.x, {.training = false})
                            : ensemble_logits(teachers, b.x);
        const float* lp = logits.data().data();
        const int k = logits.dim(1);
        for (size_t r = 0; r < idx.size(); ++r)
            table.rows.emplace_back(
                b.ids[r], std::vector<float>(lp + r * k, lp + (r + 1) * k));
    }
    return table;
}

TrainHistory distill(Model& student, const TeacherSource& teachers, const Dataset& ds,
                     const TrainConfig& cfg, const KDConfig& kd) {
    kd.validate();
    if (cfg.epochs < 1) throw ConfigError("distill: epochs must be >= 1");
    const auto& train_idx = ds.split(cfg.train_split);
    if (train_idx.empty()) throw DataError("distill: split '" + cfg.train_split + "' is empty");

    // teacher logits are frozen, so compute once and key by sample id
    LogitTable table;
    if (std::holds_alternative<LogitTable>(teachers)) {
        table = std::get<LogitTable>(teachers);
        if (static_cast<int>(table.class_count) != student.class_count())
            throw ConfigError("distill: logit table has " + std::to_string(table.class_count) +
                              " classes, student expects " +
                              std::to_string(student.class_count()));
    } else {
        table = compute_teacher_logits(std::get<std::vector<const Model*>>(teachers), ds);
    }
    const auto lookup = table.index();
    {
        std::string missing;
        int missing_count = 0;
        for (int64_t i : train_idx) {
            const uint64_t id = ds.samples[static_cast<size_t>(i)].id;
            if (!lookup.contains(id)) {
                if (missing_count < 16) missing += (missing.empty() ? "" : ", ") + std::to_string(id);
                ++missing_count;
            }
        }
        if (missing_count > 0)
            throw DataError("distill: teacher logits missing for " +
                            std::to_string(missing_count) + " sample ids: " + missing +
                            (missing_count > 16 ? ", ..." : ""));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const int64_t batches_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + cfg.batch_size - 1) / cfg.batch_size;
    Adam opt(student, cfg.lr0, static_cast<int64_t>(cfg.epochs) * batches_per_epoch);
    student.reseed_dropout(cfg.seed ^ 0xD20);
    Rng shuffle_root(cfg.seed);

    const int k = student.class_count();
    TrainHistory history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchStream stream(ds, cfg.train_split, cfg.batch_size,
                           shuffle_root.substream(static_cast<uint64_t>(epoch)).seed());
        EpochStats stats;
        stats.lr = opt.lr();
        double loss_sum = 0.0;
        int64_t seen = 0, correct = 0, batch_no = 0;
        student.set_training(true);
        while (auto batch = stream.next()) {
            const int n = batch->x.dim(0);
            Tensor teacher = Tensor::zeros({n, k});
            float* tp = teacher.data().data();
            for (int r = 0; r < n; ++r) {
                const auto& row = table.rows[lookup.at(batch->ids[static_cast<size_t>(r)])];
                std::copy(row.second.begin(), row.second.end(),
                          tp + static_cast<int64_t>(r) * k);
            }

            student.zero_grads();
            Tape tape;
            Tensor logits = student.forward(batch->x);
            Tensor loss = kd_loss(logits, teacher, batch->y, kd);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericError("distillation loss is not finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no));
            backward(tape, loss);
            tape.clear();
            opt.step();

            const float* lp = logits.data().data();
            for (int r = 0; r < n; ++r)
                if (argmax_row(lp + static_cast<int64_t>(r) * k, k) ==
                    batch->y[static_cast<size_t>(r)])
                    ++correct;
            loss_sum += loss_value * n;
            seen += n;
            ++batch_no;
        }
        student.set_training(false);
        stats.loss = loss_sum / static_cast<double>(seen);
        stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        history.epochs.push_back(stats);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

} // namespace advleaf
