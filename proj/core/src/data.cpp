#include "advleaf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "advleaf/io_util.hpp"
#include "advleaf/netpbm.hpp"

namespace fs = std::filesystem;

namespace advleaf {

const std::vector<int64_t>& Dataset::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw DataError("unknown split '" + name + "'");
    return it->second;
}

void Dataset::validate() const {
    const size_t px = static_cast<size_t>(channels) * height * width;
    for (const auto& s : samples) {
        if (s.pixels.size() != px)
            throw DataError("sample " + std::to_string(s.id) + " has " +
                            std::to_string(s.pixels.size()) + " bytes, expected " +
                            std::to_string(px));
        if (s.label < 0 || s.label >= class_count())
            throw DataError("sample " + std::to_string(s.id) + " label " +
                            std::to_string(s.label) + " outside class table");
    }
    std::set<int64_t> seen;
    for (const auto& [name, idx] : splits) {
        for (int64_t i : idx) {
            if (i < 0 || i >= static_cast<int64_t>(samples.size()))
                throw DataError("split '" + name + "' references sample index " +
                                std::to_string(i));
            if (!seen.insert(i).second)
                throw DataError("sample index " + std::to_string(i) +
                                " appears in more than one split");
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
    h = h - std::floor(h);
    const float c = v * s;
    const float hp = h * 6.0f;
    const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const float m = v - c;
    return {r + m, g + m, b + m};
}

uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

} // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
    if (cfg.class_count < 2) throw ConfigError("synthetic: class_count must be >= 2");
    if (cfg.image_size < 16) throw ConfigError("synthetic: image_size must be >= 16");
    std::vector<int> counts = cfg.samples_per_class;
    if (counts.empty()) counts.assign(static_cast<size_t>(cfg.class_count), cfg.samples_each);
    if (static_cast<int>(counts.size()) != cfg.class_count)
        throw ConfigError("synthetic: samples_per_class has " + std::to_string(counts.size()) +
                          " entries for " + std::to_string(cfg.class_count) + " classes");
    for (int c : counts)
        if (c < 1) throw ConfigError("synthetic: each class needs at least one sample");

    const int s = cfg.image_size;
    Dataset ds;
    ds.channels = 3;
    ds.height = s;
    ds.width = s;
    for (int c = 0; c < cfg.class_count; ++c) {
        std::string name = "class_";
        name += static_cast<char>('a' + c % 26);
        if (c >= 26) name += std::to_string(c / 26);
        ds.class_names.push_back(name);
    }

    Rng root(cfg.seed);
    uint64_t next_id = 0;
    for (int c = 0; c < cfg.class_count; ++c) {
        // class identity: hue around the wheel, orientation, shape and spots
        const float class_hue = static_cast<float>(c) / static_cast<float>(cfg.class_count);
        const float class_angle =
            static_cast<float>(c) * 3.14159265f / static_cast<float>(cfg.class_count);
        const float class_ratio = 0.42f + 0.08f * static_cast<float>(c % 3);
        const int class_spots = c % 4;

        for (int i = 0; i < counts[static_cast<size_t>(c)]; ++i) {
            Rng rng = root.substream((static_cast<uint64_t>(c) << 32) | next_id);
            const float cx = 0.5f * s + rng.uniform(-0.08f, 0.08f) * s;
            const float cy = 0.5f * s + rng.uniform(-0.08f, 0.08f) * s;
            const float major = 0.33f * s * (1.0f + rng.uniform(-0.18f, 0.18f));
            const float minor = major * class_ratio * (1.0f + rng.uniform(-0.12f, 0.12f));
            const float angle = class_angle + rng.uniform(-0.16f, 0.16f);
            const float hue = class_hue + rng.uniform(-0.035f, 0.035f);
            const float sat = rng.uniform(0.55f, 0.8f);
            const float val = rng.uniform(0.5f, 0.75f);
            const Rgb leaf = hsv_to_rgb(hue, sat, val);
            const float bg_level = rng.uniform(0.38f, 0.55f);
            const float ca = std::cos(angle), sa = std::sin(angle);

            struct Spot {
                float x, y, r;
            };
            std::vector<Spot> spots;
            for (int k = 0; k < class_spots; ++k) {
                const float along = rng.uniform(-0.55f, 0.55f);
                const float across = rng.uniform(-0.4f, 0.4f);
                spots.push_back({along * major, across * minor,
                                 s * rng.uniform(0.035f, 0.06f)});
            }

            Sample sample;
            sample.label = c;
            sample.id = next_id++;
            sample.pixels.resize(3 * static_cast<size_t>(s) * s);
            std::vector<float> noise(static_cast<size_t>(s) * s);
            for (auto& n : noise) n = rng.uniform(-0.09f, 0.09f);

            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const float dx = static_cast<float>(x) - cx;
                    const float dy = static_cast<float>(y) - cy;
                    // leaf frame
                    const float u = dx * ca + dy * sa;
                    const float v = -dx * sa + dy * ca;
                    const float e = (u * u) / (major * major) + (v * v) / (minor * minor);
                    // soft edge over roughly one pixel
                    const float edge = std::clamp((1.0f - e) * major * 0.5f + 0.5f, 0.0f, 1.0f);

                    const float n = noise[static_cast<size_t>(y) * s + x];
                    float r = bg_level + n;
                    float g = bg_level + n * 0.8f;
                    float b = bg_level * 0.9f + n;
                    if (edge > 0.0f) {
                        // midrib darkens a thin band along the major axis
                        const float rib =
                            std::fabs(v) < 0.05f * minor + 0.6f ? 0.82f : 1.0f;
                        float lr = leaf.r * rib, lg = leaf.g * rib, lb = leaf.b * rib;
                        for (const auto& sp : spots) {
                            const float d2 = (u - sp.x) * (u - sp.x) + (v - sp.y) * (v - sp.y);
                            if (d2 < sp.r * sp.r) {
                                lr = 0.32f;
                                lg = 0.22f;
                                lb = 0.10f;
                            }
                        }
                        r = r * (1.0f - edge) + (lr + n * 0.5f) * edge;
                        g = g * (1.0f - edge) + (lg + n * 0.5f) * edge;
                        b = b * (1.0f - edge) + (lb + n * 0.5f) * edge;
                    }
                    const size_t plane = static_cast<size_t>(s) * s;
                    const size_t at = static_cast<size_t>(y) * s + x;
                    sample.pixels[at] = quantize(r);
                    sample.pixels[plane + at] = quantize(g);
                    sample.pixels[2 * plane + at] = quantize(b);
                }
            }
            ds.samples.push_back(std::move(sample));
        }
    }
    ds.splits["train"] = std::vector<int64_t>(ds.samples.size());
    std::iota(ds.splits["train"].begin(), ds.splits["train"].end(), 0);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Image-folder ingestion
// ---------------------------------------------------------------------------

Dataset load_image_folder(const std::string& root_path) {
    if (!fs::is_directory(root_path))
        throw IoError("'" + root_path + "' is not a directory");

    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root_path))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.size() < 2)
        throw DataError("'" + root_path + "' needs at least 2 class subdirectories, found " +
                        std::to_string(class_dirs.size()));

    Dataset ds;
    ds.class_names = class_dirs;
    uint64_t next_id = 0;
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root_path) / class_dirs[c]))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            ds.warnings.push_back("class '" + class_dirs[c] + "' has no images");
        for (const auto& f : files) {
            PnmImage img = read_pnm(f);
            if (img.channels != 3)
                throw DataError("'" + f + "': expected P6 color image");
            if (ds.samples.empty() && ds.height == 0) {
                ds.channels = 3;
                ds.height = img.height;
                ds.width = img.width;
            } else if (img.height != ds.height || img.width != ds.width) {
                throw DataError("'" + f + "': size " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " differs from dataset " +
                                std::to_string(ds.width) + "x" + std::to_string(ds.height));
            }
            Sample s;
            s.label = static_cast<int>(c);
            s.id = next_id++;
            // interleaved RGB -> planar
            const size_t plane = static_cast<size_t>(img.width) * img.height;
            s.pixels.resize(3 * plane);
            for (size_t p = 0; p < plane; ++p) {
                s.pixels[p] = img.bytes[3 * p];
                s.pixels[plane + p] = img.bytes[3 * p + 1];
                s.pixels[2 * plane + p] = img.bytes[3 * p + 2];
            }
            ds.samples.push_back(std::move(s));
        }
    }
    if (ds.samples.empty()) throw DataError("'" + root_path + "' contains no images");
    ds.splits["train"] = std::vector<int64_t>(ds.samples.size());
    std::iota(ds.splits["train"].begin(), ds.splits["train"].end(), 0);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Splits and batches
// ---------------------------------------------------------------------------

Dataset split_dataset(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                      uint64_t seed, bool stratified) {
    const double total = train_frac + val_frac + test_frac;
    if (std::fabs(total - 1.0) > 1e-9)
        throw ConfigError("split fractions sum to " + std::to_string(total) + ", expected 1");
    if (train_frac < 0 || val_frac < 0 || test_frac < 0)
        throw ConfigError("split fractions must be non-negative");

    Dataset out = ds;
    out.splits.clear();
    auto& train = out.splits["train"];
    auto& val = out.splits["val"];
    auto& test = out.splits["test"];

    auto assign = [&](std::vector<int64_t> pool) {
        // largest-remainder apportionment keeps the split sizes exact
        const auto n = static_cast<int64_t>(pool.size());
        auto n_train = static_cast<int64_t>(std::floor(train_frac * static_cast<double>(n)));
        auto n_val = static_cast<int64_t>(std::floor(val_frac * static_cast<double>(n)));
        auto n_test = static_cast<int64_t>(std::floor(test_frac * static_cast<double>(n)));
        int64_t rest = n - n_train - n_val - n_test;
        const double rema[3] = {train_frac * n - std::floor(train_frac * n),
                                val_frac * n - std::floor(val_frac * n),
                                test_frac * n - std::floor(test_frac * n)};
        int order[3] = {0, 1, 2};
        std::stable_sort(order, order + 3, [&](int a, int b) { return rema[a] > rema[b]; });
        for (int k = 0; rest > 0; ++k, --rest) {
            if (order[k % 3] == 0) ++n_train;
            else if (order[k % 3] == 1) ++n_val;
            else ++n_test;
        }
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_train) train.push_back(pool[static_cast<size_t>(i)]);
            else if (i < n_train + n_val) val.push_back(pool[static_cast<size_t>(i)]);
            else test.push_back(pool[static_cast<size_t>(i)]);
        }
    };

    Rng rng(seed);
    if (stratified) {
        for (int c = 0; c < ds.class_count(); ++c) {
            std::vector<int64_t> pool;
            for (int64_t i = 0; i < static_cast<int64_t>(ds.samples.size()); ++i)
                if (ds.samples[static_cast<size_t>(i)].label == c) pool.push_back(i);
            std::shuffle(pool.begin(), pool.end(), rng.engine());
            assign(std::move(pool));
        }
    } else {
        std::vector<int64_t> pool(ds.samples.size());
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng.engine());
        assign(std::move(pool));
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    std::sort(test.begin(), test.end());
    out.validate();
    return out;
}

Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty index list");
    const int n = static_cast<int>(indices.size());
    Batch b;
    b.x = Tensor::zeros({n, ds.channels, ds.height, ds.width});
    b.y.reserve(indices.size());
    b.ids.reserve(indices.size());
    float* px = b.x.data().data();
    const size_t per = static_cast<size_t>(ds.channels) * ds.height * ds.width;
    for (int i = 0; i < n; ++i) {
        const auto& s = ds.samples[static_cast<size_t>(indices[static_cast<size_t>(i)])];
        for (size_t p = 0; p < per; ++p)
            px[static_cast<size_t>(i) * per + p] =
                static_cast<float>(s.pixels[p]) * (1.0f / 255.0f);
        b.y.push_back(s.label);
        b.ids.push_back(s.id);
    }
    return b;
}

BatchStream::BatchStream(const Dataset& ds, const std::string& split, int batch_size,
                         uint64_t shuffle_seed, bool shuffle)
    : ds_(ds), order_(ds.split(split)), batch_size_(batch_size) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (shuffle) {
        Rng rng(shuffle_seed);
        std::shuffle(order_.begin(), order_.end(), rng.engine());
    }
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(batch_size_));
    std::vector<int64_t> idx(order_.begin() + static_cast<ptrdiff_t>(cursor_),
                             order_.begin() + static_cast<ptrdiff_t>(end));
    cursor_ = end;
    return make_batch(ds_, idx);
}

int64_t BatchStream::batch_count() const {
    return static_cast<int64_t>((order_.size() + static_cast<size_t>(batch_size_) - 1) /
                                static_cast<size_t>(batch_size_));
}

void BatchStream::reset() { cursor_ = 0; }

// ---------------------------------------------------------------------------
// Packed container "ALDS"
// ---------------------------------------------------------------------------

namespace {
constexpr uint32_t kPackedVersion = 1;
}

void save_packed(const Dataset& ds, const std::string& path) {
    BinaryWriter w(path);
    w.magic("ALDS");
    w.u32(kPackedVersion);
    w.u64(ds.samples.size());
    w.u32(static_cast<uint32_t>(ds.channels));
    w.u32(static_cast<uint32_t>(ds.height));
    w.u32(static_cast<uint32_t>(ds.width));
    w.u32(static_cast<uint32_t>(ds.class_names.size()));
    for (const auto& n : ds.class_names) w.str(n);
    w.u32(static_cast<uint32_t>(ds.splits.size()));
    for (const auto& [name, idx] : ds.splits) {
        w.str(name);
        w.u64(idx.size());
        for (int64_t i : idx) w.u64(static_cast<uint64_t>(i));
    }
    for (const auto& s : ds.samples) {
        w.u64(s.id);
        w.u32(static_cast<uint32_t>(s.label));
        w.bytes(s.pixels.data(), s.pixels.size());
    }
    w.crc();
    w.close();
}

Dataset load_packed(const std::string& path) {
    BinaryReader r(path);
    r.check_trailing_crc("packed dataset");
    r.expect_magic("ALDS", "packed dataset");
    const uint32_t version = r.u32();
    if (version != kPackedVersion)
        throw FormatError("'" + path + "': unsupported dataset version " +
                          std::to_string(version));
    Dataset ds;
    const uint64_t n = r.u64();
    ds.channels = static_cast<int>(r.u32());
    ds.height = static_cast<int>(r.u32());
    ds.width = static_cast<int>(r.u32());
    const uint32_t n_classes = r.u32();
    for (uint32_t i = 0; i < n_classes; ++i) ds.class_names.push_back(r.str());
    const uint32_t n_splits = r.u32();
    for (uint32_t i = 0; i < n_splits; ++i) {
        const std::string name = r.str();
        const uint64_t len = r.u64();
        std::vector<int64_t> idx(len);
        for (uint64_t j = 0; j < len; ++j) idx[j] = static_cast<int64_t>(r.u64());
        ds.splits[name] = std::move(idx);
    }
    const size_t per = static_cast<size_t>(ds.channels) * ds.height * ds.width;
    ds.samples.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        auto& s = ds.samples[i];
        s.id = r.u64();
        s.label = static_cast<int>(r.u32());
        s.pixels.resize(per);
        r.bytes(s.pixels.data(), per);
    }
    ds.validate();
    return ds;
}

} // namespace advleaf
