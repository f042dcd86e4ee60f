#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advleaf/tensor.hpp"

namespace advleaf {

/// One image sample: planar u8 pixels [C,H,W], class label, stable id.
struct Sample {
    std::vector<uint8_t> pixels;
    int label = 0;
    uint64_t id = 0;
};

/// Immutable labelled image collection with named splits. All samples share
/// one (C,H,W); pixel domain is u8, scaled to [0,1] floats by batching.
class Dataset {
public:
    int channels = 0, height = 0, width = 0;
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
    std::map<std::string, std::vector<int64_t>> splits;
    std::vector<std::string> warnings; ///< non-fatal load diagnostics

    int class_count() const { return static_cast<int>(class_names.size()); }

    const std::vector<int64_t>& split(const std::string& name) const;
    void validate() const; ///< invariants: label range, shapes, split disjointness
};

struct SynthConfig {
    int class_count = 8;
    std::vector<int> samples_per_class = {}; ///< broadcast of `samples_each` if empty
    int samples_each = 150;
    int image_size = 32;
    uint64_t seed = 0;
};

/// Procedural leaf-like dataset: per class an ellipse with class-specific
/// rotation, hue and spot pattern over a noisy background. Deterministic per
/// seed; designed so a small CNN separates the classes.
Dataset generate_synthetic(const SynthConfig& cfg);

/// Ingest a directory tree with one subdirectory per class containing binary
/// PPM (P6) images. Class order is lexicographic; ids follow (class, filename)
/// order. Empty class directories are kept and recorded as warnings.
Dataset load_image_folder(const std::string& root_path);

/// Assign train/val/test splits. Fractions must sum to 1 (+-1e-9); stratified
/// mode preserves per-class ratios within one sample.
Dataset split_dataset(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                      uint64_t seed, bool stratified);

struct Batch {
    Tensor x;                   ///< [B,C,H,W] float32 in [0,1]
    std::vector<int> y;
    std::vector<uint64_t> ids;
};

/// Deterministic batch iterator over one split: u8 pixels scaled by 1/255,
/// order shuffled by `shuffle_seed`, final partial batch included.
class BatchStream {
public:
    BatchStream(const Dataset& ds, const std::string& split, int batch_size,
                uint64_t shuffle_seed, bool shuffle = true);

    std::optional<Batch> next();
    int64_t batch_count() const;
    void reset();

private:
    const Dataset& ds_;
    std::vector<int64_t> order_;
    int batch_size_;
    size_t cursor_ = 0;
};

/// Materialise one batch from explicit sample indices.
Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices);

/// Packed container ("ALDS"): header, class table, split table, sample
/// records, trailing CRC32. Bit-exact round trip.
void save_packed(const Dataset& ds, const std::string& path);
Dataset load_packed(const std::string& path);

} // namespace advleaf
