#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "advleaf/data.hpp"
#include "advleaf/netpbm.hpp"
#include "test_util.hpp"

using namespace advleaf;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    auto dir = fs::temp_directory_path() / "advleaf_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> checker_ppm_bytes(int w, int h, uint8_t a, uint8_t b) {
    std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
    for (int i = 0; i < w * h; ++i) {
        const uint8_t v = (i % 2 == 0) ? a : b;
        rgb[static_cast<size_t>(i) * 3] = v;
        rgb[static_cast<size_t>(i) * 3 + 1] = static_cast<uint8_t>(255 - v);
        rgb[static_cast<size_t>(i) * 3 + 2] = v;
    }
    return rgb;
}

} // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("pnm round trip preserves bytes exactly") {
    const auto dir = temp_dir("pnm");
    const auto rgb = checker_ppm_bytes(5, 4, 10, 240);
    write_ppm((dir / "img.ppm").string(), 5, 4, rgb, "check");
    PnmImage back = read_pnm((dir / "img.ppm").string());
    CHECK(back.width == 5);
    CHECK(back.height == 4);
    CHECK(back.channels == 3);
    CHECK(back.bytes == rgb);

    std::vector<uint8_t> gray(12, 100);
    write_pgm((dir / "img.pgm").string(), 4, 3, gray);
    PnmImage g = read_pnm((dir / "img.pgm").string());
    CHECK(g.channels == 1);
    CHECK(g.bytes == gray);
}

TEST_CASE("pnm parser reports the byte offset of malformed headers") {
    const auto dir = temp_dir("pnm_bad");
    write_file(dir / "bad1.ppm", "P7\n2 2\n255\n" + std::string(12, 'x'));
    CHECK_THROWS_AS(read_pnm((dir / "bad1.ppm").string()), FormatError);

    write_file(dir / "bad2.ppm", "P6\n2 banana\n255\n" + std::string(12, 'x'));
    try {
        read_pnm((dir / "bad2.ppm").string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }

    // truncated raster
    write_file(dir / "bad3.ppm", "P6\n2 2\n255\n" + std::string(5, 'x'));
    CHECK_THROWS_AS(read_pnm((dir / "bad3.ppm").string()), FormatError);

    // wrong maxval
    write_file(dir / "bad4.ppm", "P6\n2 2\n65535\n" + std::string(24, 'x'));
    CHECK_THROWS_AS(read_pnm((dir / "bad4.ppm").string()), FormatError);
}

TEST_CASE("pnm parser accepts comments in headers") {
    const auto dir = temp_dir("pnm_comment");
    write_file(dir / "c.ppm", "P6\n# a comment\n2 1 # tail\n255\n" + std::string(6, 'z'));
    PnmImage img = read_pnm((dir / "c.ppm").string());
    CHECK(img.width == 2);
    CHECK(img.height == 1);
}

// ---------------------------------------------------------------------------

TEST_CASE("image folder: two classes, one image each") {
    const auto dir = temp_dir("folder");
    fs::create_directories(dir / "beta");
    fs::create_directories(dir / "alpha");
    write_ppm((dir / "alpha" / "a.ppm").string(), 4, 4, checker_ppm_bytes(4, 4, 0, 255));
    write_ppm((dir / "beta" / "b.ppm").string(), 4, 4, checker_ppm_bytes(4, 4, 30, 200));

    Dataset ds = load_image_folder(dir.string());
    CHECK(ds.samples.size() == 2);
    CHECK(ds.class_names == std::vector<std::string>{"alpha", "beta"});
    CHECK(ds.samples[0].label == 0);
    CHECK(ds.samples[1].label == 1);
    CHECK(ds.channels == 3);
    CHECK(ds.height == 4);
}

TEST_CASE("image folder: class order is lexicographic over 3 classes") {
    const auto dir = temp_dir("folder3");
    for (const char* c : {"pear", "apple", "mango"}) {
        fs::create_directories(dir / c);
        for (int i = 0; i < 4; ++i)
            write_ppm((dir / c / ("img" + std::to_string(i) + ".ppm")).string(), 3, 3,
                      checker_ppm_bytes(3, 3, static_cast<uint8_t>(i * 10), 99));
    }
    Dataset ds = load_image_folder(dir.string());
    CHECK(ds.samples.size() == 12);
    CHECK(ds.class_names == std::vector<std::string>{"apple", "mango", "pear"});
}

TEST_CASE("image folder: mixed shapes rejected naming the offender") {
    const auto dir = temp_dir("folder_mixed");
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    write_ppm((dir / "a" / "x.ppm").string(), 4, 4, checker_ppm_bytes(4, 4, 1, 2));
    write_ppm((dir / "b" / "y.ppm").string(), 5, 4, checker_ppm_bytes(5, 4, 1, 2));
    try {
        load_image_folder(dir.string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("y.ppm") != std::string::npos);
    }
}

TEST_CASE("image folder: empty class kept with a warning") {
    const auto dir = temp_dir("folder_empty");
    fs::create_directories(dir / "full");
    fs::create_directories(dir / "void");
    write_ppm((dir / "full" / "x.ppm").string(), 4, 4, checker_ppm_bytes(4, 4, 1, 2));
    write_ppm((dir / "full" / "y.ppm").string(), 4, 4, checker_ppm_bytes(4, 4, 3, 4));
    Dataset ds = load_image_folder(dir.string());
    CHECK(ds.class_names.size() == 2);
    CHECK(ds.samples.size() == 2);
    REQUIRE(ds.warnings.size() == 1);
    CHECK(ds.warnings[0].find("void") != std::string::npos);
}

// ---------------------------------------------------------------------------

TEST_CASE("synthetic: deterministic per seed") {
    SynthConfig cfg;
    cfg.class_count = 3;
    cfg.samples_each = 5;
    cfg.image_size = 16;
    cfg.seed = 77;
    Dataset a = generate_synthetic(cfg);
    Dataset b = generate_synthetic(cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i)
        CHECK(a.samples[i].pixels == b.samples[i].pixels);

    cfg.seed = 78;
    Dataset c = generate_synthetic(cfg);
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size(); ++i)
        any_diff = any_diff || a.samples[i].pixels != c.samples[i].pixels;
    CHECK(any_diff);
}

TEST_CASE("synthetic: per-class sample counts honored exactly") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_per_class = {100, 20};
    cfg.image_size = 16;
    Dataset ds = generate_synthetic(cfg);
    int c0 = 0, c1 = 0;
    for (const auto& s : ds.samples) (s.label == 0 ? c0 : c1)++;
    CHECK(c0 == 100);
    CHECK(c1 == 20);
}

TEST_CASE("synthetic: invalid configs rejected") {
    SynthConfig cfg;
    cfg.class_count = 1;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg.class_count = 2;
    cfg.image_size = 8;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg.image_size = 16;
    cfg.samples_per_class = {5};
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

// ---------------------------------------------------------------------------

TEST_CASE("split: everything into train with fractions (1,0,0)") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_each = 10;
    cfg.image_size = 16;
    Dataset ds = split_dataset(generate_synthetic(cfg), 1.0, 0.0, 0.0, 1, true);
    CHECK(ds.split("train").size() == 20);
    CHECK(ds.split("val").empty());
    CHECK(ds.split("test").empty());
}

TEST_CASE("split: stratified 80/10/10 on 10-per-class gives 8/1/1 per class") {
    SynthConfig cfg;
    cfg.class_count = 3;
    cfg.samples_each = 10;
    cfg.image_size = 16;
    Dataset ds = split_dataset(generate_synthetic(cfg), 0.8, 0.1, 0.1, 3, true);
    for (const char* split : {"train", "val", "test"}) {
        std::vector<int> per_class(3, 0);
        for (int64_t i : ds.split(split)) ++per_class[static_cast<size_t>(ds.samples[static_cast<size_t>(i)].label)];
        const int want = split == std::string("train") ? 8 : 1;
        for (int c = 0; c < 3; ++c) CHECK(per_class[static_cast<size_t>(c)] == want);
    }
}

TEST_CASE("split: deterministic per seed, disjoint and exhaustive") {
    SynthConfig cfg;
    cfg.class_count = 4;
    cfg.samples_each = 13; // awkward count
    cfg.image_size = 16;
    Dataset base = generate_synthetic(cfg);
    Dataset a = split_dataset(base, 0.7, 0.15, 0.15, 9, true);
    Dataset b = split_dataset(base, 0.7, 0.15, 0.15, 9, true);
    CHECK(a.split("train") == b.split("train"));
    CHECK(a.split("test") == b.split("test"));

    // validate() checks disjointness; exhaustiveness checked here
    size_t total = a.split("train").size() + a.split("val").size() + a.split("test").size();
    CHECK(total == base.samples.size());
}

TEST_CASE("split: bad fractions rejected") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_each = 4;
    cfg.image_size = 16;
    Dataset ds = generate_synthetic(cfg);
    CHECK_THROWS_AS(split_dataset(ds, 0.5, 0.2, 0.2, 1, true), ConfigError);
}

// ---------------------------------------------------------------------------

TEST_CASE("batches: pixel scaling maps 0->0.0 and 255->1.0") {
    Dataset ds;
    ds.channels = 1;
    ds.height = 1;
    ds.width = 2;
    ds.class_names = {"a", "b"};
    ds.samples.push_back({{0, 255}, 0, 0});
    ds.splits["train"] = {0};
    Batch b = make_batch(ds, {0});
    CHECK(b.x.data()[0] == 0.0f);
    CHECK(b.x.data()[1] == 1.0f);
}

TEST_CASE("batches: sizes 4,4,2 for 10 samples at batch 4") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_each = 5;
    cfg.image_size = 16;
    Dataset ds = generate_synthetic(cfg);
    BatchStream stream(ds, "train", 4, 123);
    std::vector<int> sizes;
    while (auto b = stream.next()) sizes.push_back(b->x.dim(0));
    CHECK(sizes == std::vector<int>{4, 4, 2});
    CHECK(stream.batch_count() == 3);
}

TEST_CASE("batches: same shuffle seed gives the same order") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_each = 16;
    cfg.image_size = 16;
    Dataset ds = generate_synthetic(cfg);
    auto collect = [&](uint64_t seed) {
        BatchStream s(ds, "train", 8, seed);
        std::vector<uint64_t> ids;
        while (auto b = s.next()) ids.insert(ids.end(), b->ids.begin(), b->ids.end());
        return ids;
    };
    CHECK(collect(5) == collect(5));
    CHECK(collect(5) != collect(6));
    CHECK_THROWS_AS(BatchStream(ds, "nope", 4, 1), DataError);
}

TEST_CASE("normalization is bijective on the u8 grid") {
    Dataset ds;
    ds.channels = 1;
    ds.height = 16;
    ds.width = 16;
    ds.class_names = {"a", "b"};
    Sample s;
    for (int i = 0; i < 256; ++i) s.pixels.push_back(static_cast<uint8_t>(i));
    s.label = 0;
    s.id = 0;
    ds.samples.push_back(s);
    ds.splits["train"] = {0};
    Batch b = make_batch(ds, {0});
    for (int i = 0; i < 256; ++i)
        CHECK(std::lround(b.x.data()[static_cast<size_t>(i)] * 255.0f) == i);
}

// ---------------------------------------------------------------------------

TEST_CASE("packed dataset round trip is deep-equal") {
    SynthConfig cfg;
    cfg.class_count = 3;
    cfg.samples_per_class = {4, 2, 3};
    cfg.image_size = 16;
    cfg.seed = 5;
    Dataset ds = split_dataset(generate_synthetic(cfg), 0.8, 0.1, 0.1, 2, false);

    const auto dir = temp_dir("packed");
    const std::string path = (dir / "ds.alds").string();
    save_packed(ds, path);
    Dataset back = load_packed(path);

    CHECK(back.channels == ds.channels);
    CHECK(back.height == ds.height);
    CHECK(back.width == ds.width);
    CHECK(back.class_names == ds.class_names);
    CHECK(back.splits == ds.splits);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].id == ds.samples[i].id);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].pixels == ds.samples[i].pixels);
    }

    // byte-identical re-serialization
    const std::string path2 = (dir / "ds2.alds").string();
    save_packed(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("packed dataset: truncated or corrupted files rejected") {
    SynthConfig cfg;
    cfg.class_count = 2;
    cfg.samples_each = 3;
    cfg.image_size = 16;
    Dataset ds = generate_synthetic(cfg);
    const auto dir = temp_dir("packed_bad");
    const std::string path = (dir / "ds.alds").string();
    save_packed(ds, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    write_file(dir / "trunc.alds", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_packed((dir / "trunc.alds").string()), FormatError);

    std::string flipped = bytes;
    flipped[flipped.size() / 2] = static_cast<char>(flipped[flipped.size() / 2] ^ 0x40);
    write_file(dir / "flip.alds", flipped);
    CHECK_THROWS_AS(load_packed((dir / "flip.alds").string()), FormatError);

    std::string badmagic = bytes;
    badmagic[0] = 'X';
    write_file(dir / "magic.alds", badmagic);
    CHECK_THROWS_AS(load_packed((dir / "magic.alds").string()), FormatError);
}

TEST_CASE("packed fixture with known ids loads as written") {
    Dataset ds;
    ds.channels = 1;
    ds.height = 16;
    ds.width = 16;
    ds.class_names = {"x", "y"};
    for (uint64_t i = 0; i < 5; ++i) {
        Sample s;
        s.pixels.assign(256, static_cast<uint8_t>(i * 11));
        s.label = static_cast<int>(i % 2);
        s.id = 100 + i * 7; // non-contiguous ids
        ds.samples.push_back(s);
    }
    ds.splits["train"] = {0, 1, 2, 3, 4};
    const auto dir = temp_dir("packed_fixture");
    const std::string path = (dir / "fix.alds").string();
    save_packed(ds, path);
    Dataset back = load_packed(path);
    REQUIRE(back.samples.size() == 5);
    for (uint64_t i = 0; i < 5; ++i) CHECK(back.samples[i].id == 100 + i * 7);
}

TEST_SUITE_END();
