#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "advleaf/errors.hpp"

namespace advleaf {

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

/// Little-endian binary writer that tracks a running CRC32 of everything
/// written. Integer layouts are fixed regardless of host (asserted LE).
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);
    ~BinaryWriter();

    void bytes(const void* p, size_t n);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f32(float v);
    void f32_array(const float* p, size_t n);
    void str(const std::string& s); ///< u32 length prefix + raw bytes
    void magic(const char m[4]);
    void crc(); ///< append the running CRC32 as u32 (not folded into itself)
    void close();

    uint32_t running_crc() const { return crc_; }

private:
    std::ofstream out_;
    std::string path_;
    uint32_t crc_ = 0;
};

/// Whole-file little-endian reader with a cursor; all errors carry the byte
/// offset at which parsing failed.
class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);

    size_t offset() const { return pos_; }
    size_t size() const { return buf_.size(); }
    bool at_end() const { return pos_ == buf_.size(); }

    void bytes(void* p, size_t n);
    uint32_t u32();
    uint64_t u64();
    float f32();
    void f32_array(float* p, size_t n);
    std::string str(size_t max_len = 1 << 20);
    void expect_magic(const char m[4], const std::string& what);
    /// Verify that the trailing u32 equals the CRC32 of all preceding bytes.
    void check_trailing_crc(const std::string& what);

private:
    void need(size_t n);

    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
    std::string path_;
};

} // namespace advleaf
