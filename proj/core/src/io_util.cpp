#include "advleaf/io_util.hpp"

#include <array>
#include <bit>
#include <cstring>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace advleaf {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

const std::array<uint32_t, 256>& crc_table() {
    static const auto table = make_crc_table();
    return table;
}

} // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    const auto& t = crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = t[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

// --------------------------------------------------------------------------

BinaryWriter::BinaryWriter(const std::string& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
}

BinaryWriter::~BinaryWriter() {
    if (out_.is_open()) out_.close();
}

void BinaryWriter::bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed on '" + path_ + "'");
    crc_ = crc32(static_cast<const uint8_t*>(p), n, crc_);
}

void BinaryWriter::u32(uint32_t v) { bytes(&v, 4); }
void BinaryWriter::u64(uint64_t v) { bytes(&v, 8); }
void BinaryWriter::f32(float v) { bytes(&v, 4); }
void BinaryWriter::f32_array(const float* p, size_t n) { bytes(p, n * 4); }

void BinaryWriter::str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    if (!s.empty()) bytes(s.data(), s.size());
}

void BinaryWriter::magic(const char m[4]) { bytes(m, 4); }

void BinaryWriter::crc() {
    const uint32_t v = crc_;
    out_.write(reinterpret_cast<const char*>(&v), 4);
    if (!out_) throw IoError("write failed on '" + path_ + "'");
}

void BinaryWriter::close() {
    out_.close();
    if (out_.fail()) throw IoError("close failed on '" + path_ + "'");
}

// --------------------------------------------------------------------------

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    const std::streamsize n = in.tellg();
    in.seekg(0);
    buf_.resize(static_cast<size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf_.data()), n);
    if (!in) throw IoError("read failed on '" + path + "'");
}

void BinaryReader::need(size_t n) {
    if (pos_ + n > buf_.size())
        throw FormatError("'" + path_ + "': truncated at byte offset " + std::to_string(pos_) +
                          " (need " + std::to_string(n) + " more bytes)");
}

void BinaryReader::bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
}

uint32_t BinaryReader::u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
}

uint64_t BinaryReader::u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
}

float BinaryReader::f32() {
    float v;
    bytes(&v, 4);
    return v;
}

void BinaryReader::f32_array(float* p, size_t n) { bytes(p, n * 4); }

std::string BinaryReader::str(size_t max_len) {
    const size_t at = pos_;
    const uint32_t len = u32();
    if (len > max_len)
        throw FormatError("'" + path_ + "': implausible string length " + std::to_string(len) +
                          " at byte offset " + std::to_string(at));
    std::string s(len, '\0');
    if (len) bytes(s.data(), len);
    return s;
}

void BinaryReader::expect_magic(const char m[4], const std::string& what) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
        throw FormatError("'" + path_ + "': bad magic for " + what + " at byte offset 0");
}

void BinaryReader::check_trailing_crc(const std::string& what) {
    if (buf_.size() < 4) throw FormatError("'" + path_ + "': too short for a CRC");
    const uint32_t stored = *reinterpret_cast<const uint32_t*>(buf_.data() + buf_.size() - 4);
    const uint32_t actual = crc32(buf_.data(), buf_.size() - 4);
    if (stored != actual)
        throw FormatError("'" + path_ + "': CRC mismatch in " + what + " (stored " +
                          std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
}

} // namespace advleaf
