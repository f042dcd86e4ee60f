#include "advleaf/netpbm.hpp"

#include <fstream>

namespace advleaf {

namespace {

struct Cursor {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    const std::string& path;

    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError("'" + path + "': " + why + " at byte offset " + std::to_string(pos));
    }

    int peek() const { return pos < buf.size() ? buf[pos] : -1; }

    void skip_ws_and_comments() {
        while (pos < buf.size()) {
            const uint8_t c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int read_int() {
        skip_ws_and_comments();
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') fail("expected an integer");
        long v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1 << 30) fail("integer overflow in header");
            ++pos;
        }
        return static_cast<int>(v);
    }
};

std::vector<uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    const std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> buf(static_cast<size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw IoError("read failed on '" + path + "'");
    return buf;
}

void write_pnm(const std::string& path, const char* magic, int width, int height,
               int channels, const std::vector<uint8_t>& bytes, const std::string& comment) {
    if (width < 1 || height < 1)
        throw ConfigError("image dimensions must be positive");
    const size_t expected = static_cast<size_t>(width) * height * channels;
    if (bytes.size() != expected)
        throw ShapeError("pixel buffer has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << magic << "\n";
    if (!comment.empty()) out << "# " << comment << "\n";
    out << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (out.fail()) throw IoError("write failed on '" + path + "'");
}

} // namespace

PnmImage read_pnm(const std::string& path) {
    const auto buf = slurp(path);
    Cursor c{buf, 0, path};
    if (buf.size() < 2 || buf[0] != 'P') c.fail("not a netpbm file (bad magic)");
    int channels = 0;
    if (buf[1] == '5') channels = 1;
    else if (buf[1] == '6') channels = 3;
    else {
        c.pos = 1;
        c.fail("unsupported netpbm variant (only binary P5/P6)");
    }
    c.pos = 2;

    PnmImage img;
    img.channels = channels;
    img.width = c.read_int();
    img.height = c.read_int();
    const int maxval = c.read_int();
    if (maxval != 255) c.fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
    // exactly one whitespace byte separates the header from the raster
    if (c.peek() != ' ' && c.peek() != '\t' && c.peek() != '\r' && c.peek() != '\n')
        c.fail("missing whitespace after maxval");
    ++c.pos;

    const size_t expected = static_cast<size_t>(img.width) * img.height * channels;
    if (buf.size() - c.pos < expected)
        c.fail("raster truncated: " + std::to_string(buf.size() - c.pos) + " bytes, expected " +
               std::to_string(expected));
    if (buf.size() - c.pos > expected)
        c.fail("trailing bytes after raster");
    img.bytes.assign(buf.begin() + static_cast<ptrdiff_t>(c.pos), buf.end());
    return img;
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& gray, const std::string& comment) {
    write_pnm(path, "P5", width, height, 1, gray, comment);
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb_interleaved, const std::string& comment) {
    write_pnm(path, "P6", width, height, 3, rgb_interleaved, comment);
}

} // namespace advleaf
