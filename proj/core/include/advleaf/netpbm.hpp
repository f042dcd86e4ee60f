#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advleaf/errors.hpp"

namespace advleaf {

/// Binary-netpbm raster: channels = 1 (PGM, P5) or 3 (PPM, P6), maxval 255,
/// interleaved samples, row-major.
struct PnmImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> bytes;
};

/// Parse a binary P5/P6 file. Malformed headers raise FormatError carrying
/// the byte offset of the failure.
PnmImage read_pnm(const std::string& path);

/// Writers emit maxval 255 and one optional '#' comment line after the
/// magic; the payload bytes are written verbatim (bit-exact round trip).
void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& gray, const std::string& comment = {});
void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb_interleaved, const std::string& comment = {});

} // namespace advleaf
