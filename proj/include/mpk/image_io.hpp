#pragma once

#include <string>

#include "mpk/types.hpp"

namespace mpk {

// Binary masks as P5 PGM, one byte per pixel, values 0 or 255.
void write_mask_pgm(const std::string& path, const Image& mask);
Image read_mask_pgm(const std::string& path);

}  // namespace mpk
