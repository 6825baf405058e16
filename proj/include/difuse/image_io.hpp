#pragma once

#include <filesystem>
#include <string>

#include "difuse/colorspace.hpp"

namespace difuse {

/// Reads an 8- or 16-bit PNG (gray, RGB or RGBA; alpha dropped) into [0, 1].
Image read_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG; values are rounded to the nearest of 256 levels.
void write_image(const std::filesystem::path& path, const Image& img);

std::string encode_png(const Image& img);
Image decode_png(const std::string& bytes);

}  // namespace difuse
