#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dialoc/tensor.hpp"

namespace dialoc {

/// 8-bit PNG from [3, H, W] RGB or [H, W] gray values in [0, 1] (clamped).
std::string encode_png(const Tensor& image);
/// Binary PGM (P5) from [H, W] values in [0, 1], with an optional header comment line.
std::string encode_pgm(const Tensor& gray, const std::string& comment = "");

std::string base64_encode(std::string_view bytes);
/// Throws DataError on characters outside the alphabet.
std::string base64_decode(std::string_view text);

}  // namespace dialoc
