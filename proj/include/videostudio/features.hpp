#pragma once

#include <string>

#include "videostudio/image.hpp"

namespace vs {

// Toy encoders feeding the cross-attention contexts. Rows are layer-normed.

// One row per lowercase word (at most max_tokens); empty text gives [0, C].
Tensor text_features(const std::string& text, std::size_t channels = 32, std::size_t max_tokens = 77);

// grid x grid cell tokens: mean colour and cell position through a fixed
// random projection. [grid * grid, C].
Tensor image_features(const RgbImage& img, std::size_t channels = 32, std::size_t grid = 16);

}  // namespace vs
