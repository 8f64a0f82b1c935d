#include "videostudio/features.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "videostudio/kernels.hpp"
#include "videostudio/rng.hpp"

namespace vs {

namespace {

Tensor normalize_rows(const Tensor& t) {
  const std::size_t c = t.dim(1);
  return layer_norm(t, Tensor({c}, 1.0), Tensor({c}));
}

}  // namespace

Tensor text_features(const std::string& text, std::size_t channels, std::size_t max_tokens) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text + " ") {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (words.size() > max_tokens) words.resize(max_tokens);
  Tensor out({words.size(), channels});
  for (std::size_t i = 0; i < words.size(); ++i) {
    Rng rng(derive_seed(fnv1a64(words[i]), "text-token"));
    for (std::size_t k = 0; k < channels; ++k)
      out[i * channels + k] = rng.normal() + 0.1 * std::sin(static_cast<double>(i + 1) * static_cast<double>(k + 1));
  }
  if (words.empty()) return out;
  return normalize_rows(out);
}

Tensor image_features(const RgbImage& img, std::size_t channels, std::size_t grid) {
  img.validate();
  constexpr std::size_t kIn = 7;
  Tensor cells({grid * grid, kIn});
  std::vector<double> counts(grid * grid, 0.0);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t cell = (y * grid / img.height) * grid + x * grid / img.width;
      for (std::size_t c = 0; c < 3; ++c) cells[cell * kIn + c] += img.at(y, x, c);
      counts[cell] += 1.0;
    }
  }
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t cell = gy * grid + gx;
      for (std::size_t c = 0; c < 3; ++c) cells[cell * kIn + c] /= std::max(counts[cell], 1.0);
      const double py = static_cast<double>(gy) / static_cast<double>(grid) * 3.14159265358979;
      const double px = static_cast<double>(gx) / static_cast<double>(grid) * 3.14159265358979;
      cells[cell * kIn + 3] = std::sin(py);
      cells[cell * kIn + 4] = std::cos(py);
      cells[cell * kIn + 5] = std::sin(px);
      cells[cell * kIn + 6] = std::cos(px);
    }
  }
  Rng rng(derive_seed(0, "image-feature-projection"));
  Tensor proj({kIn, channels});
  for (auto& v : proj.values()) v = rng.normal();
  return normalize_rows(matmul(cells, proj));
}

}  // namespace vs
