#include "videostudio/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "videostudio/kernels.hpp"
#include "videostudio/rng.hpp"

namespace vs {

ImageEmbedder toy_embedder(std::uint64_t seed, std::size_t dims) {
  constexpr std::size_t kGrid = 8, kIn = kGrid * kGrid * 3;
  Rng rng(derive_seed(seed, "toy-embedder"));
  Tensor proj({dims, kIn});
  for (auto& v : proj.values()) v = rng.normal();
  return [proj, dims](const RgbImage& img) {
    if (img.height == 0 || img.width == 0) throw ImageError("toy embedder needs a non-empty image");
    Tensor cells({kIn});
    std::vector<double> counts(kGrid * kGrid, 0.0);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const std::size_t cell = (y * kGrid / img.height) * kGrid + x * kGrid / img.width;
        for (std::size_t c = 0; c < 3; ++c) cells[cell * 3 + c] += img.at(y, x, c);
        counts[cell] += 1.0;
      }
    for (std::size_t cell = 0; cell < kGrid * kGrid; ++cell)
      for (std::size_t c = 0; c < 3; ++c)
        cells[cell * 3 + c] = counts[cell] > 0.0 ? cells[cell * 3 + c] / counts[cell] - 0.5 : 0.0;
    Tensor out = matmul(proj, cells.reshaped({kIn, 1})).reshaped({dims});
    const double norm = std::sqrt(dot(out, out));
    if (norm > 0.0) out *= 1.0 / norm;
    return out;
  };
}

double cosine(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine");
  const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double frame_consistency(const std::vector<RgbImage>& frames, const ImageEmbedder& embed) {
  if (frames.size() < 2) throw TooFewFrames("frame consistency needs at least 2 frames");
  std::vector<Tensor> e;
  e.reserve(frames.size());
  for (const auto& f : frames) e.push_back(embed(f));
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < e.size(); ++i) total += cosine(e[i], e[i + 1]);
  return 100.0 * total / static_cast<double>(e.size() - 1);
}

SceneConsistency scene_consistency(const std::map<std::string, std::vector<int>>& occurrences,
                                   const EntityDetector& detect, const ImageEmbedder& embed) {
  SceneConsistency out;
  bool any_common = false;
  double total = 0.0;
  for (const auto& [entity, scenes] : occurrences) {
    if (scenes.size() < 2) continue;
    any_common = true;
    std::vector<Tensor> e;
    bool miss = false;
    for (int s : scenes) {
      const auto c = detect(entity, s);
      if (!c) {
        miss = true;
        break;
      }
      e.push_back(embed(*c));
    }
    if (miss) {
      out.missed.push_back(entity);
      continue;
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < e.size(); ++i)
      for (std::size_t j = i + 1; j < e.size(); ++j) {
        sum += cosine(e[i], e[j]);
        ++pairs;
      }
    out.per_entity[entity] = 100.0 * sum / static_cast<double>(pairs);
    total += out.per_entity[entity];
  }
  if (!any_common) throw NoCommonEntities("no entity appears in more than one scene");
  if (out.per_entity.empty()) throw NoCommonEntities("the detector missed every shared entity");
  out.mean = total / static_cast<double>(out.per_entity.size());
  return out;
}

std::optional<BoundingBox> mask_bbox(const Mask& mask, std::size_t pad) {
  std::size_t y0 = mask.height, x0 = mask.width, y1 = 0, x1 = 0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask.at(y, x) > 0.0) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y + 1);
        x1 = std::max(x1, x + 1);
      }
  if (y1 == 0) return std::nullopt;
  return BoundingBox{y0 > pad ? y0 - pad : 0, x0 > pad ? x0 - pad : 0, std::min(mask.height, y1 + pad),
                     std::min(mask.width, x1 + pad)};
}

RgbImage crop(const RgbImage& img, const BoundingBox& box) {
  if (box.y1 > img.height || box.x1 > img.width || box.y0 >= box.y1 || box.x0 >= box.x1)
    throw ImageError("crop box outside the image");
  RgbImage out(box.y1 - box.y0, box.x1 - box.x0);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(box.y0 + y, box.x0 + x, c);
  return out;
}

FgBgSimilarity fg_bg_similarity(const RgbImage& scene_image, const RgbImage* fg_ref, const RgbImage* bg_ref,
                                const ImageEmbedder& embed) {
  FgBgSimilarity out;
  const Tensor s = embed(scene_image);
  if (fg_ref) out.fg_sim = cosine(s, embed(*fg_ref));
  if (bg_ref) out.bg_sim = cosine(s, embed(*bg_ref));
  return out;
}

}  // namespace vs
