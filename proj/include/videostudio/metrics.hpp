#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "videostudio/image.hpp"

namespace vs {

struct TooFewFrames : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NoCommonEntities : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using ImageEmbedder = std::function<Tensor(const RgbImage&)>;

// 8x8 cell means minus mid-grey, flattened (192), fixed random projection to
// `dims`, L2-normalized. A zero projection stays zero.
ImageEmbedder toy_embedder(std::uint64_t seed = 0, std::size_t dims = 32);

// Cosine of two vectors; 0 when either is zero.
double cosine(const Tensor& a, const Tensor& b);

// 100 x mean cosine over consecutive frame pairs.
double frame_consistency(const std::vector<RgbImage>& frames, const ImageEmbedder& embed);

// Crops of one entity in the scenes it appears in; an absent crop is a miss.
using EntityDetector = std::function<std::optional<RgbImage>(const std::string& entity, int scene)>;

struct SceneConsistency {
  std::map<std::string, double> per_entity;
  std::vector<std::string> missed;  // DetectorMiss: entity skipped
  double mean = 0.0;
};

// For each entity occurring in >= 2 scenes: 100 x mean cosine over unordered
// cross-scene crop pairs; mean over scored entities. Throws NoCommonEntities
// when no entity is shared, or when every shared entity was missed.
SceneConsistency scene_consistency(const std::map<std::string, std::vector<int>>& occurrences,
                                   const EntityDetector& detect, const ImageEmbedder& embed);

// Tight bounding box of mask > 0, padded by `pad` and clipped; nullopt when empty.
struct BoundingBox {
  std::size_t y0, x0, y1, x1;  // half-open
};
std::optional<BoundingBox> mask_bbox(const Mask& mask, std::size_t pad = 2);
RgbImage crop(const RgbImage& img, const BoundingBox& box);

struct FgBgSimilarity {
  std::optional<double> fg_sim;
  std::optional<double> bg_sim;
};

// Embedding cosines of the scene image against its references.
FgBgSimilarity fg_bg_similarity(const RgbImage& scene_image, const RgbImage* fg_ref, const RgbImage* bg_ref,
                                const ImageEmbedder& embed);

}  // namespace vs
