#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "videostudio/chat.hpp"
#include "videostudio/script.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct ImageError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct MissingDescription : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// H x W x 3 interleaved values in [0, 1]; H, W >= 8.
struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w, double fill = 0.0);

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
  double luminance(std::size_t y, std::size_t x) const;
  // Throws ImageError on bad dims or out-of-range values.
  void validate() const;
  // [3, H, W] planar tensor and back; from_tensor clamps into [0, 1].
  Tensor to_tensor() const;
  static RgbImage from_tensor(const Tensor& t);
  bool operator==(const RgbImage&) const = default;
};

// H x W values in [0, 1].
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<double> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, double fill = 0.0);

  double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  void validate() const;
  bool operator==(const Mask&) const = default;
};

// Binary P6 (maxval 255) and P5. Saving quantizes to 8 bits.
std::string encode_ppm(const RgbImage& img);
RgbImage decode_ppm(const std::string& bytes);
std::string encode_pgm(const Mask& mask);
Mask decode_pgm(const std::string& bytes);
void save_ppm(const RgbImage& img, const std::filesystem::path& path);
RgbImage load_ppm(const std::filesystem::path& path);
void save_pgm(const Mask& mask, const std::filesystem::path& path);
Mask load_pgm(const std::filesystem::path& path);

struct GeneratedImage {
  RgbImage image;
  std::optional<Mask> truth;  // salient-object mask when the backend knows it
};

class TextToImageBackend {
 public:
  virtual ~TextToImageBackend() = default;
  virtual GeneratedImage generate(const std::string& description, std::uint64_t seed, std::size_t width,
                                  std::size_t height) = 0;
};

// Procedural stand-in: a bright disk (luminance > 0.5) on a dark field. Hue,
// disk centre and radius come from the description hash; the seed drives a
// small noise texture.
class ToyTextToImage : public TextToImageBackend {
 public:
  GeneratedImage generate(const std::string& description, std::uint64_t seed, std::size_t width,
                          std::size_t height) override;
  // Base hue in [0, 1) for a description.
  static double base_hue(const std::string& description);
};

// POST {"prompt", "seed", "width", "height"}; reply JSON carries the PPM bytes
// base64-encoded in "image_ppm_b64".
class HttpTextToImage : public TextToImageBackend {
 public:
  explicit HttpTextToImage(std::string url, int timeout_seconds = 120);
  GeneratedImage generate(const std::string& description, std::uint64_t seed, std::size_t width,
                          std::size_t height) override;

 private:
  std::string url_;
  int timeout_seconds_;
};

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual Mask segment(const RgbImage& img) = 0;
};

// Luminance > threshold, optionally followed by a 3x3 box blur.
class ThresholdSegmenter : public Segmenter {
 public:
  explicit ThresholdSegmenter(double threshold = 0.5, bool smooth = false) : threshold_(threshold), smooth_(smooth) {}
  Mask segment(const RgbImage& img) override;

 private:
  double threshold_;
  bool smooth_;
};

enum class Keep : std::uint8_t { Foreground, Background };

// Foreground keeps image * mask, background keeps image * (1 - mask).
RgbImage apply_mask(const RgbImage& img, const Mask& mask, Keep keep);

struct EntityReference {
  EntityRecord entity;
  EntityKind kind = EntityKind::Foreground;
  RgbImage image;       // masked reference
  RgbImage generated;   // unmasked backend output
  Mask mask;            // segmenter output used for masking
  std::optional<Mask> truth;
  std::uint64_t seed = 0;
};

struct ReferenceOptions {
  std::size_t width = 64;
  std::size_t height = 64;
};

std::uint64_t entity_seed(std::uint64_t global_seed, const std::string& name);

// One reference per unique entity of the script, generated concurrently.
std::map<std::string, EntityReference> build_entity_references(const VideoScript& script,
                                                               const std::map<std::string, std::string>& descriptions,
                                                               TextToImageBackend& backend, Segmenter& segmenter,
                                                               std::uint64_t global_seed,
                                                               const ReferenceOptions& options = {});

}  // namespace vs
