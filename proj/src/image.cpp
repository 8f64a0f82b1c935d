#include "videostudio/image.hpp"

#include <algorithm>
#include <array>
#include <boost/beast/core/detail/base64.hpp>
#include <cmath>
#include <exception>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "videostudio/camera.hpp"
#include "videostudio/rng.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

constexpr std::size_t kMinSide = 8;

void check_dims(std::size_t h, std::size_t w, const char* what) {
  if (h < kMinSide || w < kMinSide)
    throw ImageError(std::string(what) + " must be at least 8x8, got " + std::to_string(h) + "x" + std::to_string(w));
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw IoError("truncated netpbm header");
  return bytes.substr(start, pos - start);
}

struct Netpbm {
  std::size_t width, height;
  std::string_view payload;
};

Netpbm parse_netpbm(const std::string& bytes, const char* magic, std::size_t channels) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != magic) throw IoError(std::string("expected a ") + magic + " file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(bytes, pos));
    h = std::stoul(header_token(bytes, pos));
    maxval = std::stoul(header_token(bytes, pos));
  } catch (const std::logic_error&) {
    throw IoError("bad netpbm header numbers");
  }
  if (maxval != 255) throw IoError("only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = w * h * channels;
  if (pos > bytes.size() || bytes.size() - pos < need) throw IoError("truncated netpbm raster");
  return {w, h, std::string_view(bytes).substr(pos, need)};
}

unsigned char quantize(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

RgbImage::RgbImage(std::size_t h, std::size_t w, double fill) : height(h), width(w), data(h * w * 3, fill) {}

double RgbImage::luminance(std::size_t y, std::size_t x) const {
  return 0.2126 * at(y, x, 0) + 0.7152 * at(y, x, 1) + 0.0722 * at(y, x, 2);
}

void RgbImage::validate() const {
  check_dims(height, width, "image");
  if (data.size() != height * width * 3) throw ImageError("image data size does not match its dims");
  for (double v : data)
    if (!(v >= 0.0 && v <= 1.0)) throw ImageError("image value outside [0, 1]");
}

Tensor RgbImage::to_tensor() const {
  Tensor t({3, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) t[(c * height + y) * width + x] = at(y, x, c);
  return t;
}

RgbImage RgbImage::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeMismatch("image tensor must be [3,H,W], got " + shape_str(t.shape()));
  RgbImage img(t.dim(1), t.dim(2));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = std::clamp(t[(c * img.height + y) * img.width + x], 0.0, 1.0);
  return img;
}

Mask::Mask(std::size_t h, std::size_t w, double fill) : height(h), width(w), data(h * w, fill) {}

void Mask::validate() const {
  check_dims(height, width, "mask");
  if (data.size() != height * width) throw ImageError("mask data size does not match its dims");
  for (double v : data)
    if (!(v >= 0.0 && v <= 1.0)) throw ImageError("mask value outside [0, 1]");
}

std::string encode_ppm(const RgbImage& img) {
  img.validate();
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double v : img.data) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

RgbImage decode_ppm(const std::string& bytes) {
  const Netpbm p = parse_netpbm(bytes, "P6", 3);
  RgbImage img(p.height, p.width);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<unsigned char>(p.payload[i]) / 255.0;
  img.validate();
  return img;
}

std::string encode_pgm(const Mask& mask) {
  mask.validate();
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (double v : mask.data) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

Mask decode_pgm(const std::string& bytes) {
  const Netpbm p = parse_netpbm(bytes, "P5", 1);
  Mask m(p.height, p.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<unsigned char>(p.payload[i]) / 255.0;
  m.validate();
  return m;
}

void save_ppm(const RgbImage& img, const std::filesystem::path& path) { write_file(path, encode_ppm(img)); }
RgbImage load_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
void save_pgm(const Mask& mask, const std::filesystem::path& path) { write_file(path, encode_pgm(mask)); }
Mask load_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

double ToyTextToImage::base_hue(const std::string& description) {
  return static_cast<double>(fnv1a64(description) >> 11) * 0x1.0p-53;
}

GeneratedImage ToyTextToImage::generate(const std::string& description, std::uint64_t seed, std::size_t width,
                                        std::size_t height) {
  if (description.find_first_not_of(" \t\r\n") == std::string::npos)
    throw BackendError("text-to-image: empty description");
  check_dims(height, width, "generated image");
  const std::uint64_t h = fnv1a64(description);
  const double hue = base_hue(description);
  Rng layout(h);
  const double cx = static_cast<double>(width) * layout.uniform(0.35, 0.65);
  const double cy = static_cast<double>(height) * layout.uniform(0.35, 0.65);
  const double r = static_cast<double>(std::min(width, height)) * layout.uniform(0.18, 0.28);
  const auto fg = hsv_to_rgb(hue, 1.0, 1.0);
  const auto bg = hsv_to_rgb(hue + 0.5, 0.6, 1.0);
  Rng texture(derive_seed(seed, h));

  GeneratedImage out{RgbImage(height, width), Mask(height, width)};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const bool inside = dx * dx + dy * dy <= r * r;
      const double shade = 0.6 + 0.4 * static_cast<double>(y) / static_cast<double>(height);
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = texture.uniform(-0.02, 0.02);
        const double v = inside ? 0.5 + 0.5 * fg[c] : 0.3 * shade * bg[c];
        out.image.at(y, x, c) = std::clamp(v + noise, 0.0, 1.0);
      }
      out.truth->at(y, x) = inside ? 1.0 : 0.0;
    }
  }
  return out;
}

HttpTextToImage::HttpTextToImage(std::string url, int timeout_seconds)
    : url_(std::move(url)), timeout_seconds_(timeout_seconds) {}

GeneratedImage HttpTextToImage::generate(const std::string& description, std::uint64_t seed, std::size_t width,
                                         std::size_t height) {
  if (description.find_first_not_of(" \t\r\n") == std::string::npos)
    throw BackendError("text-to-image: empty description");
  const auto scheme_end = url_.find("://");
  const auto path_start = url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);
  httplib::Client client(origin);
  client.set_read_timeout(timeout_seconds_, 0);
  const nlohmann::json req{{"prompt", description}, {"seed", seed}, {"width", width}, {"height", height}};
  auto res = client.Post(path, req.dump(), "application/json");
  if (!res) throw BackendError("text-to-image request to " + url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("text-to-image backend returned HTTP " + std::to_string(res->status));
  try {
    const auto body = nlohmann::json::parse(res->body);
    GeneratedImage out{decode_ppm(base64_decode(body.at("image_ppm_b64").get<std::string>())), std::nullopt};
    if (out.image.width != width || out.image.height != height)
      throw BackendError("text-to-image backend returned the wrong size");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("text-to-image response: ") + e.what());
  } catch (const IoError& e) {
    throw BackendError(std::string("text-to-image response: ") + e.what());
  }
}

std::string base64_encode(const std::string& bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(const std::string& text) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (text.find_first_not_of('=', read) != std::string::npos) throw IoError("invalid base64 payload");
  out.resize(written);
  return out;
}

Mask ThresholdSegmenter::segment(const RgbImage& img) {
  img.validate();
  Mask m(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) m.at(y, x) = img.luminance(y, x) > threshold_ ? 1.0 : 0.0;
  if (!smooth_) return m;
  Mask s(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double acc = 0.0;
      int n = 0;
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + oy, xx = static_cast<std::ptrdiff_t>(x) + ox;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(img.height) ||
              xx >= static_cast<std::ptrdiff_t>(img.width))
            continue;
          acc += m.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          ++n;
        }
      }
      s.at(y, x) = acc / n;
    }
  }
  return s;
}

RgbImage apply_mask(const RgbImage& img, const Mask& mask, Keep keep) {
  if (img.height != mask.height || img.width != mask.width)
    throw DimensionMismatch("apply_mask: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            " vs mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
  RgbImage out = img;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    const double m = keep == Keep::Foreground ? mask.data[i] : 1.0 - mask.data[i];
    for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] *= m;
  }
  return out;
}

std::uint64_t entity_seed(std::uint64_t global_seed, const std::string& name) { return derive_seed(global_seed, name); }

std::map<std::string, EntityReference> build_entity_references(const VideoScript& script,
                                                               const std::map<std::string, std::string>& descriptions,
                                                               TextToImageBackend& backend, Segmenter& segmenter,
                                                               std::uint64_t global_seed,
                                                               const ReferenceOptions& options) {
  std::vector<EntityRecord> records = find_common_entities(script);
  for (auto& r : records) {
    const auto it = descriptions.find(r.name);
    if (it == descriptions.end()) throw MissingDescription("no description for entity '" + r.name + "'");
    r.description = it->second;
  }
  std::vector<EntityReference> refs(records.size());
  std::vector<std::exception_ptr> errors(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(records.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      EntityReference& ref = refs[k];
      ref.entity = records[k];
      ref.kind = records[k].kind;
      ref.seed = entity_seed(global_seed, records[k].name);
      GeneratedImage gen = backend.generate(*records[k].description, ref.seed, options.width, options.height);
      ref.generated = std::move(gen.image);
      ref.truth = std::move(gen.truth);
      ref.mask = segmenter.segment(ref.generated);
      ref.image = apply_mask(ref.generated, ref.mask,
                             ref.kind == EntityKind::Foreground ? Keep::Foreground : Keep::Background);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::map<std::string, EntityReference> out;
  for (auto& r : refs) out.emplace(r.entity.name, std::move(r));
  return out;
}

}  // namespace vs
