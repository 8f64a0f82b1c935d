#include "videostudio/action.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

std::vector<std::string> words(const std::string& text) {
  std::istringstream in(normalize_prompt_text(text));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double row_norm(const Tensor& m, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < m.dim(1); ++c) s += m[r * m.dim(1) + c] * m[r * m.dim(1) + c];
  return std::sqrt(s);
}

}  // namespace

void ActionVocabulary::validate() const {
  if (names.empty()) throw std::invalid_argument("action vocabulary is empty");
  if (embeddings.rank() != 2 || embeddings.dim(0) != names.size())
    throw std::invalid_argument("action embeddings must be [V,C] with V = " + std::to_string(names.size()));
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) throw std::invalid_argument("duplicate action name '" + names[i] + "'");
    if (std::abs(row_norm(embeddings, i) - 1.0) > 1e-6)
      throw std::invalid_argument("embedding of '" + names[i] + "' is not unit norm");
  }
}

const std::vector<std::string>& default_action_names() {
  static const std::vector<std::string> names = {
      "walking",        "running",       "jumping",      "swimming",     "riding bike",  "kneading dough",
      "dancing",        "playing guitar", "cooking",     "reading book", "climbing",     "surfing",
      "skiing",         "eating",        "pouring water", "waving hand"};
  return names;
}

ActionVocabulary synthetic_vocabulary(std::vector<std::string> names, std::size_t channels, std::uint64_t seed) {
  const std::size_t v = names.size();
  if (v == 0 || v > channels) throw std::invalid_argument("synthetic vocabulary needs 1 <= V <= C");
  Rng rng(derive_seed(seed, "action-vocabulary"));
  Tensor e({v, channels});
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t c = 0; c < channels; ++c) e[i * channels + c] = rng.normal();
    for (std::size_t j = 0; j < i; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < channels; ++c) d += e[i * channels + c] * e[j * channels + c];
      for (std::size_t c = 0; c < channels; ++c) e[i * channels + c] -= d * e[j * channels + c];
    }
    const double n = row_norm(e, i);
    for (std::size_t c = 0; c < channels; ++c) e[i * channels + c] /= n;
  }
  ActionVocabulary out{std::move(names), std::move(e)};
  out.validate();
  return out;
}

ActionVocabulary load_vocabulary(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("bad vocabulary file " + path.string() + ": " + e.what());
  }
  if (!j.is_array() || j.empty()) throw std::invalid_argument("vocabulary must be a nonempty JSON list");
  ActionVocabulary out;
  const std::size_t c = j.at(0).at("embedding").size();
  out.embeddings = Tensor({j.size(), c});
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.names.push_back(j[i].at("name").get<std::string>());
    const auto& emb = j[i].at("embedding");
    if (emb.size() != c) throw std::invalid_argument("vocabulary embeddings differ in width");
    for (std::size_t k = 0; k < c; ++k) out.embeddings[i * c + k] = emb[k].get<double>();
  }
  out.validate();
  return out;
}

void save_vocabulary(const ActionVocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    std::vector<double> row(vocab.embeddings.values().begin() + static_cast<std::ptrdiff_t>(i * vocab.dim()),
                            vocab.embeddings.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * vocab.dim()));
    j.push_back({{"name", vocab.names[i]}, {"embedding", row}});
  }
  write_file(path, j.dump(1) + "\n");
}

std::string normalize_prompt_text(const std::string& text) {
  std::string out;
  bool gap = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      if (gap && !out.empty()) out.push_back(' ');
      gap = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      gap = true;
    }
  }
  return out;
}

PhraseExtractor ngram_extractor(const ActionVocabulary& vocab) {
  std::vector<std::pair<std::string, std::vector<std::string>>> grams;
  for (const auto& n : vocab.names) grams.emplace_back(n, words(n));
  return [grams](const std::string& prompt) {
    const auto toks = words(prompt);
    std::vector<std::pair<std::size_t, std::size_t>> hits;  // (position, vocab index)
    for (std::size_t g = 0; g < grams.size(); ++g) {
      const auto& gram = grams[g].second;
      if (gram.empty() || gram.size() > toks.size()) continue;
      for (std::size_t i = 0; i + gram.size() <= toks.size(); ++i) {
        if (std::equal(gram.begin(), gram.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
          hits.emplace_back(i, g);
          break;
        }
      }
    }
    std::sort(hits.begin(), hits.end());
    std::vector<std::string> out;
    for (const auto& [_, g] : hits) out.push_back(grams[g].first);
    return out;
  };
}

std::vector<std::string> extract_action_phrases(const std::string& prompt, const PhraseExtractor& extractor) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& p : extractor(prompt))
    if (seen.insert(p).second) out.push_back(std::move(p));
  return out;
}

PhraseEmbedder vocabulary_embedder(const ActionVocabulary& vocab) {
  return [vocab](const std::string& phrase) {
    const std::size_t c = vocab.dim();
    Tensor out({c});
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (vocab.names[i] == phrase) {
        for (std::size_t k = 0; k < c; ++k) out[k] = vocab.embeddings[i * c + k];
        return out;
      }
    }
    Rng rng(fnv1a64(phrase));
    double n = 0.0;
    for (auto& v : out.values()) {
      v = rng.normal();
      n += v * v;
    }
    out *= 1.0 / std::sqrt(n);
    return out;
  };
}

Tensor build_indicator(const std::vector<std::string>& phrases, const ActionVocabulary& vocab,
                       const PhraseEmbedder& embedder, double threshold) {
  vocab.validate();
  const std::size_t v = vocab.size(), c = vocab.dim();
  Tensor y({v});
  std::set<std::string> seen;
  for (const auto& p : phrases) {
    if (!seen.insert(p).second) continue;
    const Tensor e = embedder(p);
    if (e.shape() != Shape{c}) throw ShapeMismatch("phrase embedding " + shape_str(e.shape()) + " vs vocabulary width");
    const double norm = std::sqrt(dot(e, e));
    if (norm == 0.0) continue;
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < v; ++i) {
      double d = 0.0;
      for (std::size_t k = 0; k < c; ++k) d += vocab.embeddings[i * c + k] * e[k];
      const double cosine = d / norm;
      if (cosine > best_cos) {
        best_cos = cosine;
        best = i;
      }
    }
    if (best_cos < threshold) continue;
    y[best] = std::max(y[best], best_cos);
  }
  const double top = max_abs(y);
  if (top > 0.0)
    for (auto& v : y.values()) v /= top;
  return y;
}

Tensor embed_indicator(const Tensor& y, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "embed_indicator");
  if (y.shape() != Shape{weight.dim(1)} || bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeMismatch("embed_indicator: y " + shape_str(y.shape()) + " W " + shape_str(weight.shape()) + " b " +
                        shape_str(bias.shape()));
  }
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  Tensor out = bias;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k) out[r] += weight[r * cols + k] * y[k];
  return out;
}

ActionEmbedding::ActionEmbedding(const std::string& name, std::size_t vocab_size, std::size_t channels, Rng& rng,
                                 double init_std)
    : weight(name + ".weight", random_normal({channels, vocab_size}, rng, init_std)),
      bias(name + ".bias", Tensor({channels})) {}

Tensor ActionEmbedding::forward(const Tensor& y) const { return embed_indicator(y, weight.value, bias.value); }

Tensor ActionEmbedding::backward(const Tensor& y, const Tensor& dout) {
  const std::size_t rows = weight.value.dim(0), cols = weight.value.dim(1);
  if (dout.shape() != Shape{rows} || y.shape() != Shape{cols}) throw ShapeMismatch("ActionEmbedding::backward");
  Tensor dy({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    bias.grad[r] += dout[r];
    for (std::size_t k = 0; k < cols; ++k) {
      weight.grad[r * cols + k] += dout[r] * y[k];
      dy[k] += weight.value[r * cols + k] * dout[r];
    }
  }
  return dy;
}

void ActionEmbedding::collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }

}  // namespace vs
