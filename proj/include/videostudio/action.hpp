#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "videostudio/optim.hpp"
#include "videostudio/rng.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct ActionVocabulary {
  std::vector<std::string> names;
  Tensor embeddings;  // [V,C], unit rows

  std::size_t size() const { return names.size(); }
  std::size_t dim() const { return embeddings.dim(1); }
  // Throws std::invalid_argument on an empty vocabulary, duplicate names or non-unit rows.
  void validate() const;
};

// V unit embeddings made mutually orthogonal by Gram-Schmidt (requires V <= C).
ActionVocabulary synthetic_vocabulary(std::vector<std::string> names, std::size_t channels, std::uint64_t seed);
const std::vector<std::string>& default_action_names();  // 16 entries

// JSON list of {"name": ..., "embedding": [...]}
ActionVocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const ActionVocabulary& vocab, const std::filesystem::path& path);

using PhraseExtractor = std::function<std::vector<std::string>(const std::string&)>;
using PhraseEmbedder = std::function<Tensor(const std::string&)>;

// Lowercase, punctuation to spaces, whitespace collapsed.
std::string normalize_prompt_text(const std::string& text);

// Vocabulary names found as whole-word n-grams, in order of first mention, once each.
PhraseExtractor ngram_extractor(const ActionVocabulary& vocab);
std::vector<std::string> extract_action_phrases(const std::string& prompt, const PhraseExtractor& extractor);

// Vocabulary names map to their own embedding; any other phrase to a unit
// vector seeded by its hash.
PhraseEmbedder vocabulary_embedder(const ActionVocabulary& vocab);

// Each phrase picks its highest-cosine category (lowest index on ties) and is
// dropped below `threshold`; accepted cosines are then divided by their maximum.
Tensor build_indicator(const std::vector<std::string>& phrases, const ActionVocabulary& vocab,
                       const PhraseEmbedder& embedder, double threshold = 0.2);

// f(y_a) = W y_a + b
struct ActionEmbedding {
  Parameter weight;  // [C_out, V]
  Parameter bias;    // [C_out]

  ActionEmbedding(const std::string& name, std::size_t vocab_size, std::size_t channels, Rng& rng, double init_std);
  Tensor forward(const Tensor& y) const;
  // Accumulates parameter gradients and returns dL/dy.
  Tensor backward(const Tensor& y, const Tensor& dout);
  void collect(std::vector<Parameter*>& out);
};

Tensor embed_indicator(const Tensor& y, const Tensor& weight, const Tensor& bias);

}  // namespace vs
