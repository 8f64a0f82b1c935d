#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>

#include "test_support.hpp"
#include "videostudio/action.hpp"
#include "videostudio/gradcheck.hpp"

using namespace vs;

namespace {

constexpr std::size_t kC = 12;

// Basis vocabulary: idle, run, jump, swim on axes 0..3; axes 4..11 are free.
ActionVocabulary basis_vocab() {
  ActionVocabulary v{{"idle", "run", "jump", "swim"}, Tensor({4, kC})};
  for (std::size_t i = 0; i < 4; ++i) v.embeddings[i * kC + i] = 1.0;
  return v;
}

Tensor phrase(std::initializer_list<std::pair<std::size_t, double>> parts) {
  Tensor t({kC});
  for (auto [axis, value] : parts) t[axis] = value;
  return t;
}

// Integer components with integer norms make the cosines exact.
std::map<std::string, Tensor> fixture_phrases() {
  return {
      {"running", phrase({{1, 1}, {4, 1}, {5, 1}, {6, 1}})},                   // cos 1/2
      {"hopping", phrase({{2, 1}, {4, 3}, {5, 2}, {6, 1}, {7, 1}})},           // cos 1/4
      {"paddling", phrase({{3, 1}, {4, 9}, {5, 3}, {6, 3}})},                  // cos 1/10
      {"jogging", phrase({{1, 1}, {4, 4}, {5, 2}, {6, 2}})},                   // cos 1/5
      {"ambling", phrase({{0, 0.19}, {8, 0.98176371}})},                       // cos ~0.19
      {"either", phrase({{1, 1}, {2, 1}})},                                    // tie between run and jump
  };
}

PhraseEmbedder fixture_embedder() {
  auto table = fixture_phrases();
  return [table](const std::string& p) { return table.at(p); };
}

}  // namespace

TEST_CASE("synthetic vocabulary is orthonormal and round-trips") {
  const auto vocab = synthetic_vocabulary(default_action_names(), 32, 4);
  REQUIRE(vocab.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 32; ++k) d += vocab.embeddings[i * 32 + k] * vocab.embeddings[j * 32 + k];
      CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) < 1e-12);
    }
  }
  const auto dir = test::scratch_dir("vocab");
  save_vocabulary(vocab, dir / "v.json");
  const auto back = load_vocabulary(dir / "v.json");
  CHECK(back.names == vocab.names);
  CHECK(max_abs_diff(back.embeddings, vocab.embeddings) < 1e-15);

  ActionVocabulary dup{{"a", "a"}, Tensor({2, 2}, {1, 0, 0, 1})};
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
  ActionVocabulary off{{"a"}, Tensor({1, 2}, {1, 1})};
  CHECK_THROWS_AS(off.validate(), std::invalid_argument);
  CHECK_THROWS_AS(synthetic_vocabulary({"a", "b", "c"}, 2, 0), std::invalid_argument);
}

TEST_CASE("n-gram extraction finds vocabulary phrases once each") {
  const auto vocab = synthetic_vocabulary(default_action_names(), 32, 0);
  const auto ex = ngram_extractor(vocab);
  CHECK(extract_action_phrases("a man kneading dough then riding bike", ex) ==
        std::vector<std::string>{"kneading dough", "riding bike"});
  CHECK(extract_action_phrases("Riding  bike, riding bike and KNEADING dough!", ex) ==
        std::vector<std::string>{"riding bike", "kneading dough"});
  CHECK(extract_action_phrases("a quiet empty room", ex).empty());
  // whole words only
  CHECK(extract_action_phrases("the outrunning fox", ex).empty());
}

TEST_CASE("indicator fixture: drop, argmax and divide-by-max") {
  const auto vocab = basis_vocab();
  const Tensor y = build_indicator({"running", "hopping", "paddling"}, vocab, fixture_embedder());
  CHECK(y == Tensor({4}, {0.0, 1.0, 0.5, 0.0}));
}

TEST_CASE("indicator edge cases") {
  const auto vocab = basis_vocab();
  const auto emb = fixture_embedder();
  CHECK(build_indicator({}, vocab, emb) == Tensor({4}));
  CHECK(build_indicator({"ambling"}, vocab, emb) == Tensor({4}));
  // exactly at the threshold is kept
  CHECK(build_indicator({"jogging"}, vocab, emb) == Tensor({4}, {0.0, 1.0, 0.0, 0.0}));
  // tie goes to the lowest index
  CHECK(build_indicator({"either"}, vocab, emb) == Tensor({4}, {0.0, 1.0, 0.0, 0.0}));
  // two phrases on one category keep the larger cosine before normalizing
  CHECK(build_indicator({"jogging", "running", "hopping"}, vocab, emb) == Tensor({4}, {0.0, 1.0, 0.5, 0.0}));
  // duplicates change nothing
  CHECK(build_indicator({"running", "hopping", "running", "hopping"}, vocab, emb) ==
        build_indicator({"running", "hopping"}, vocab, emb));
}

TEST_CASE("indicator entries are zero or in (0, 1]") {
  const auto vocab = synthetic_vocabulary(default_action_names(), 32, 1);
  const auto emb = vocabulary_embedder(vocab);
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> phrases;
    const auto n = test::rand_between(rng, 0, 6);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.5)
        phrases.push_back(vocab.names[rng.next_u64() % vocab.size()]);
      else
        phrases.push_back("made up " + std::to_string(rng.next_u64() % 1000));
    }
    const Tensor y = build_indicator(phrases, vocab, emb);
    double top = 0.0;
    for (double v : y.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      top = std::max(top, v);
    }
    CHECK((top == 0.0 || top == 1.0));
  }
}

TEST_CASE("indicator is equivariant under vocabulary permutation") {
  const auto vocab = synthetic_vocabulary(default_action_names(), 32, 2);
  std::vector<std::size_t> perm(vocab.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 5 + 3) % perm.size();
  ActionVocabulary shuffled{std::vector<std::string>(vocab.size()), Tensor(vocab.embeddings.shape())};
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.names[i] = vocab.names[perm[i]];
    for (std::size_t k = 0; k < 32; ++k) shuffled.embeddings[i * 32 + k] = vocab.embeddings[perm[i] * 32 + k];
  }
  // shared embedder so both vocabularies see identical phrase vectors
  const auto emb = vocabulary_embedder(vocab);
  const std::vector<std::string> phrases = {"running", "surfing", "waving hand", "an odd phrase"};
  const Tensor a = build_indicator(phrases, vocab, emb);
  const Tensor b = build_indicator(phrases, shuffled, emb);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(b[i] == a[perm[i]]);
}

TEST_CASE("action embedding is affine") {
  Rng rng(3);
  ActionEmbedding f("f", 4, 6, rng, 0.5);
  CHECK(max_abs(f.forward(Tensor({4}))) == 0.0);

  const Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(embed_indicator(Tensor({3}, {0, 1, 0}), w, Tensor({3})) == Tensor({3}, {0, 1, 0}));
  CHECK_THROWS_AS(embed_indicator(Tensor({2}), w, Tensor({3})), ShapeMismatch);
}

TEST_CASE("action embedding gradients pass finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = test::rand_between(rng, 1, 8), c = test::rand_between(rng, 1, 8);
    ActionEmbedding f("f", v, c, rng, 0.7);
    f.bias.value = test::randn({c}, rng);
    Tensor y = test::randn({v}, rng);
    const Tensor wts = test::randn({c}, rng);
    auto loss = [&] { return test::weighted(f.forward(y), wts); };
    f.weight.zero_grad();
    f.bias.zero_grad();
    const Tensor dy = f.backward(y, wts);
    CHECK(finite_diff_check(loss, {&y, &f.weight.value, &f.bias.value}, {dy, f.weight.grad, f.bias.grad}).max_rel_error <
          1e-8);
  }
}
