// SPDX-License-Identifier: Apache-2.0
#include "mcl/toy_corpus.hpp"

#include <array>
#include <fstream>
#include <span>

#include "mcl/errors.hpp"
#include "mcl/rng.hpp"
#include "mcl/vocab.hpp"

MCL_BEGIN_NAMESPACE

namespace {

using Words = std::span<const char* const>;

constexpr const char* kDeterminers[] = {"the", "a", "every", "one", "that", "this"};
constexpr const char* kAnimals[] = {"fox", "dog", "cat", "horse", "owl", "rabbit", "wolf", "goat", "crow", "bear"};
constexpr const char* kPeople[] = {"farmer", "child", "teacher", "sailor", "baker", "doctor", "miller", "painter"};
constexpr const char* kThings[] = {"lantern", "basket", "wagon", "bridge", "kettle", "window", "ladder", "drum",
                                   "letter", "boat",    "bell",   "stone"};
constexpr const char* kPlaces[] = {"river", "forest", "market", "village", "hill", "garden", "harbor", "field"};
constexpr const char* kAnimalAdjectives[] = {"quick", "lazy", "brown", "small", "old", "hungry", "quiet", "wild"};
constexpr const char* kThingAdjectives[] = {"heavy", "broken", "red", "wooden", "bright", "empty", "new", "tall"};
constexpr const char* kPersonAdjectives[] = {"tired", "young", "kind", "clever", "busy", "proud"};
constexpr const char* kAnimalVerbs[] = {"chases", "watches", "follows", "bites", "ignores", "hears"};
constexpr const char* kPersonVerbs[] = {"carries", "repairs", "paints", "sells", "finds", "cleans", "builds"};
constexpr const char* kIntransitive[] = {"sleeps", "runs", "waits", "sings", "rests", "hides", "wanders"};
constexpr const char* kAdverbs[] = {"slowly", "quietly", "often", "again", "early", "late", "happily"};
constexpr const char* kPrepositions[] = {"near", "across", "behind", "beside", "under", "beyond"};
constexpr const char* kPronouns[] = {"she", "he", "they", "we"};
constexpr const char* kSayVerbs[] = {"said", "heard", "believed", "noticed"};

class Builder {
 public:
  explicit Builder(Rng& rng) : rng_(rng) {}
  void word(const std::string& w) {
    if (!text_.empty() && w != "." && w != ",") text_.push_back(' ');
    text_ += w;
  }
  void pick(Words words) { word(words[rng_.below(words.size())]); }
  bool coin(double p) { return rng_.uniform() < p; }
  void animal_phrase() {
    pick(kDeterminers);
    if (coin(0.5)) pick(kAnimalAdjectives);
    pick(kAnimals);
  }
  void person_phrase() {
    pick(kDeterminers);
    if (coin(0.4)) pick(kPersonAdjectives);
    pick(kPeople);
  }
  void thing_phrase() {
    pick(kDeterminers);
    if (coin(0.5)) pick(kThingAdjectives);
    pick(kThings);
  }
  void place_phrase() {
    pick(kPrepositions);
    word("the");
    pick(kPlaces);
  }
  std::string take() { return std::move(text_); }

 private:
  Rng& rng_;
  std::string text_;
};

}  // namespace

std::string generate_toy_sentence(std::uint64_t seed, std::uint64_t index) {
  Rng rng = Rng::derive(seed, index, 0x70);
  Builder b(rng);
  switch (rng.below(5)) {
    case 0:  // animal acts on animal
      b.animal_phrase();
      b.pick(kAnimalVerbs);
      b.animal_phrase();
      if (b.coin(0.5)) b.place_phrase();
      break;
    case 1:  // person acts on thing
      b.person_phrase();
      b.pick(kPersonVerbs);
      b.thing_phrase();
      if (b.coin(0.5)) b.place_phrase();
      break;
    case 2:  // intransitive
      if (b.coin(0.5)) {
        b.animal_phrase();
      } else {
        b.person_phrase();
      }
      b.pick(kIntransitive);
      b.pick(kAdverbs);
      if (b.coin(0.4)) b.place_phrase();
      break;
    case 3:  // reported clause
      b.pick(kPronouns);
      b.pick(kSayVerbs);
      b.word("that");
      b.thing_phrase();
      b.word("was");
      b.place_phrase();
      break;
    default:  // coordination
      b.person_phrase();
      b.pick(kPersonVerbs);
      b.thing_phrase();
      b.word(",");
      b.word("and");
      b.animal_phrase();
      b.pick(kIntransitive);
      break;
  }
  b.word(".");
  return b.take();
}

std::vector<std::string> generate_toy_corpus(std::size_t sentences, std::uint64_t seed) {
  std::vector<std::string> out;
  out.reserve(sentences);
  for (std::size_t i = 0; i < sentences; ++i) out.push_back(generate_toy_sentence(seed, i));
  return out;
}

namespace {

bool contains_token(const std::string& text, const std::string& token) {
  for (const auto& t : tokenize(text)) {
    if (t == token) return true;
  }
  return false;
}

}  // namespace

std::vector<LabeledSentence> make_presence_dataset(std::size_t n, std::uint64_t seed, const std::string& token) {
  std::vector<LabeledSentence> out;
  std::size_t positives = 0, negatives = 0;
  const std::size_t want_pos = n / 2, want_neg = n - n / 2;
  for (std::uint64_t i = 0; out.size() < n; ++i) {
    if (i > 1000 * (n + 1)) throw InputError("token '" + token + "' is too rare for a presence dataset");
    std::string s = generate_toy_sentence(seed ^ 0x9e3779b97f4a7c15ULL, i);
    const bool has = contains_token(s, token);
    if (has && positives < want_pos) {
      out.push_back({std::move(s), 1});
      ++positives;
    } else if (!has && negatives < want_neg) {
      out.push_back({std::move(s), 0});
      ++negatives;
    }
  }
  Rng rng = Rng::derive(seed, 0x71);
  rng.shuffle(out);
  return out;
}

std::vector<LabeledSentence> make_random_label_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<LabeledSentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({generate_toy_sentence(seed ^ 0x5851f42d4c957f2dULL, i), static_cast<int>(i % 2)});
  }
  Rng rng = Rng::derive(seed, 0x72);
  std::vector<int> labels;
  for (const auto& s : out) labels.push_back(s.label);
  rng.shuffle(labels);
  for (std::size_t i = 0; i < n; ++i) out[i].label = labels[i];
  return out;
}

void save_labeled(const std::string& path, const std::vector<LabeledSentence>& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  for (const auto& s : data) out << s.label << '\t' << s.text << '\n';
}

std::vector<LabeledSentence> load_labeled(const std::string& path) {
  std::vector<LabeledSentence> out;
  for (const auto& line : read_lines(path)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || (line.substr(0, tab) != "0" && line.substr(0, tab) != "1")) {
      throw FormatError("probe data line must be '<0|1><TAB><sentence>': " + line);
    }
    out.push_back({line.substr(tab + 1), line[0] - '0'});
  }
  return out;
}

MCL_END_NAMESPACE
