#include "xvspec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "xvspec/rng.hpp"

namespace xvspec {

namespace {

std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> cdf(w.size());
  std::partial_sum(w.begin(), w.end(), cdf.begin());
  return cdf;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
  return w;
}

}  // namespace

void LexiconSpec::validate() const {
  if (consonants.empty() || vowels.empty()) throw std::invalid_argument("lexicon: empty alphabet");
  for (char c : consonants + vowels) {
    if (c == ' ' || c == kEndSymbol) throw std::invalid_argument("lexicon: space and end symbol are reserved");
  }
  if (num_words == 0) throw std::invalid_argument("lexicon: num_words must be positive");
  if (num_syllables == 0) throw std::invalid_argument("lexicon: num_syllables must be positive");
  const std::size_t possible = consonants.size() * vowels.size() * (1 + consonants.size());
  if (num_syllables > possible) throw std::invalid_argument("lexicon: alphabet too small for num_syllables");
  if (!(merge_richness >= 0.0 && merge_richness <= 1.0)) {
    throw std::invalid_argument("lexicon: merge_richness must lie in [0, 1]");
  }
  if (merge_richness == 0.0 && num_words > num_syllables) {
    throw std::invalid_argument("lexicon: single-syllable lexicon needs num_syllables >= num_words");
  }
}

std::string Lexicon::word(std::size_t i) const {
  std::string w;
  for (std::size_t s : words.at(i)) w += syllables[s];
  return w;
}

std::vector<std::string> Lexicon::word_units() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < words.size(); ++i) out.push_back(" " + word(i));
  out.emplace_back(1, kEndSymbol);
  return out;
}

std::vector<std::string> Lexicon::syllable_units() const {
  std::vector<std::string> out;
  for (const auto& w : words) {
    out.push_back(" " + syllables[w[0]]);
    for (std::size_t j = 1; j < w.size(); ++j) out.push_back(syllables[w[j]]);
  }
  out.emplace_back(1, kEndSymbol);
  return out;
}

Lexicon build_lexicon(const LexiconSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Lexicon lex;
  std::set<std::string> seen;
  while (lex.syllables.size() < spec.num_syllables) {
    std::string s;
    s += spec.consonants[rng.below(spec.consonants.size())];
    s += spec.vowels[rng.below(spec.vowels.size())];
    if (rng.uniform() < 0.3) s += spec.consonants[rng.below(spec.consonants.size())];
    if (seen.insert(s).second) lex.syllables.push_back(s);
  }
  std::set<std::string> words;
  std::size_t attempts = 0;
  while (lex.words.size() < spec.num_words) {
    if (++attempts > 100000) throw std::invalid_argument("lexicon: cannot build enough distinct words");
    std::vector<std::size_t> w;
    const bool compound = rng.uniform() < spec.merge_richness;
    const std::size_t n = compound ? 2 + rng.below(2) : 1;
    for (std::size_t j = 0; j < n; ++j) w.push_back(rng.below(lex.syllables.size()));
    std::string surface;
    for (std::size_t s : w) surface += lex.syllables[s];
    if (words.insert(surface).second) lex.words.push_back(std::move(w));
  }
  return lex;
}

void DatasetSpec::validate() const {
  if (id.empty()) throw std::invalid_argument("dataset: id must be set");
  if (min_words == 0 || max_words < min_words) throw std::invalid_argument("dataset: bad sentence length range");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("dataset: test_fraction in [0, 1)");
  if (!(successor_weight >= 0.0 && successor_weight <= 1.0)) {
    throw std::invalid_argument("dataset: successor_weight in [0, 1]");
  }
  if (zipf < 0.0 || successor_zipf < 0.0) throw std::invalid_argument("dataset: Zipf exponents must be non-negative");
  if (word_end && *word_end <= word_begin) throw std::invalid_argument("dataset: empty word slice");
}

Corpus gen_corpus(const Lexicon& lexicon, const DatasetSpec& spec) {
  spec.validate();
  const std::size_t end = spec.word_end.value_or(lexicon.size());
  if (lexicon.size() == 0) throw std::invalid_argument("gen_corpus: empty lexicon");
  if (end > lexicon.size()) throw std::invalid_argument("gen_corpus: word slice exceeds the lexicon");
  const std::size_t first = spec.word_begin;
  const std::size_t n = end - first;
  Rng rng(spec.seed);

  const auto rank_of = permutation(n, rng);
  const auto rank_w = zipf_weights(n, spec.zipf);
  std::vector<double> unigram(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += rank_w[rank_of[i]];
  for (std::size_t i = 0; i < n; ++i) unigram[i] = rank_w[rank_of[i]] / z;

  const auto succ_w = zipf_weights(n, spec.successor_zipf);
  const double succ_z = std::accumulate(succ_w.begin(), succ_w.end(), 0.0);
  std::vector<std::vector<double>> successor_cdf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pref = permutation(n, rng);
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = (1.0 - spec.successor_weight) * unigram[j] + spec.successor_weight * succ_w[pref[j]] / succ_z;
    }
    successor_cdf[i] = cumulative(row);
  }
  const auto unigram_cdf = cumulative(unigram);

  std::vector<std::string> sentences;
  Corpus corpus;
  for (std::size_t s = 0; s < spec.sentences; ++s) {
    const std::size_t len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
    std::vector<std::size_t> ids;
    std::string text;
    std::size_t w = draw(unigram_cdf, rng);
    for (std::size_t j = 0; j < len; ++j) {
      if (j > 0) w = draw(successor_cdf[w], rng);
      ids.push_back(first + w);
      text += " " + lexicon.word(first + w);
    }
    text += kEndSymbol;
    sentences.push_back(std::move(text));
    corpus.word_ids.push_back(std::move(ids));
  }
  const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(sentences.size())));
  const std::size_t n_train = sentences.size() - n_test;
  corpus.train.assign(sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(n_train));
  corpus.test.assign(sentences.begin() + static_cast<std::ptrdiff_t>(n_train), sentences.end());
  return corpus;
}

std::string sentence_prefix(const std::string& sentence, std::size_t words) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (sentence[i] == ' ' && seen++ == words) return sentence.substr(0, i);
    if (sentence[i] == kEndSymbol) return sentence.substr(0, i);
  }
  return sentence;
}

nlohmann::json to_json(const LexiconSpec& spec) {
  return {{"consonants", spec.consonants}, {"vowels", spec.vowels},           {"num_syllables", spec.num_syllables},
          {"num_words", spec.num_words},   {"merge_richness", spec.merge_richness}, {"seed", spec.seed}};
}

LexiconSpec lexicon_spec_from_json(const nlohmann::json& doc) {
  LexiconSpec s;
  s.consonants = doc.value("consonants", s.consonants);
  s.vowels = doc.value("vowels", s.vowels);
  s.num_syllables = doc.value("num_syllables", s.num_syllables);
  s.num_words = doc.value("num_words", s.num_words);
  s.merge_richness = doc.value("merge_richness", s.merge_richness);
  s.seed = doc.value("seed", s.seed);
  s.validate();
  return s;
}

nlohmann::json to_json(const DatasetSpec& spec) {
  return {{"id", spec.id},
          {"seed", spec.seed},
          {"zipf", spec.zipf},
          {"successor_zipf", spec.successor_zipf},
          {"successor_weight", spec.successor_weight},
          {"sentences", spec.sentences},
          {"min_words", spec.min_words},
          {"max_words", spec.max_words},
          {"test_fraction", spec.test_fraction},
          {"word_begin", spec.word_begin},
          {"word_end", spec.word_end ? nlohmann::json(*spec.word_end) : nlohmann::json(nullptr)}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& doc) {
  DatasetSpec s;
  s.id = doc.value("id", s.id);
  s.seed = doc.value("seed", s.seed);
  s.zipf = doc.value("zipf", s.zipf);
  s.successor_zipf = doc.value("successor_zipf", s.successor_zipf);
  s.successor_weight = doc.value("successor_weight", s.successor_weight);
  s.sentences = doc.value("sentences", s.sentences);
  s.min_words = doc.value("min_words", s.min_words);
  s.max_words = doc.value("max_words", s.max_words);
  s.test_fraction = doc.value("test_fraction", s.test_fraction);
  s.word_begin = doc.value("word_begin", s.word_begin);
  if (doc.contains("word_end") && !doc.at("word_end").is_null()) s.word_end = doc.at("word_end").get<std::size_t>();
  s.validate();
  return s;
}

}  // namespace xvspec
