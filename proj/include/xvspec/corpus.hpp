#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace xvspec {

/// Word inventory shared by every dataset of a scenario. Words are built from
/// syllables; `merge_richness` is the chance a word has two or three of them.
struct LexiconSpec {
  std::string consonants = "bdfgklmnprstvz";
  std::string vowels = "aeiou";
  std::size_t num_syllables = 40;
  std::size_t num_words = 50;
  double merge_richness = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Lexicon {
  std::vector<std::string> syllables;
  /// Syllable indices per word.
  std::vector<std::vector<std::size_t>> words;

  std::string word(std::size_t i) const;
  std::size_t size() const { return words.size(); }

  /// Units for the target tokenizer: " word" per word plus the end symbol.
  std::vector<std::string> word_units() const;
  /// Units for the drafter tokenizer: " first-syllable" and bare later
  /// syllables, plus the end symbol.
  std::vector<std::string> syllable_units() const;
};

Lexicon build_lexicon(const LexiconSpec& spec);

/// A sentence stream over the lexicon: Zipf-ranked word frequencies and a
/// word-level Markov chain whose successor preferences are Zipf-ranked too.
struct DatasetSpec {
  std::string id = "A";
  std::uint64_t seed = 1;
  double zipf = 1.1;
  double successor_zipf = 1.1;
  /// Weight of the successor preference against the unigram law.
  double successor_weight = 0.5;
  std::size_t sentences = 600;
  std::size_t min_words = 3;
  std::size_t max_words = 8;
  double test_fraction = 0.1;
  /// Lexicon slice [word_begin, word_end) this dataset draws from; empty end means the whole lexicon.
  std::size_t word_begin = 0;
  std::optional<std::size_t> word_end;

  void validate() const;
};

struct Corpus {
  std::vector<std::string> train;
  std::vector<std::string> test;
  /// Word indices per sentence, train then test.
  std::vector<std::vector<std::size_t>> word_ids;
};

inline constexpr char kEndSymbol = '.';

/// Deterministic for a fixed lexicon and spec. Sentences look like " w1 w2 w3."
Corpus gen_corpus(const Lexicon& lexicon, const DatasetSpec& spec);

/// First `words` words of a sentence, without the end symbol.
std::string sentence_prefix(const std::string& sentence, std::size_t words);

nlohmann::json to_json(const LexiconSpec& spec);
LexiconSpec lexicon_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& doc);

}  // namespace xvspec
