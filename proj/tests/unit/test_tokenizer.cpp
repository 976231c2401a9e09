#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "xvspec/rng.hpp"
#include "xvspec/tokenizer.hpp"

using namespace xvspec;
using xvspec::testing::make_tokenizer;

namespace {

std::vector<std::string> surfaces(const Tokenizer& tok, const std::vector<TokenId>& ids) {
  std::vector<std::string> out;
  for (TokenId id : ids) out.push_back(tok.surface(id));
  return out;
}

std::string random_text(Rng& rng, const std::string& alphabet, std::size_t max_len) {
  std::string s;
  const std::size_t len = rng.below(max_len + 1);
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

}  // namespace

TEST(Tokenizer, ZeroMergesGivesCharacterVocab) {
  const std::vector<std::string> corpus{"ab"};
  const auto tok = Tokenizer::train(corpus, 0);
  EXPECT_EQ(tok.vocab(), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(tok.merges().empty());
}

TEST(Tokenizer, SingleMergeOnRepeatedPair) {
  const std::vector<std::string> corpus{"abab"};
  const auto tok = Tokenizer::train(corpus, 1);
  ASSERT_EQ(tok.merges().size(), 1u);
  EXPECT_EQ(tok.surface(tok.merges()[0].left), "a");
  EXPECT_EQ(tok.surface(tok.merges()[0].right), "b");
  EXPECT_EQ(surfaces(tok, tok.tokenize("abab")), (std::vector<std::string>{"ab", "ab"}));
  EXPECT_EQ(tok.detokenize(tok.tokenize("abab")), "abab");
}

TEST(Tokenizer, MergesExhaust) {
  const std::vector<std::string> corpus{"xy"};
  const auto tok = Tokenizer::train(corpus, 5);
  ASSERT_EQ(tok.merges().size(), 1u);
  EXPECT_EQ(tok.vocab().back(), "xy");
}

TEST(Tokenizer, EmptyCorpusThrows) {
  const std::vector<std::string> corpus;
  EXPECT_THROW(Tokenizer::train(corpus, 3), std::invalid_argument);
}

TEST(Tokenizer, TieBreakIsLexicographic) {
  // "ba" and "ab" both occur once in each word; "ab" < "ba".
  const std::vector<std::string> corpus{"ab", "ba"};
  const auto tok = Tokenizer::train(corpus, 1);
  EXPECT_EQ(tok.vocab().back(), "ab");
}

TEST(Tokenizer, FrequencyBeatsOrder) {
  const std::vector<std::string> corpus{"zz", "zz", "ab"};
  const auto tok = Tokenizer::train(corpus, 1);
  EXPECT_EQ(tok.vocab().back(), "zz");
}

TEST(Tokenizer, TokenizeExamples) {
  const auto identity = make_tokenizer("abc", {});
  EXPECT_EQ(surfaces(identity, identity.tokenize("abc")), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(identity.tokenize("").empty());
  EXPECT_EQ(identity.detokenize({}), "");

  const auto chained = make_tokenizer("abc", {{"a", "b"}, {"ab", "c"}});
  EXPECT_EQ(surfaces(chained, chained.tokenize("abc")), (std::vector<std::string>{"abc"}));
}

TEST(Tokenizer, OutOfAlphabetNamesSymbol) {
  const auto tok = make_tokenizer("ab", {});
  try {
    tok.tokenize("abz");
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'z'"), std::string::npos);
  }
}

TEST(Tokenizer, UnknownIdThrows) {
  const auto tok = make_tokenizer("ab", {});
  const std::vector<TokenId> bad{7};
  EXPECT_THROW(tok.detokenize(bad), std::out_of_range);
}

TEST(Tokenizer, RuleOrderMatters) {
  // "bc" ranks first, so "abc" cannot use the later ("a","b") rule.
  const auto tok = make_tokenizer("abc", {{"b", "c"}, {"a", "b"}});
  EXPECT_EQ(surfaces(tok, tok.tokenize("abc")), (std::vector<std::string>{"a", "bc"}));
}

TEST(Tokenizer, RoundTripAndMergeClosureOnRandomStrings) {
  Rng rng(7);
  std::vector<std::string> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_text(rng, "abcd ", 12));
  const auto tok = Tokenizer::train(corpus, 30);
  std::set<std::pair<TokenId, TokenId>> rules;
  for (const auto& m : tok.merges()) rules.insert({m.left, m.right});
  for (int i = 0; i < 100; ++i) {
    const auto s = random_text(rng, "abcd ", 20);
    const auto ids = tok.tokenize(s);
    EXPECT_EQ(tok.detokenize(ids), s);
    for (std::size_t j = 0; j + 1 < ids.size(); ++j) {
      EXPECT_FALSE(rules.contains({ids[j], ids[j + 1]})) << "adjacent pair forms a rule in '" << s << "'";
    }
  }
}

TEST(Tokenizer, TrainingIsDeterministic) {
  const std::vector<std::string> corpus{"abcab", "cabca", "bbca"};
  EXPECT_EQ(Tokenizer::train(corpus, 6), Tokenizer::train(corpus, 6));
}

TEST(Tokenizer, JsonRoundTrip) {
  const std::vector<std::string> corpus{"the cat", "the hat", "that"};
  const auto tok = Tokenizer::train(corpus, 8);
  const auto path = std::filesystem::temp_directory_path() / "xvspec_tok_roundtrip.json";
  tok.save(path);
  const auto back = Tokenizer::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back, tok);
  EXPECT_EQ(back.tokenize("the that"), tok.tokenize("the that"));
}

TEST(Tokenizer, RejectsWrongVersion) {
  auto doc = make_tokenizer("ab", {{"a", "b"}}).to_json();
  doc["version"] = 99;
  EXPECT_THROW(Tokenizer::from_json(doc), std::runtime_error);
}

TEST(DirectMap, IdenticalTokenizersAreTotal) {
  const std::vector<std::string> corpus{"abcab", "cab"};
  const auto tok = Tokenizer::train(corpus, 3);
  const auto map = DirectMap::build(tok, tok);
  EXPECT_EQ(map.size(), tok.vocab_size());
  for (std::size_t i = 0; i < tok.vocab_size(); ++i) {
    EXPECT_EQ(map.to_target(static_cast<TokenId>(i)), static_cast<TokenId>(i));
  }
}

TEST(DirectMap, DisjointMergesShareBaseSymbols) {
  const auto q = make_tokenizer("abc", {{"a", "b"}});
  const auto p = make_tokenizer("abc", {{"b", "c"}});
  const auto map = DirectMap::build(q, p);
  std::set<std::string> shared;
  for (TokenId d : map.draft_domain()) shared.insert(q.surface(d));
  EXPECT_EQ(shared, (std::set<std::string>{"a", "b", "c"}));
  EXPECT_FALSE(map.has_draft(*q.find("ab")));
}

TEST(DirectMap, MatchesSurfaceIntersectionAndInverts) {
  const auto q = make_tokenizer("abcd", {{"a", "b"}, {"c", "d"}, {"ab", "cd"}});
  const auto p = make_tokenizer("abcd", {{"c", "d"}, {"b", "cd"}, {"a", "b"}});
  const auto map = DirectMap::build(q, p);
  std::set<std::string> expected;
  for (const auto& s : q.vocab()) {
    if (p.find(s)) expected.insert(s);
  }
  std::set<std::string> got;
  for (TokenId d : map.draft_domain()) {
    const TokenId t = *map.to_target(d);
    EXPECT_EQ(q.surface(d), p.surface(t));
    EXPECT_EQ(map.to_draft(t), d);
    got.insert(q.surface(d));
  }
  EXPECT_EQ(got, expected);

  const auto swapped = DirectMap::build(p, q);
  const auto inv = map.inverse();
  EXPECT_EQ(swapped.draft_domain(), inv.draft_domain());
  for (TokenId t : swapped.draft_domain()) EXPECT_EQ(swapped.to_target(t), inv.to_target(t));
}
