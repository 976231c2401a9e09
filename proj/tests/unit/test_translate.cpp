#include <gtest/gtest.h>

#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "xvspec/translate.hpp"

using namespace xvspec;
using xvspec::testing::make_tokenizer;
using xvspec::testing::random_dist;

namespace {

struct Snow {
  std::shared_ptr<const Tokenizer> q;
  std::shared_ptr<const Tokenizer> p;
  DirectMap dmap;
  Snow()
      : q(std::make_shared<Tokenizer>(make_tokenizer(
            "Snowaefiklmpst ", {{"S", "n"}, {"Sn", "o"}, {"Sno", "w"}, {"l", "a"}, {"k", "e"}, {" ", "i"},
                                {" i", "s"}, {" ", "f"}}))),
        p(std::make_shared<Tokenizer>(make_tokenizer(
            "Snowaefiklmpst ", {{"S", "n"}, {"Sn", "o"}, {"Sno", "w"}, {"l", "a"}, {"k", "e"}, {" ", "i"},
                                {" i", "s"}, {" ", "f"}, {" f", "la"}, {" fla", "ke"}}))),
        dmap(DirectMap::build(*q, *p)) {}
  TokenId d(const std::string& s) const { return *q->find(s); }
  TokenId t(const std::string& s) const { return *p->find(s); }
};

CategoricalDist peaked(std::size_t n, TokenId at, double mass) {
  std::vector<double> probs(n, (1.0 - mass) / static_cast<double>(n - 1));
  probs[static_cast<std::size_t>(at)] = mass;
  return xvspec::testing::id_dist(probs);
}

}  // namespace

TEST(MapProposal, FigureExampleMergesFlake) {
  Snow w;
  NGramCache cache(w.q, w.p);
  const std::vector<TokenId> run{w.d(" f"), w.d("la"), w.d("ke")};
  cache.insert(w.t(" flake"), run, 0);
  const std::vector<TokenId> drafts{w.d("Snow"), w.d(" f"), w.d("la"), w.d("ke"), w.d(" is")};
  const std::size_t vq = w.q->vocab_size();
  std::vector<CategoricalDist> dists{peaked(vq, drafts[0], 0.9), peaked(vq, drafts[1], 0.5),
                                     peaked(vq, drafts[2], 0.4), peaked(vq, drafts[3], 0.3),
                                     peaked(vq, drafts[4], 0.8)};
  const auto out = map_proposal(drafts, dists, w.dmap, &cache, w.p->vocab_size());
  EXPECT_EQ(out.target_tokens, (std::vector<TokenId>{w.t("Snow"), w.t(" flake"), w.t(" is")}));
  EXPECT_NEAR(out.point_probs[1], 0.5 * 0.4 * 0.3, 1e-15);
  EXPECT_NEAR(out.point_probs[1], 0.060, 1e-12);
  EXPECT_NEAR(out.point_probs[0], 0.9, 1e-15);
  ASSERT_EQ(out.segments.size(), 3u);
  EXPECT_EQ(out.segments[1].kind, SegmentKind::NGram);
  EXPECT_EQ(out.segments[1].draft_begin, 1u);
  EXPECT_EQ(out.segments[1].draft_end, 4u);
  EXPECT_EQ(out.consumed, 5u);
  EXPECT_FALSE(out.truncated);
  EXPECT_EQ(w.p->detokenize(out.target_tokens), w.q->detokenize(drafts));
  for (const auto& e : out.elevated) {
    EXPECT_TRUE(e.subnormalized);
    EXPECT_EQ(e.space, VocabSpace::Target);
  }
}

TEST(MapProposal, IdentityReduction) {
  Snow w;
  const auto dmap = DirectMap::build(*w.p, *w.p);
  NGramCache cache(w.p, w.p);
  Rng rng(4);
  const std::size_t v = w.p->vocab_size();
  std::vector<TokenId> drafts;
  std::vector<CategoricalDist> dists;
  for (int i = 0; i < 4; ++i) {
    dists.push_back(random_dist(v, rng));
    drafts.push_back(static_cast<TokenId>(rng.below(v)));
  }
  const auto out = map_proposal(drafts, dists, dmap, &cache, v);
  EXPECT_EQ(out.target_tokens, drafts);
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    EXPECT_EQ(out.elevated[i].probs, dists[i].probs);
    EXPECT_NEAR(out.elevated[i].total(), 1.0, 1e-12);
  }
}

TEST(MapProposal, TruncatesAtUnmappedToken) {
  const auto q2 = make_tokenizer("Snowaefiklmpst ", {{"m", "p"}});
  const auto p2 = make_tokenizer("Snowaefiklmpst ", {});
  const auto dmap = DirectMap::build(q2, p2);
  const std::size_t vq = q2.vocab_size();
  const std::vector<TokenId> drafts{*q2.find("a"), *q2.find("mp"), *q2.find("s")};
  Rng rng(1);
  std::vector<CategoricalDist> dists{random_dist(vq, rng), random_dist(vq, rng), random_dist(vq, rng)};
  const auto out = map_proposal(drafts, dists, dmap, nullptr, p2.vocab_size());
  EXPECT_EQ(out.size(), 1u);
  EXPECT_TRUE(out.truncated);
  EXPECT_EQ(out.consumed, 1u);
}

TEST(Elevate, BigramSplitsPrefixMass) {
  Snow w;
  const std::size_t vq = w.q->vocab_size();
  auto q = peaked(vq, w.d(" f"), 0.5);
  NGramMatch m;
  m.target_token = w.t(" fla");
  m.draft_seq = {w.d(" f"), w.d("la")};
  m.sub_dists = {q, peaked(vq, w.d("la"), 0.4)};
  const auto e = elevate_distribution(q, w.dmap, w.p->vocab_size(), &m);
  EXPECT_NEAR(e[w.t(" fla")], 0.20, 1e-15);
  EXPECT_NEAR(e[w.t(" f")], 0.30, 1e-15);
  EXPECT_NEAR(e[w.t(" fla")] + e[w.t(" f")], 0.5, 1e-15);
}

TEST(Elevate, WithoutMatchRestrictsToDirectMap) {
  Snow w;
  Rng rng(2);
  const auto q = random_dist(w.q->vocab_size(), rng);
  const auto e = elevate_distribution(q, w.dmap, w.p->vocab_size());
  for (std::size_t t = 0; t < w.p->vocab_size(); ++t) {
    const auto d = w.dmap.to_draft(static_cast<TokenId>(t));
    EXPECT_EQ(e.probs[t], d ? q[*d] : 0.0);
  }
}

TEST(Elevate, RandomSmallVocabMassAccounting) {
  // Drafter vocab of six: five shared symbols plus one draft-only merge.
  const auto q_tok = make_tokenizer("abcde", {{"d", "e"}});
  const auto p_tok = make_tokenizer("abcde", {{"a", "b"}});
  ASSERT_EQ(q_tok.vocab_size(), 6u);
  const auto dmap = DirectMap::build(q_tok, p_tok);
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto q = random_dist(6, rng, 3.0);
    NGramMatch m;
    m.target_token = *p_tok.find("ab");
    m.draft_seq = {*q_tok.find("a"), *q_tok.find("b")};
    m.sub_dists = {q, random_dist(6, rng, 3.0)};
    const auto e = elevate_distribution(q, dmap, p_tok.vocab_size(), &m);
    double mapped = 0.0;
    for (TokenId d : dmap.draft_domain()) mapped += q[d];
    for (double x : e.probs) EXPECT_GE(x, 0.0);
    EXPECT_NEAR(e.total(), mapped, 1e-12);
    EXPECT_LT(e.total(), 1.0);
  }
}

TEST(ReverseTranslate, FigureExampleDiscoversEntry) {
  Snow w;
  const std::vector<TokenId> ctx_q{w.d("Snow")};
  const std::vector<TokenId> ctx_p{w.t("Snow")};
  const std::vector<TokenId> accepted{w.t(" flake")};
  const auto r = reverse_translate(accepted, ctx_q, ctx_p, *w.q, *w.p, w.dmap);
  EXPECT_EQ(r.draft_tokens, (std::vector<TokenId>{w.d(" f"), w.d("la"), w.d("ke")}));
  ASSERT_EQ(r.new_entries.size(), 1u);
  EXPECT_EQ(r.new_entries[0].first, w.t(" flake"));
  EXPECT_EQ(r.new_entries[0].second, r.draft_tokens);
}

TEST(ReverseTranslate, IdenticalVocabulariesYieldNoCandidates) {
  Snow w;
  const auto dmap = DirectMap::build(*w.p, *w.p);
  const std::vector<TokenId> accepted{w.t(" flake"), w.t(" is")};
  const auto r = reverse_translate(accepted, {}, {}, *w.p, *w.p, dmap);
  EXPECT_EQ(r.draft_tokens, accepted);
  EXPECT_TRUE(r.new_entries.empty());
}

TEST(ReverseTranslate, SingleTokenSurfaceIsDirect) {
  Snow w;
  const std::vector<TokenId> accepted{w.t(" is")};
  const auto r = reverse_translate(accepted, {}, {}, *w.q, *w.p, w.dmap);
  EXPECT_EQ(r.draft_tokens, (std::vector<TokenId>{w.d(" is")}));
  EXPECT_TRUE(r.new_entries.empty());
}

TEST(ReverseTranslate, InconsistentContextsThrow) {
  Snow w;
  const std::vector<TokenId> ctx_q{w.d("Snow")};
  const std::vector<TokenId> ctx_p{w.t(" is")};
  EXPECT_THROW(reverse_translate(std::vector<TokenId>{w.t(" is")}, ctx_q, ctx_p, *w.q, *w.p, w.dmap),
               std::logic_error);
}

TEST(ReverseTranslate, SurfacePreservedOnRandomText) {
  Rng rng(8);
  std::vector<std::string> corpus;
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (int j = 0; j < 8; ++j) s += "abc d"[rng.below(5)];
    corpus.push_back(s);
  }
  const auto q = Tokenizer::train(corpus, 5);
  const auto p = Tokenizer::train(corpus, 25);
  const auto dmap = DirectMap::build(q, p);
  for (int i = 0; i < 100; ++i) {
    const auto ids = p.tokenize(corpus[rng.below(corpus.size())]);
    const auto r = reverse_translate(ids, {}, {}, q, p, dmap);
    EXPECT_EQ(q.detokenize(r.draft_tokens), p.detokenize(ids));
    ASSERT_EQ(r.per_target.size(), ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) EXPECT_EQ(q.detokenize(r.per_target[k]), p.surface(ids[k]));
    for (const auto& [t, run] : r.new_entries) {
      EXPECT_GE(run.size(), 2u);
      EXPECT_EQ(q.detokenize(run), p.surface(t));
    }
  }
}
