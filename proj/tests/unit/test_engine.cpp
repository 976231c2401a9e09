#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "xvspec/engine.hpp"

using namespace xvspec;
using xvspec::testing::id_dist;
using xvspec::testing::MiniWorld;
using xvspec::testing::random_dist;

namespace {

CategoricalDist subnormal(std::vector<double> probs) {
  auto d = id_dist(std::move(probs), VocabSpace::Target);
  d.subnormalized = true;
  return d;
}

}  // namespace

TEST(Residual, EqualDistributionsFallBackToTarget) {
  const auto p = id_dist({0.2, 0.3, 0.5});
  const auto r = residual(p, p);
  EXPECT_EQ(r.probs, p.probs);
}

TEST(Residual, TwoTokenExample) {
  const auto r = residual(id_dist({0.7, 0.3}), id_dist({0.3, 0.7}));
  EXPECT_NEAR(r.probs[0], 1.0, 1e-15);
  EXPECT_NEAR(r.probs[1], 0.0, 1e-15);
}

TEST(Residual, RandomSubnormalizedProposals) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(8);
    const auto p = random_dist(n, rng, 3.0);
    auto q = random_dist(n, rng, 3.0);
    const double keep = 0.3 + 0.7 * rng.uniform();
    for (double& x : q.probs) x *= keep;
    q.subnormalized = true;
    const auto r = residual(p, q);
    EXPECT_NEAR(r.total(), 1.0, 1e-12);
    for (std::size_t k = 0; k < n; ++k) {
      EXPECT_GE(r.probs[k], 0.0);
      if (q.probs[k] >= p.probs[k]) {
        EXPECT_EQ(r.probs[k], 0.0);
      }
    }
  }
}

TEST(Verify, MatchingDistributionsAcceptEverything) {
  Rng dist_rng(1);
  std::vector<CategoricalDist> p;
  for (int i = 0; i < 4; ++i) p.push_back(random_dist(5, dist_rng));
  const std::vector<TokenId> proposal{0, 3, 1};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto out = verify(proposal, std::span(p).first(3), p, rng);
    EXPECT_EQ(out.accepted_count, 3u);
    EXPECT_FALSE(out.correction);
    ASSERT_TRUE(out.free_token);
    for (double r : out.ratios) EXPECT_EQ(r, 1.0);
  }
}

TEST(Verify, OverProposedTokenRejectedAndExcludedFromCorrection) {
  // Find a stream whose first draw is 0.6-ish (above the 0.5 ratio).
  std::uint64_t seed = 0;
  for (;; ++seed) {
    Rng probe(seed);
    if (probe.uniform() > 0.5) break;
  }
  const std::vector<CategoricalDist> q{subnormal({0.5, 0.25, 0.25})};
  const std::vector<CategoricalDist> p{id_dist({0.25, 0.5, 0.25}), id_dist({1.0, 0.0, 0.0})};
  Rng rng(seed);
  const auto out = verify(std::vector<TokenId>{0}, q, p, rng);
  EXPECT_EQ(out.accepted_count, 0u);
  ASSERT_EQ(out.ratios.size(), 1u);
  EXPECT_DOUBLE_EQ(out.ratios[0], 0.5);
  EXPECT_GT(out.draws[0], 0.5);
  ASSERT_TRUE(out.correction);
  EXPECT_NE(*out.correction, 0);
  EXPECT_FALSE(out.free_token);
}

TEST(Verify, ZeroProposalProbabilityThrows) {
  const std::vector<CategoricalDist> q{subnormal({0.0, 0.5})};
  const std::vector<CategoricalDist> p{id_dist({0.5, 0.5}), id_dist({0.5, 0.5})};
  Rng rng(1);
  EXPECT_THROW(verify(std::vector<TokenId>{0}, q, p, rng), std::invalid_argument);
}

TEST(Verify, MonteCarloSingleTokenMatchesTarget) {
  const auto p = id_dist({0.6, 0.3, 0.1});
  const auto q = id_dist({0.2, 0.5, 0.3});
  const std::vector<CategoricalDist> targets{p, id_dist({1.0, 0.0, 0.0})};
  Rng rng(99);
  const int n = 100000;
  std::vector<double> freq(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const TokenId d = sample(q, rng);
    const std::vector<CategoricalDist> qs{q};
    const auto out = verify(std::vector<TokenId>{d}, qs, targets, rng);
    const TokenId first = out.accepted_count == 1 ? d : *out.correction;
    freq[static_cast<std::size_t>(first)] += 1.0 / n;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < 3; ++i) tv += 0.5 * std::abs(freq[i] - p.probs[i]);
  EXPECT_LT(tv, 0.01);
}

TEST(Verify, AcceptanceProbabilityIsMinRatio) {
  // Acceptance frequency at a fixed p tracks min(1, p/q') as q' varies.
  const double p = 0.3;
  double prev = 1.1;
  for (double qv : {0.1, 0.3, 0.45, 0.6, 0.9}) {
    Rng rng(5);
    int accepted = 0;
    const int n = 20000;
    const std::vector<CategoricalDist> qs{subnormal({qv, 0.0})};
    const std::vector<CategoricalDist> ps{id_dist({p, 1.0 - p}), id_dist({0.5, 0.5})};
    for (int i = 0; i < n; ++i) accepted += verify(std::vector<TokenId>{0}, qs, ps, rng).accepted_count == 1;
    const double rate = static_cast<double>(accepted) / n;
    EXPECT_NEAR(rate, std::min(1.0, p / qv), 4.0 * std::sqrt(0.25 / n));
    EXPECT_LE(rate, prev);
    prev = rate;
  }
}

TEST(EarlyExit, Examples) {
  EXPECT_FALSE(early_exit(std::vector<double>{0.9, 0.8}, 0.3));
  EXPECT_TRUE(early_exit(std::vector<double>{0.9, 0.8, 0.7}, 0.3));
  EXPECT_FALSE(early_exit(std::vector<double>{1e-9, 1e-9, 1e-9}, 1.0));
  EXPECT_TRUE(early_exit(std::vector<double>{0.99}, 0.0));
  EXPECT_FALSE(early_exit(std::vector<double>{1.0}, 0.0));
}

TEST(EarlyExit, MonotoneInAcceptProbs) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> probs(1 + rng.below(4));
    for (double& x : probs) x = rng.uniform();
    const double gamma = rng.uniform();
    if (!early_exit(probs, gamma)) continue;
    probs[rng.below(probs.size())] *= rng.uniform();
    EXPECT_TRUE(early_exit(probs, gamma));
  }
}

TEST(Speedup, FormulaExamples) {
  const CostModel cost{0.25, 1.0, 0.0};
  StepMetrics m;
  m.decoded = 2;
  m.draft_cost = 0.25;
  m.target_cost = 1.0;
  const std::vector<StepMetrics> one{m};
  const auto s = compute_speedup(one, cost);
  EXPECT_DOUBLE_EQ(s.acceleration_rate, 2.0);
  EXPECT_DOUBLE_EQ(s.overhead, 1.25);
  EXPECT_DOUBLE_EQ(s.speedup, 1.6);

  m.draft_cost = 0.0;
  const std::vector<StepMetrics> free_draft{m};
  const auto t = compute_speedup(free_draft, cost);
  EXPECT_DOUBLE_EQ(t.overhead, 1.0);
  EXPECT_DOUBLE_EQ(t.speedup, t.acceleration_rate);
  EXPECT_THROW(compute_speedup(std::vector<StepMetrics>{}, cost), std::invalid_argument);
}

TEST(Speedup, LedgerOverGeneratedRounds) {
  MiniWorld w(2, 0.6, true);
  EngineConfig cfg;
  cfg.k = 3;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 40;
  cfg.mode = DecodeMode::Vanilla;
  Rng rng(4);
  const auto res = generate(w.models(), w.prompt(0), cfg, rng);
  ASSERT_FALSE(res.rounds.empty());
  // Ledger: one target call per round plus k draft calls per drafted token
  // and a fixed verification charge.
  double decoded = 0.0, spent = 0.0;
  std::size_t emitted = 0;
  for (const auto& r : res.rounds) {
    decoded += static_cast<double>(r.decoded);
    emitted += r.decoded;
    spent += static_cast<double>(r.drafted) * cfg.cost.draft_step_cost + cfg.cost.target_step_cost +
             cfg.cost.verify_overhead_cost;
    EXPECT_LE(r.accepted, r.proposed);
  }
  EXPECT_EQ(emitted, res.tokens.size());
  const double rounds = static_cast<double>(res.rounds.size());
  const auto s = compute_speedup(res.rounds, cfg.cost);
  EXPECT_NEAR(s.acceleration_rate, decoded / rounds, 1e-12);
  EXPECT_NEAR(s.overhead, spent / rounds / cfg.cost.target_step_cost, 1e-12);
  EXPECT_NEAR(s.speedup, (decoded / rounds) / (spent / rounds), 1e-12);
}

TEST(AcceptanceRate, ExcludesCorrectionsAndFreeTokens) {
  StepMetrics a;
  a.proposed = 3;
  a.accepted = 3;
  a.decoded = 4;
  StepMetrics b;
  b.proposed = 3;
  b.accepted = 1;
  b.decoded = 2;
  const std::vector<StepMetrics> rounds{a, b};
  EXPECT_DOUBLE_EQ(acceptance_rate(rounds), 4.0 / 6.0);
}

TEST(Generate, DrafterEqualsTargetAcceptsEverything) {
  MiniWorld w(3, 0.6, true);
  EngineConfig cfg;
  cfg.k = 3;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 200;
  cfg.eos.reset();
  cfg.mode = DecodeMode::Vanilla;
  const DecodeModels same{*w.target, *w.target, *w.tok_p, *w.tok_p, w.dmap, nullptr};
  Rng rng(8);
  const auto res = generate(same, w.prompt(1), cfg, rng);
  EXPECT_DOUBLE_EQ(acceptance_rate(res.rounds), 1.0);
  for (std::size_t i = 0; i + 1 < res.rounds.size(); ++i) {
    EXPECT_EQ(res.rounds[i].accepted, 3u);
    EXPECT_EQ(res.rounds[i].decoded, 4u);
  }
  EXPECT_EQ(res.tokens.size(), 200u);
}

TEST(Generate, IdentityReductionAcrossModes) {
  MiniWorld w(4, 0.6, true);
  for (std::size_t i = 0; i < 20; ++i) {
    EngineConfig cfg;
    cfg.temperature = 1.0;
    cfg.max_new_tokens = 30;
    cfg.mode = DecodeMode::Vanilla;
    Rng r1(i);
    const auto vanilla = generate(w.models(), w.prompt(i), cfg, r1);
    NGramCache cache(w.tok_p, w.tok_p);
    cfg.mode = DecodeMode::CrossVocabNGram;
    Rng r2(i);
    const auto cross = generate(w.models(&cache), w.prompt(i), cfg, r2);
    EXPECT_EQ(vanilla.tokens, cross.tokens);
    EXPECT_EQ(vanilla.text, cross.text);
    EXPECT_EQ(cache.size(), 0u);
  }
}

TEST(Generate, RecordsSpellTheSameTextInBothSpaces) {
  MiniWorld w(5);
  NGramCache cache(w.tok_q, w.tok_p);
  EngineConfig cfg;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 40;
  cfg.mode = DecodeMode::CrossVocabNGram;
  for (std::size_t i = 0; i < 20; ++i) {
    Rng rng(i);
    const auto res = generate(w.models(&cache), w.prompt(i), cfg, rng);
    std::string from_records;
    for (const auto& r : res.records) {
      EXPECT_EQ(w.tok_q->detokenize(r.draft_tokens), w.tok_p->surface(r.target_token));
      EXPECT_NEAR(r.target_dist.total(), 1.0, 1e-9);
      from_records += w.tok_p->surface(r.target_token);
    }
    EXPECT_EQ(w.tok_p->detokenize(res.tokens), from_records);
    EXPECT_LE(res.tokens.size(), cfg.max_new_tokens);
  }
  EXPECT_GT(cache.size(), 0u);
}

TEST(Generate, StopsAtEndSymbol) {
  MiniWorld w(6);
  EngineConfig cfg;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 500;
  cfg.mode = DecodeMode::CrossVocabDM;
  Rng rng(2);
  const auto res = generate(w.models(), w.prompt(3), cfg, rng);
  ASSERT_FALSE(res.tokens.empty());
  EXPECT_EQ(w.tok_p->surface(res.tokens.back()), ".");
  for (std::size_t i = 0; i + 1 < res.tokens.size(); ++i) EXPECT_NE(w.tok_p->surface(res.tokens[i]), ".");
}

TEST(Generate, DeterministicForSeed) {
  MiniWorld w(7);
  EngineConfig cfg;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 30;
  cfg.mode = DecodeMode::CrossVocabNGram;
  NGramCache c1(w.tok_q, w.tok_p), c2(w.tok_q, w.tok_p);
  Rng r1(11), r2(11);
  std::ostringstream t1, t2;
  const auto a = generate(w.models(&c1), w.prompt(0), cfg, r1, {}, &t1);
  const auto b = generate(w.models(&c2), w.prompt(0), cfg, r2, {}, &t2);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(t1.str(), t2.str());
}

TEST(Generate, TraceHasOneLinePerRound) {
  MiniWorld w(8);
  NGramCache cache(w.tok_q, w.tok_p);
  EngineConfig cfg;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 30;
  cfg.mode = DecodeMode::CrossVocabNGram;
  Rng rng(1);
  std::ostringstream trace;
  const auto res = generate(w.models(&cache), w.prompt(0), cfg, rng, {}, &trace);
  std::istringstream in(trace.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto doc = nlohmann::json::parse(line);
    for (const char* key : {"round", "proposal", "q_prime", "p", "draws", "accepted", "emitted", "cache"}) {
      EXPECT_TRUE(doc.contains(key)) << key;
    }
    ++lines;
  }
  EXPECT_EQ(lines, res.rounds.size());
}

TEST(Generate, EarlyExitHook) {
  MiniWorld w(9, 0.6, true);
  EngineConfig cfg;
  cfg.k = 4;
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 40;
  cfg.mode = DecodeMode::Vanilla;
  DecodeHooks hooks;
  hooks.accept_prob = [](TokenId) { return 0.9; };

  cfg.stopping_threshold = 0.0;
  Rng r0(3);
  for (const auto& r : generate(w.models(), w.prompt(0), cfg, r0, hooks).rounds) EXPECT_EQ(r.drafted, 1u);

  cfg.stopping_threshold = 1.0;
  Rng r1(3);
  const auto full = generate(w.models(), w.prompt(0), cfg, r1, hooks).rounds;
  for (std::size_t i = 0; i + 1 < full.size(); ++i) EXPECT_EQ(full[i].drafted, 4u);
}

TEST(EngineConfig, Validation) {
  EngineConfig cfg;
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = EngineConfig{};
  cfg.max_new_tokens = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = EngineConfig{};
  cfg.cost.draft_step_cost = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_decode_mode(to_string(DecodeMode::CrossVocabNGram)), DecodeMode::CrossVocabNGram);
  EXPECT_THROW(parse_decode_mode("bogus"), std::invalid_argument);
}
