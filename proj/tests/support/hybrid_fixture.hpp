#pragma once

#include <algorithm>
#include <vector>

#include "test_util.hpp"
#include "xvspec/adapt.hpp"

namespace xvspec::testing {

/// Drafter "abcdef" plus a draft-only "ef"; the target adds "ab" and "cd".
struct SplitVocabToy {
  Tokenizer q = make_tokenizer("abcdef", {{"e", "f"}});
  Tokenizer p = make_tokenizer("abcdef", {{"a", "b"}, {"c", "d"}});
  DirectMap dmap = DirectMap::build(q, p);
  TabularLM drafter{q.vocab_size(), 2, 4, 1.0};

  TokenId d(const char* s) const { return *q.find(s); }
  TokenId t(const char* s) const { return *p.find(s); }

  std::vector<TokenId> random_ctx(Rng& rng) const {
    std::vector<TokenId> ctx(rng.below(4));
    for (auto& x : ctx) x = static_cast<TokenId>(rng.below(q.vocab_size()));
    return ctx;
  }

  PositionRecord direct(Rng& rng) const {
    PositionRecord pos;
    pos.ctx_q = random_ctx(rng);
    const auto dom = dmap.draft_domain();
    const TokenId d0 = dom[rng.below(dom.size())];
    pos.draft_tokens = {d0};
    pos.target_token = *dmap.to_target(d0);
    pos.target_dist = random_dist(p.vocab_size(), rng, 2.0);
    pos.kind = Provenance::DirectMapped;
    return pos;
  }

  PositionRecord merged(Rng& rng) const {
    PositionRecord pos;
    pos.ctx_q = random_ctx(rng);
    const bool ab = rng.below(2) == 0;
    pos.draft_tokens = ab ? std::vector<TokenId>{d("a"), d("b")} : std::vector<TokenId>{d("c"), d("d")};
    pos.target_token = ab ? t("ab") : t("cd");
    pos.target_dist = random_dist(p.vocab_size(), rng, 2.0);
    pos.kind = Provenance::NGram;
    return pos;
  }

  std::vector<DistillBatchItem> random_batch(Rng& rng) {
    std::vector<DistillBatchItem> batch(1 + rng.below(2));
    for (auto& item : batch) {
      const std::size_t n = 1 + rng.below(4);
      for (std::size_t i = 0; i < n; ++i) item.positions.push_back(rng.below(2) ? merged(rng) : direct(rng));
    }
    return batch;
  }

  /// Every row the loss reads, randomized so rows differ from the backoff.
  std::vector<ContextKey> touch_rows(const std::vector<DistillBatchItem>& batch, Rng& rng) {
    std::vector<ContextKey> keys;
    for (const auto& item : batch) {
      for (const auto& pos : item.positions) {
        std::vector<TokenId> ctx = pos.ctx_q;
        for (std::size_t j = 0; j < pos.draft_tokens.size(); ++j) {
          keys.push_back(drafter.key_for(ctx));
          ctx.push_back(pos.draft_tokens[j]);
        }
      }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (ContextKey k : keys) {
      auto& row = drafter.materialize(k);
      for (double& x : row) x = 2.0 * (2.0 * rng.uniform() - 1.0);
    }
    return keys;
  }
};

inline NGramSupport toy_support(const SplitVocabToy& w) { return NGramSupport{{{w.t("ab"), w.d("a")}, {w.t("cd"), w.d("c")}}}; }

}  // namespace xvspec::testing
