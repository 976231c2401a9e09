#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvspec/lm.hpp"
#include "xvspec/ngram_cache.hpp"
#include "xvspec/tokenizer.hpp"

namespace xvspec {

enum class SegmentKind { Direct, NGram };

/// Where one target-space proposal position came from: a half-open range of
/// drafter positions, plus the cache entry for merged runs.
struct Segment {
  SegmentKind kind = SegmentKind::Direct;
  std::size_t draft_begin = 0;
  std::size_t draft_end = 0;
  std::optional<NGramEntry> entry;
};

/// A drafter proposal lifted into the target vocabulary.
struct MappedProposal {
  std::vector<TokenId> target_tokens;
  /// Elevated drafter distribution per position, over the target vocabulary.
  std::vector<CategoricalDist> elevated;
  /// elevated[i][target_tokens[i]]
  std::vector<double> point_probs;
  std::vector<Segment> segments;
  /// Drafter tokens covered by the emitted positions.
  std::size_t consumed = 0;
  /// True when a drafter token with no target image cut the proposal short.
  bool truncated = false;

  std::size_t size() const { return target_tokens.size(); }
};

/// The n-gram matched in the current proposal: its target token, drafter run
/// and the drafter's conditionals along that run.
struct NGramMatch {
  TokenId target_token = -1;
  std::vector<TokenId> draft_seq;
  std::vector<CategoricalDist> sub_dists;
};

/// Re-expresses a drafter distribution over the target vocabulary.
///
/// Direct-mapped tokens keep their probability. With a match, the merged
/// token gets the product of the conditionals along its run and the image of
/// the run's first token keeps what is left of that token's mass. Every other
/// target token gets zero, so the result is sub-normalized in general.
CategoricalDist elevate_distribution(const CategoricalDist& q, const DirectMap& dmap, std::size_t target_vocab,
                                     const NGramMatch* matched = nullptr);

/// Left-to-right scan: the longest cache match wins, else the direct image,
/// else the proposal is cut at that token. `cache` may be null.
MappedProposal map_proposal(std::span<const TokenId> draft_tokens, std::span<const CategoricalDist> draft_dists,
                            const DirectMap& dmap, NGramCache* cache, std::size_t target_vocab);

struct ReverseResult {
  std::vector<TokenId> draft_tokens;
  /// Drafter tokens spelling each accepted target token.
  std::vector<std::vector<TokenId>> per_target;
  /// (target token, drafter run) pairs where the run has two or more tokens.
  std::vector<std::pair<TokenId, std::vector<TokenId>>> new_entries;
};

/// Retokenizes accepted target tokens in drafter space, one target token at a
/// time so drafter context stays aligned with target token boundaries.
/// Throws if the two contexts do not spell the same text.
ReverseResult reverse_translate(std::span<const TokenId> accepted, std::span<const TokenId> ctx_q,
                                std::span<const TokenId> ctx_p, const Tokenizer& tok_q, const Tokenizer& tok_p,
                                const DirectMap& dmap);

}  // namespace xvspec
