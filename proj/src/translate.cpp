#include "xvspec/translate.hpp"

#include <stdexcept>

namespace xvspec {

CategoricalDist elevate_distribution(const CategoricalDist& q, const DirectMap& dmap, std::size_t target_vocab,
                                     const NGramMatch* matched) {
  if (q.size() != dmap.draft_vocab_size()) throw std::invalid_argument("elevate: drafter distribution size mismatch");
  CategoricalDist out;
  out.space = VocabSpace::Target;
  out.subnormalized = true;
  out.probs.assign(target_vocab, 0.0);
  for (TokenId d : dmap.draft_domain()) {
    const TokenId t = *dmap.to_target(d);
    if (static_cast<std::size_t>(t) >= target_vocab) throw std::invalid_argument("elevate: target vocab too small");
    out.probs[static_cast<std::size_t>(t)] = q[d];
  }
  if (matched != nullptr) {
    const auto& seq = matched->draft_seq;
    if (seq.size() < 2 || matched->sub_dists.size() != seq.size()) {
      throw std::invalid_argument("elevate: n-gram match needs one distribution per drafter token");
    }
    double joint = q[seq[0]];
    for (std::size_t j = 1; j < seq.size(); ++j) joint *= matched->sub_dists[j][seq[j]];
    out.probs.at(static_cast<std::size_t>(matched->target_token)) = joint;
    if (const auto prefix = dmap.to_target(seq[0])) out.probs[static_cast<std::size_t>(*prefix)] = q[seq[0]] - joint;
  }
  return out;
}

MappedProposal map_proposal(std::span<const TokenId> draft_tokens, std::span<const CategoricalDist> draft_dists,
                            const DirectMap& dmap, NGramCache* cache, std::size_t target_vocab) {
  if (draft_tokens.size() != draft_dists.size()) throw std::invalid_argument("map_proposal: one distribution per token");
  MappedProposal out;
  std::size_t i = 0;
  while (i < draft_tokens.size()) {
    std::optional<CacheMatch> hit;
    if (cache != nullptr) hit = cache->lookup_longest(draft_tokens, i);
    if (hit) {
      NGramMatch match;
      match.target_token = hit->entry.target_token;
      match.draft_seq = hit->entry.draft_seq;
      match.sub_dists.assign(draft_dists.begin() + static_cast<std::ptrdiff_t>(i),
                             draft_dists.begin() + static_cast<std::ptrdiff_t>(i + hit->matched_len));
      out.elevated.push_back(elevate_distribution(draft_dists[i], dmap, target_vocab, &match));
      out.target_tokens.push_back(match.target_token);
      out.segments.push_back({SegmentKind::NGram, i, i + hit->matched_len, hit->entry});
      i += hit->matched_len;
    } else if (const auto t = dmap.to_target(draft_tokens[i])) {
      out.elevated.push_back(elevate_distribution(draft_dists[i], dmap, target_vocab));
      out.target_tokens.push_back(*t);
      out.segments.push_back({SegmentKind::Direct, i, i + 1, std::nullopt});
      ++i;
    } else {
      out.truncated = true;
      break;
    }
    out.point_probs.push_back(out.elevated.back()[out.target_tokens.back()]);
  }
  out.consumed = i;
  return out;
}

ReverseResult reverse_translate(std::span<const TokenId> accepted, std::span<const TokenId> ctx_q,
                                std::span<const TokenId> ctx_p, const Tokenizer& tok_q, const Tokenizer& tok_p,
                                const DirectMap& dmap) {
  if (tok_q.detokenize(ctx_q) != tok_p.detokenize(ctx_p)) {
    throw std::logic_error("reverse_translate: drafter and target contexts spell different text");
  }
  ReverseResult out;
  for (TokenId t : accepted) {
    std::vector<TokenId> run;
    if (const auto d = dmap.to_draft(t)) {
      run.push_back(*d);
    } else {
      run = tok_q.tokenize(tok_p.surface(t));
      if (run.size() >= 2) out.new_entries.emplace_back(t, run);
    }
    out.draft_tokens.insert(out.draft_tokens.end(), run.begin(), run.end());
    out.per_target.push_back(std::move(run));
  }
  return out;
}

}  // namespace xvspec
