#include "xvspec/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace xvspec {

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::Vanilla: return "vanilla";
    case DecodeMode::CrossVocabDM: return "dm";
    case DecodeMode::CrossVocabNGram: return "ngram";
  }
  return "?";
}

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "vanilla") return DecodeMode::Vanilla;
  if (name == "dm") return DecodeMode::CrossVocabDM;
  if (name == "ngram") return DecodeMode::CrossVocabNGram;
  throw std::invalid_argument("unknown decode mode '" + std::string(name) + "'");
}

void EngineConfig::validate() const {
  if (k < 1) throw std::invalid_argument("engine: k must be at least 1");
  if (max_new_tokens < 1) throw std::invalid_argument("engine: max_new_tokens must be at least 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("engine: temperature must be positive");
  if (!(stopping_threshold >= 0.0 && stopping_threshold <= 1.0)) {
    throw std::invalid_argument("engine: stopping_threshold must lie in [0, 1]");
  }
  if (!(cost.draft_step_cost > 0.0 && cost.target_step_cost > 0.0 && cost.verify_overhead_cost > 0.0)) {
    throw std::invalid_argument("engine: costs must be positive");
  }
}

bool early_exit(std::span<const double> accept_probs, double threshold) {
  double all_accepted = 1.0;
  for (double a : accept_probs) all_accepted *= a;
  return 1.0 - all_accepted > threshold;
}

CategoricalDist residual(const CategoricalDist& p, const CategoricalDist& q_prime) {
  if (p.size() != q_prime.size()) throw std::invalid_argument("residual: size mismatch");
  CategoricalDist out;
  out.space = p.space;
  out.probs.resize(p.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.probs[i] = std::max(0.0, p.probs[i] - q_prime.probs[i]);
    mass += out.probs[i];
  }
  if (mass < 1e-12) {
    out.probs = p.probs;
    return out;
  }
  for (double& x : out.probs) x /= mass;
  return out;
}

VerifyOutcome verify(std::span<const TokenId> proposal, std::span<const CategoricalDist> proposal_dists,
                     std::span<const CategoricalDist> target_dists, Rng& rng) {
  if (proposal_dists.size() != proposal.size() || target_dists.size() != proposal.size() + 1) {
    throw std::invalid_argument("verify: need one proposal distribution per token and one extra target distribution");
  }
  VerifyOutcome out;
  for (std::size_t i = 0; i < proposal.size(); ++i) {
    const TokenId t = proposal[i];
    const double q = proposal_dists[i][t];
    const double p = target_dists[i][t];
    if (!(q > 0.0)) throw std::invalid_argument("verify: proposed token has zero proposal probability");
    const double ratio = std::min(1.0, p / q);
    const double u = rng.uniform();
    out.ratios.push_back(ratio);
    out.draws.push_back(u);
    if (u < ratio) {
      out.accepted_tokens.push_back(t);
      ++out.accepted_count;
      continue;
    }
    out.correction = sample(residual(target_dists[i], proposal_dists[i]), rng);
    return out;
  }
  out.free_token = sample(target_dists[proposal.size()], rng);
  return out;
}

SpeedupSummary compute_speedup(std::span<const StepMetrics> metrics, const CostModel& cost) {
  if (metrics.empty()) throw std::invalid_argument("compute_speedup: no rounds");
  double decoded = 0.0;
  double spent = 0.0;
  for (const auto& m : metrics) {
    decoded += static_cast<double>(m.decoded);
    spent += m.draft_cost + m.target_cost;
  }
  const double rounds = static_cast<double>(metrics.size());
  SpeedupSummary s;
  s.acceleration_rate = decoded / rounds;
  s.overhead = spent / rounds / cost.target_step_cost;
  s.speedup = s.acceleration_rate / s.overhead;
  return s;
}

double acceptance_rate(std::span<const StepMetrics> metrics) {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  for (const auto& m : metrics) {
    proposed += m.proposed;
    accepted += m.accepted;
  }
  return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
}

namespace {

std::vector<TokenId> tail(const std::vector<TokenId>& ctx, std::size_t n) {
  const std::size_t from = ctx.size() > n ? ctx.size() - n : 0;
  return {ctx.begin() + static_cast<std::ptrdiff_t>(from), ctx.end()};
}

std::vector<std::string> surfaces(const Tokenizer& tok, std::span<const TokenId> ids) {
  std::vector<std::string> out;
  for (TokenId t : ids) out.push_back(tok.surface(t));
  return out;
}

}  // namespace

GenerateResult generate(const DecodeModels& models, std::string_view prompt, const EngineConfig& config, Rng& rng,
                        const DecodeHooks& hooks, std::ostream* trace) {
  config.validate();
  const bool vanilla = config.mode == DecodeMode::Vanilla;
  if (vanilla && models.drafter.vocab_size() != models.target.vocab_size()) {
    throw std::invalid_argument("generate: vanilla mode needs drafter and target to share a vocabulary");
  }
  if (models.drafter.vocab_size() != models.tok_q.vocab_size() ||
      models.target.vocab_size() != models.tok_p.vocab_size()) {
    throw std::invalid_argument("generate: model and tokenizer vocabularies disagree");
  }
  NGramCache* cache = config.mode == DecodeMode::CrossVocabNGram ? models.cache : nullptr;
  const std::size_t target_vocab = models.target.vocab_size();
  const bool mask = !vanilla && config.mask_unmapped && models.dmap.size() < models.drafter.vocab_size();

  std::optional<TokenId> eos;
  if (config.eos) eos = models.tok_p.find(*config.eos);

  std::vector<TokenId> ctx_p = models.tok_p.tokenize(prompt);
  std::vector<TokenId> ctx_q =
      vanilla ? ctx_p : reverse_translate(ctx_p, {}, {}, models.tok_q, models.tok_p, models.dmap).draft_tokens;
  const std::size_t keep = kMaxOrder;

  GenerateResult result;
  bool finished = false;
  while (!finished && result.tokens.size() < config.max_new_tokens) {
    if (cache != nullptr) cache->set_clock(cache->clock() + 1);

    // Draft.
    std::vector<TokenId> drafts;
    std::vector<CategoricalDist> qd;
    std::vector<double> predicted;
    std::vector<TokenId> work = ctx_q;
    for (std::size_t j = 0; j < config.k; ++j) {
      CategoricalDist q = next_token_dist(models.drafter, work, config.temperature);
      if (mask) {
        std::vector<double> kept(q.size(), 0.0);
        double z = 0.0;
        for (TokenId d : models.dmap.draft_domain()) z += q[d];
        for (TokenId d : models.dmap.draft_domain()) kept[static_cast<std::size_t>(d)] = q[d] / z;
        q.probs = std::move(kept);
      }
      const TokenId d = sample(q, rng);
      drafts.push_back(d);
      qd.push_back(std::move(q));
      work.push_back(d);
      if (hooks.accept_prob) {
        predicted.push_back(hooks.accept_prob(d));
        if (early_exit(predicted, config.stopping_threshold)) break;
      }
    }

    // Lift into target space.
    MappedProposal prop;
    if (vanilla) {
      prop.target_tokens = drafts;
      for (std::size_t i = 0; i < drafts.size(); ++i) {
        CategoricalDist e = qd[i];
        e.space = VocabSpace::Target;
        prop.point_probs.push_back(e[drafts[i]]);
        prop.elevated.push_back(std::move(e));
        prop.segments.push_back({SegmentKind::Direct, i, i + 1, std::nullopt});
      }
      prop.consumed = drafts.size();
    } else {
      prop = map_proposal(drafts, qd, models.dmap, cache, target_vocab);
    }

    // Score every proposed position plus the bonus position.
    std::vector<CategoricalDist> pd;
    std::vector<TokenId> scored = ctx_p;
    for (std::size_t i = 0; i <= prop.size(); ++i) {
      CategoricalDist p = next_token_dist(models.target, scored, config.temperature);
      p.space = VocabSpace::Target;
      pd.push_back(std::move(p));
      if (i < prop.size()) scored.push_back(prop.target_tokens[i]);
    }

    const VerifyOutcome outcome = verify(prop.target_tokens, prop.elevated, pd, rng);

    std::vector<TokenId> emitted = outcome.accepted_tokens;
    if (outcome.correction) emitted.push_back(*outcome.correction);
    if (outcome.free_token) emitted.push_back(*outcome.free_token);
    const std::size_t budget = config.max_new_tokens - result.tokens.size();
    if (emitted.size() > budget) emitted.resize(budget);
    if (eos) {
      auto it = std::find(emitted.begin(), emitted.end(), *eos);
      if (it != emitted.end()) {
        emitted.erase(it + 1, emitted.end());
        finished = true;
      }
    }

    ReverseResult back = vanilla ? ReverseResult{emitted, {}, {}}
                                 : reverse_translate(emitted, ctx_q, ctx_p, models.tok_q, models.tok_p, models.dmap);
    if (vanilla) {
      for (TokenId t : emitted) back.per_target.push_back({t});
    }

    StepMetrics metrics;
    metrics.drafted = drafts.size();
    metrics.proposed = prop.size();
    metrics.accepted = outcome.accepted_count;
    metrics.decoded = emitted.size();
    for (std::size_t i = 0; i < prop.size(); ++i) {
      if (prop.segments[i].kind != SegmentKind::NGram) continue;
      ++metrics.ngram_proposed;
      if (i < outcome.accepted_count) ++metrics.ngram_hits;
    }
    metrics.draft_cost = static_cast<double>(drafts.size()) * config.cost.draft_step_cost;
    metrics.target_cost = config.cost.target_step_cost + config.cost.verify_overhead_cost;

    for (std::size_t i = 0; i < emitted.size(); ++i) {
      OutputRecord rec;
      rec.target_token = emitted[i];
      rec.draft_tokens = back.per_target[i];
      rec.ctx_q = tail(ctx_q, keep);
      rec.ctx_p = tail(ctx_p, keep);
      rec.target_dist = pd[i];
      rec.origin = i < outcome.accepted_count ? TokenOrigin::Accepted
                   : outcome.correction       ? TokenOrigin::Correction
                                              : TokenOrigin::Free;
      rec.proposed_as_ngram = i < outcome.accepted_count && prop.segments[i].kind == SegmentKind::NGram;
      result.records.push_back(std::move(rec));
      ctx_p.push_back(emitted[i]);
      ctx_q.insert(ctx_q.end(), back.per_target[i].begin(), back.per_target[i].end());
    }

    std::vector<std::pair<TokenId, std::vector<TokenId>>> inserted;
    if (cache != nullptr && config.cache_insert) {
      for (const auto& [t, run] : back.new_entries) {
        if (cache->insert(t, run, cache->clock())) inserted.emplace_back(t, run);
      }
    }
    result.tokens.insert(result.tokens.end(), emitted.begin(), emitted.end());
    result.rounds.push_back(metrics);
    if (hooks.on_round) hooks.on_round(metrics);

    if (trace != nullptr) {
      nlohmann::json segs = nlohmann::json::array();
      for (const auto& s : prop.segments) {
        segs.push_back({{"kind", s.kind == SegmentKind::NGram ? "ngram" : "direct"},
                        {"draft", {s.draft_begin, s.draft_end}}});
      }
      std::vector<double> p_at;
      for (std::size_t i = 0; i < prop.size(); ++i) p_at.push_back(pd[i][prop.target_tokens[i]]);
      nlohmann::json events = nlohmann::json::array();
      for (const auto& [t, run] : inserted) {
        events.push_back({{"insert", models.tok_p.surface(t)}, {"draft", surfaces(models.tok_q, run)}});
      }
      nlohmann::json line = {{"round", result.rounds.size()},
                             {"draft", surfaces(models.tok_q, drafts)},
                             {"proposal", surfaces(models.tok_p, prop.target_tokens)},
                             {"segments", segs},
                             {"q_prime", prop.point_probs},
                             {"p", p_at},
                             {"draws", outcome.draws},
                             {"accepted", outcome.accepted_count},
                             {"emitted", surfaces(models.tok_p, emitted)},
                             {"cache", events}};
      if (!predicted.empty()) line["predicted_accept"] = predicted;
      *trace << line.dump() << '\n';
    }
  }
  result.text = models.tok_p.detokenize(result.tokens);
  return result;
}

}  // namespace xvspec
