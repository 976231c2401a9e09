#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "xvspec/lm.hpp"
#include "xvspec/ngram_cache.hpp"
#include "xvspec/rng.hpp"
#include "xvspec/tokenizer.hpp"
#include "xvspec/translate.hpp"

namespace xvspec {

enum class DecodeMode { Vanilla, CrossVocabDM, CrossVocabNGram };

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);

/// Abstract per-call latencies. Speedups computed from these are comparable
/// between runs, not with wall-clock numbers from real hardware.
struct CostModel {
  double draft_step_cost = 0.0716;
  double target_step_cost = 1.0;
  double verify_overhead_cost = 0.005;
};

struct EngineConfig {
  std::size_t k = 3;
  std::size_t max_new_tokens = 64;
  double temperature = 0.01;
  /// Early-exit threshold; only consulted when an acceptance predictor is hooked in.
  double stopping_threshold = 1.0;
  DecodeMode mode = DecodeMode::Vanilla;
  CostModel cost;
  /// Draft only from tokens with a target image (cross-vocab modes).
  bool mask_unmapped = false;
  bool cache_insert = true;
  /// Generation stops after this surface is emitted.
  std::optional<std::string> eos = ".";

  void validate() const;
};

struct VerifyOutcome {
  std::size_t accepted_count = 0;
  std::vector<TokenId> accepted_tokens;
  std::optional<TokenId> correction;
  std::optional<TokenId> free_token;
  std::vector<double> ratios;
  std::vector<double> draws;
};

/// True once the chance that some drafted token is rejected, 1 - prod(accept),
/// exceeds `threshold`.
bool early_exit(std::span<const double> accept_probs, double threshold);

/// norm(max(0, p - q')); falls back to p when the leftover mass is below 1e-12.
CategoricalDist residual(const CategoricalDist& p, const CategoricalDist& q_prime);

/// Sequential rejection sampling of `proposal` against one target
/// distribution per position plus one for the bonus position.
VerifyOutcome verify(std::span<const TokenId> proposal, std::span<const CategoricalDist> proposal_dists,
                     std::span<const CategoricalDist> target_dists, Rng& rng);

struct StepMetrics {
  std::size_t drafted = 0;
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  /// Tokens appended this round, corrections and free tokens included.
  std::size_t decoded = 0;
  std::size_t ngram_proposed = 0;
  std::size_t ngram_hits = 0;
  double draft_cost = 0.0;
  double target_cost = 0.0;
};

struct SpeedupSummary {
  double acceleration_rate = 0.0;
  double overhead = 0.0;
  double speedup = 0.0;
};

SpeedupSummary compute_speedup(std::span<const StepMetrics> metrics, const CostModel& cost);
double acceptance_rate(std::span<const StepMetrics> metrics);

enum class TokenOrigin { Accepted, Correction, Free };

/// One emitted target token with everything needed to train on it later.
struct OutputRecord {
  TokenId target_token = -1;
  std::vector<TokenId> draft_tokens;
  std::vector<TokenId> ctx_q;
  std::vector<TokenId> ctx_p;
  CategoricalDist target_dist;
  TokenOrigin origin = TokenOrigin::Accepted;
  bool proposed_as_ngram = false;
};

struct DecodeModels {
  const TabularLM& drafter;
  const TabularLM& target;
  const Tokenizer& tok_q;
  const Tokenizer& tok_p;
  const DirectMap& dmap;
  NGramCache* cache = nullptr;
};

struct DecodeHooks {
  /// Predicted acceptance of a drafted token; enables early exit.
  std::function<double(TokenId draft_token)> accept_prob;
  std::function<void(const StepMetrics&)> on_round;
};

struct GenerateResult {
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<StepMetrics> rounds;
  std::vector<OutputRecord> records;
};

/// Speculative decoding from `prompt` until max_new_tokens or the end symbol.
/// Vanilla mode requires the two models to share one vocabulary. `trace`, when
/// given, receives one JSON line per round.
GenerateResult generate(const DecodeModels& models, std::string_view prompt, const EngineConfig& config, Rng& rng,
                        const DecodeHooks& hooks = {}, std::ostream* trace = nullptr);

}  // namespace xvspec
