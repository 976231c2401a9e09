#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvspec/engine.hpp"
#include "xvspec/lm.hpp"
#include "xvspec/ngram_cache.hpp"
#include "xvspec/rng.hpp"
#include "xvspec/tokenizer.hpp"

namespace xvspec {

inline constexpr int kSessionFormatVersion = 1;
inline constexpr double kTeacherFloor = 1e-12;

enum class LambdaMode { Fixed, DynamicTargetProb, ApproxKL };

std::string to_string(LambdaMode mode);
LambdaMode parse_lambda_mode(std::string_view name);

struct LambdaSpec {
  LambdaMode mode = LambdaMode::Fixed;
  double lambda = 0.2;
};

enum class Provenance { DirectMapped, NGram };

/// One emitted target token seen from the drafter: its drafter context, the
/// drafter tokens that spell it and the target's distribution at that point.
struct PositionRecord {
  std::vector<TokenId> ctx_q;
  std::vector<TokenId> draft_tokens;
  Provenance kind = Provenance::DirectMapped;
  TokenId target_token = -1;
  CategoricalDist target_dist;
  bool accepted = false;
};

struct DistillBatchItem {
  std::vector<PositionRecord> positions;
};

DistillBatchItem to_batch_item(std::span<const OutputRecord> records, const DirectMap& dmap);

/// Known merged target tokens and the drafter token each one starts with.
struct NGramSupport {
  std::vector<std::pair<TokenId, TokenId>> prefixes;
};

/// One prefix per cached target token, in cache insertion order.
NGramSupport ngram_support(const NGramCache& cache);

/// Mean over positions of reverse KL on direct-mapped positions plus the
/// selected n-gram term. Direct-mapped positions compare the drafter's
/// softmax restricted to the shared tokens and the known n-gram prefixes with
/// the target distribution restricted to the same support, where each merged
/// token's mass is credited to its prefix. Both sides are renormalized.
LossGrad hybrid_loss_grad(const TabularLM& drafter, std::span<const DistillBatchItem> batch, const DirectMap& dmap,
                          const LambdaSpec& lambda, const NGramSupport* support = nullptr);

/// Affine map on a token embedding followed by a sigmoid.
struct AcceptanceHead {
  std::vector<double> weights;
  double bias = 0.0;

  AcceptanceHead() = default;
  explicit AcceptanceHead(std::size_t dim, double bias = 0.0) : weights(dim, 0.0), bias(bias) {}

  double logit(std::span<const double> embedding) const;
  double predict(std::span<const double> embedding) const;
  friend bool operator==(const AcceptanceHead&, const AcceptanceHead&) = default;
};

struct HeadItem {
  TokenId token = -1;
  std::vector<double> embedding;
  double label = 0.0;
};

struct HeadGrad {
  double loss = 0.0;
  std::vector<double> weights;
  double bias = 0.0;
  /// Per-item gradient with respect to the input embedding.
  std::vector<std::vector<double>> inputs;
};

/// Mean weighted BCE: -(w*l*log s + (1-l)*log(1-s)), s = predict(e).
HeadGrad bce_loss_grad(const AcceptanceHead& head, std::span<const HeadItem> items, double pos_weight = 1.0);

struct HeadOptimizer {
  AdamState moments;  // rows unused; the head is stored as embedding block 0
  AdamHyper hyper{1e-2, 0.9, 0.999, 1e-8, 0.0};
};

/// One Adam step on the head; returns the loss before the step.
double head_update(AcceptanceHead& head, std::span<const HeadItem> items, HeadOptimizer& opt, double pos_weight = 1.0,
                   HeadGrad* grad_out = nullptr);

/// min(1, p / max(q, 1e-12))
double acceptance_label(double p_val, double q_val);

/// Standard epochs of mini-batch head updates over a fixed trace.
void pretrain_head(AcceptanceHead& head, std::span<const HeadItem> trace, std::size_t epochs, std::size_t batch_size,
                   HeadOptimizer& opt, double pos_weight = 1.0);

enum class AdaptMode { None, DistillOnly, AdaptOnly, Joint, Interleaved };

std::string to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(std::string_view name);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::None;
  LambdaSpec lambda;
  AdamHyper drafter_opt;
  AdamHyper head_opt{1e-2, 0.9, 0.999, 1e-8, 0.0};
  std::size_t interval = 8;
  std::size_t batch_size = 8;
  std::size_t replay_capacity = 64;
  std::size_t distill_steps = 1;
  double pos_weight = 1.0;
  double head_init_bias = 0.0;
  /// Let head gradients flow into the drafter's token embeddings.
  bool train_embeddings = false;
  /// Temperature at which head labels are recomputed; match the engine's.
  double label_temperature = 1.0;

  void validate() const;
};

struct AdaptCounters {
  std::uint64_t samples = 0;
  std::uint64_t distill_updates = 0;
  std::uint64_t head_updates = 0;
  friend bool operator==(const AdaptCounters&, const AdaptCounters&) = default;
};

using StreamSample = std::vector<OutputRecord>;

/// Online adaptation state for one drafter: buffers, optimizers, the
/// acceptance head and the schedule that drives them.
class OnlineSession {
 public:
  OnlineSession(TabularLM& drafter, const DirectMap& dmap, AdaptConfig config, std::uint64_t seed);

  /// Feeds one decoded stream sample through the configured schedule.
  void observe(StreamSample sample);

  /// Decodes `prompt` (with early exit when the head is active) and observes
  /// the result.
  GenerateResult step(const DecodeModels& models, std::string_view prompt, const EngineConfig& engine, Rng& rng,
                      std::ostream* trace = nullptr);

  bool head_active() const;
  double predict(TokenId draft_token) const;

  /// One hybrid-loss update over the distill buffer; returns its loss.
  double distill_round();
  /// Head items for `samples`, labels recomputed against the current drafter.
  std::vector<HeadItem> head_items(std::span<const StreamSample> samples) const;
  double head_step(std::span<const StreamSample> samples);

  void set_dmap(const DirectMap& dmap) { dmap_ = &dmap; }
  /// Cache whose entries widen the direct-mapped teacher; may be null.
  void set_cache(const NGramCache* cache) { cache_ = cache; }
  void reset_buffers();

  const AdaptConfig& config() const { return config_; }
  const AcceptanceHead& head() const { return head_; }
  AcceptanceHead& head() { return head_; }
  HeadOptimizer& head_optimizer() { return head_opt_; }
  const AdamState& drafter_state() const { return drafter_state_; }
  const std::vector<StreamSample>& distill_buffer() const { return distill_buf_; }
  const std::deque<StreamSample>& replay_buffer() const { return replay_; }
  const AdaptCounters& counters() const { return counters_; }
  const std::vector<double>& distill_losses() const { return distill_losses_; }
  const std::vector<double>& head_losses() const { return head_losses_; }
  /// Labels for the last joint update, before and after the drafter moved.
  const std::vector<double>& labels_before() const { return labels_before_; }
  const std::vector<double>& labels_after() const { return labels_after_; }

  nlohmann::json to_json() const;
  /// Restores state written by to_json into a session over the same drafter.
  void load_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::vector<double> labels_for(std::span<const StreamSample> samples) const;
  void apply_head_grad(const std::vector<HeadItem>& items, const HeadGrad& grad);

  TabularLM* drafter_;
  const DirectMap* dmap_;
  const NGramCache* cache_ = nullptr;
  AdaptConfig config_;
  AcceptanceHead head_;
  HeadOptimizer head_opt_;
  AdamState drafter_state_;
  AdamState embed_state_;
  std::vector<StreamSample> distill_buf_;
  std::deque<StreamSample> replay_;
  AdaptCounters counters_;
  Rng rng_;
  std::vector<double> distill_losses_;
  std::vector<double> head_losses_;
  std::vector<double> labels_before_;
  std::vector<double> labels_after_;
};

}  // namespace xvspec
