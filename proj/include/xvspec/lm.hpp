#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "xvspec/rng.hpp"

namespace xvspec {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::size_t kMaxOrder = 4;

enum class VocabSpace { Draft, Target };

/// Dense probability vector over one vocabulary. Elevated drafter
/// distributions are allowed to sum to less than one and carry the flag.
struct CategoricalDist {
  std::vector<double> probs;
  VocabSpace space = VocabSpace::Draft;
  bool subnormalized = false;

  std::size_t size() const { return probs.size(); }
  double operator[](TokenId t) const { return probs[static_cast<std::size_t>(t)]; }
  double total() const;
};

/// Packed history window: up to kMaxOrder token ids, oldest first, 16 bits each.
struct ContextKey {
  std::uint64_t packed = 0;
  friend bool operator==(ContextKey a, ContextKey b) { return a.packed == b.packed; }
  friend bool operator<(ContextKey a, ContextKey b) { return a.packed < b.packed; }
};

struct ContextKeyHash {
  std::size_t operator()(ContextKey k) const noexcept { return std::hash<std::uint64_t>{}(k.packed); }
};

/// Tabular softmax language model: one logit row per observed history window
/// and a shared backoff row for every window never materialized. Token
/// embeddings are carried for the acceptance head only; the logit path never
/// reads them.
class TabularLM {
 public:
  using RowMap = std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash>;

  TabularLM(std::size_t vocab_size, std::size_t order = 2, std::size_t embed_dim = 16, double temperature = 1.0);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t order() const { return order_; }
  std::size_t embed_dim() const { return embed_dim_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t);

  /// Window made of the last `order` tokens of `context`; validates every id.
  ContextKey key_for(std::span<const TokenId> context) const;
  std::vector<TokenId> unpack(ContextKey key) const;

  std::span<const double> logits(ContextKey key) const;
  bool has_row(ContextKey key) const { return rows_.contains(key); }
  /// Row for `key`, created from a copy of the backoff row when absent.
  std::vector<double>& materialize(ContextKey key);
  const RowMap& rows() const { return rows_; }
  std::vector<double>& backoff() { return backoff_; }
  const std::vector<double>& backoff() const { return backoff_; }

  std::span<const double> embedding(TokenId t) const;
  std::span<double> embedding(TokenId t);
  void randomize_embeddings(Rng& rng, double scale);

  void check_token(TokenId t) const;

  friend bool operator==(const TabularLM&, const TabularLM&) = default;

 private:
  std::size_t vocab_size_;
  std::size_t order_;
  std::size_t embed_dim_;
  double temperature_;
  RowMap rows_;
  std::vector<double> backoff_;
  std::vector<double> embed_;
};

/// Count-based model: logit = scale * log(count + alpha) for every window seen
/// in `sequences`, unigram counts for the backoff row.
TabularLM fit_counts(std::span<const std::vector<TokenId>> sequences, std::size_t vocab_size, std::size_t order,
                     double alpha, double scale, std::size_t embed_dim = 16);

CategoricalDist softmax(std::span<const double> logits, double temperature, VocabSpace space = VocabSpace::Draft);

/// softmax(logits(window) / temperature) at the model's own temperature.
CategoricalDist next_token_dist(const TabularLM& model, std::span<const TokenId> context);
CategoricalDist next_token_dist(const TabularLM& model, std::span<const TokenId> context, double temperature);

/// Inverse-CDF draw with a caller-supplied uniform u in [0, 1).
TokenId sample_at(const CategoricalDist& dist, double u);
TokenId sample(const CategoricalDist& dist, Rng& rng);

/// Sparse gradient: dense logit rows for touched windows and dense
/// embedding vectors for touched tokens.
struct ParamGrad {
  std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash> rows;
  std::map<TokenId, std::vector<double>> embeddings;

  std::vector<double>& row(ContextKey key, std::size_t vocab_size);
  std::vector<double>& embedding(TokenId t, std::size_t dim);
  void accumulate(const ParamGrad& other, double weight = 1.0);
  void scale(double factor);
  bool empty() const { return rows.empty() && embeddings.empty(); }
};

struct LossGrad {
  double loss = 0.0;
  ParamGrad grad;
};

/// -log q(token | context) and its logit gradient.
LossGrad nll_loss_grad(const TabularLM& model, std::span<const TokenId> context, TokenId token);
ParamGrad nll_grad(const TabularLM& model, std::span<const TokenId> context, TokenId token);

/// Reverse KL(q || teacher) on the logits of `context`'s row. With a mask the
/// student is the softmax restricted to the mask, and the teacher must sum
/// to one over the mask. A teacher zero under positive student mass throws.
LossGrad kl_loss_grad(const TabularLM& model, std::span<const TokenId> context, const CategoricalDist& teacher,
                      std::span<const TokenId> mask = {});
ParamGrad kl_grad(const TabularLM& model, std::span<const TokenId> context, const CategoricalDist& teacher,
                  std::span<const TokenId> mask = {});

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
  friend bool operator==(const Moments&, const Moments&) = default;
};

/// Moments are lazy: a parameter block gets moments the first time it is
/// touched, and untouched blocks are neither decayed nor moved.
struct AdamState {
  std::uint64_t step = 0;
  std::unordered_map<ContextKey, Moments, ContextKeyHash> rows;
  std::map<TokenId, Moments> embeddings;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One decoupled-weight-decay Adam step on a dense block; `step` is the
/// 1-based optimizer step used for bias correction.
void adam_step(std::span<double> params, std::span<const double> grad, Moments& moments, std::uint64_t step,
               const AdamHyper& hyper);

void apply_update(TabularLM& model, const ParamGrad& grad, AdamState& state, const AdamHyper& hyper);

nlohmann::json checkpoint_to_json(const TabularLM& model, const AdamState* state = nullptr);
TabularLM checkpoint_from_json(const nlohmann::json& doc, AdamState* state = nullptr);
void save_checkpoint(const std::filesystem::path& path, const TabularLM& model, const AdamState* state = nullptr);
TabularLM load_checkpoint(const std::filesystem::path& path, AdamState* state = nullptr);

nlohmann::json adam_to_json(const AdamState& state);
AdamState adam_from_json(const nlohmann::json& doc);

}  // namespace xvspec
