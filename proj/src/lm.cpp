#include "xvspec/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace xvspec {

namespace {

constexpr std::uint64_t kSlotBits = 16;
constexpr std::uint64_t kSlotMask = (1ULL << kSlotBits) - 1;

nlohmann::json moments_to_json(const Moments& m) { return {{"m", m.m}, {"v", m.v}}; }

Moments moments_from_json(const nlohmann::json& doc) {
  return {doc.at("m").get<std::vector<double>>(), doc.at("v").get<std::vector<double>>()};
}

}  // namespace

double CategoricalDist::total() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

TabularLM::TabularLM(std::size_t vocab_size, std::size_t order, std::size_t embed_dim, double temperature)
    : vocab_size_(vocab_size),
      order_(order),
      embed_dim_(embed_dim),
      temperature_(temperature),
      backoff_(vocab_size, 0.0),
      embed_(vocab_size * embed_dim, 0.0) {
  if (vocab_size == 0 || vocab_size >= kSlotMask) throw std::invalid_argument("TabularLM: vocab size out of range");
  if (order > kMaxOrder) throw std::invalid_argument("TabularLM: order exceeds " + std::to_string(kMaxOrder));
  set_temperature(temperature);
}

void TabularLM::set_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("TabularLM: temperature must be positive");
  temperature_ = t;
}

void TabularLM::check_token(TokenId t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) {
    throw std::out_of_range("TabularLM: invalid token id " + std::to_string(t));
  }
}

ContextKey TabularLM::key_for(std::span<const TokenId> context) const {
  for (TokenId t : context) check_token(t);
  const std::size_t n = std::min(order_, context.size());
  std::uint64_t packed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId t = context[context.size() - n + i];
    packed |= (static_cast<std::uint64_t>(t) + 1) << (kSlotBits * i);
  }
  return {packed};
}

std::vector<TokenId> TabularLM::unpack(ContextKey key) const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < kMaxOrder; ++i) {
    const std::uint64_t slot = (key.packed >> (kSlotBits * i)) & kSlotMask;
    if (slot == 0) break;
    out.push_back(static_cast<TokenId>(slot - 1));
  }
  return out;
}

std::span<const double> TabularLM::logits(ContextKey key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? std::span<const double>(backoff_) : std::span<const double>(it->second);
}

std::vector<double>& TabularLM::materialize(ContextKey key) {
  auto it = rows_.find(key);
  if (it == rows_.end()) it = rows_.emplace(key, backoff_).first;
  return it->second;
}

std::span<const double> TabularLM::embedding(TokenId t) const {
  check_token(t);
  return {embed_.data() + static_cast<std::size_t>(t) * embed_dim_, embed_dim_};
}

std::span<double> TabularLM::embedding(TokenId t) {
  check_token(t);
  return {embed_.data() + static_cast<std::size_t>(t) * embed_dim_, embed_dim_};
}

void TabularLM::randomize_embeddings(Rng& rng, double scale) {
  // Box-Muller on the generator's own uniforms keeps this platform independent.
  for (std::size_t i = 0; i < embed_.size(); i += 2) {
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    embed_[i] = scale * r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < embed_.size()) embed_[i + 1] = scale * r * std::sin(2.0 * M_PI * u2);
  }
}

TabularLM fit_counts(std::span<const std::vector<TokenId>> sequences, std::size_t vocab_size, std::size_t order,
                     double alpha, double scale, std::size_t embed_dim) {
  if (!(alpha > 0.0)) throw std::invalid_argument("fit_counts: alpha must be positive");
  TabularLM model(vocab_size, order, embed_dim);
  std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash> counts;
  std::vector<double> unigram(vocab_size, 0.0);
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const ContextKey key = model.key_for(std::span<const TokenId>(seq.data(), i));
      model.check_token(seq[i]);
      auto& row = counts[key];
      if (row.empty()) row.assign(vocab_size, 0.0);
      row[static_cast<std::size_t>(seq[i])] += 1.0;
      unigram[static_cast<std::size_t>(seq[i])] += 1.0;
    }
  }
  for (std::size_t v = 0; v < vocab_size; ++v) model.backoff()[v] = scale * std::log(unigram[v] + alpha);
  for (auto& [key, row] : counts) {
    auto& logits = model.materialize(key);
    for (std::size_t v = 0; v < vocab_size; ++v) logits[v] = scale * std::log(row[v] + alpha);
  }
  return model;
}

CategoricalDist softmax(std::span<const double> logits, double temperature, VocabSpace space) {
  CategoricalDist dist;
  dist.space = space;
  dist.probs.resize(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dist.probs[i] = std::exp((logits[i] - top) / temperature);
    z += dist.probs[i];
  }
  for (double& p : dist.probs) p /= z;
  return dist;
}

CategoricalDist next_token_dist(const TabularLM& model, std::span<const TokenId> context) {
  return next_token_dist(model, context, model.temperature());
}

CategoricalDist next_token_dist(const TabularLM& model, std::span<const TokenId> context, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("next_token_dist: temperature must be positive");
  return softmax(model.logits(model.key_for(context)), temperature);
}

TokenId sample_at(const CategoricalDist& dist, double u) {
  if (dist.probs.empty()) throw std::invalid_argument("sample: empty distribution");
  const double total = dist.total();
  if (dist.subnormalized || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("sample: distribution is not normalized");
  }
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    if (dist.probs[i] <= 0.0) continue;
    cum += dist.probs[i];
    last_positive = i;
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

TokenId sample(const CategoricalDist& dist, Rng& rng) { return sample_at(dist, rng.uniform()); }

std::vector<double>& ParamGrad::row(ContextKey key, std::size_t vocab_size) {
  auto& r = rows[key];
  if (r.empty()) r.assign(vocab_size, 0.0);
  return r;
}

std::vector<double>& ParamGrad::embedding(TokenId t, std::size_t dim) {
  auto& e = embeddings[t];
  if (e.empty()) e.assign(dim, 0.0);
  return e;
}

void ParamGrad::accumulate(const ParamGrad& other, double weight) {
  for (const auto& [key, g] : other.rows) {
    auto& dst = row(key, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  }
  for (const auto& [t, g] : other.embeddings) {
    auto& dst = embedding(t, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  }
}

void ParamGrad::scale(double factor) {
  for (auto& [key, g] : rows) {
    for (double& x : g) x *= factor;
  }
  for (auto& [t, g] : embeddings) {
    for (double& x : g) x *= factor;
  }
}

LossGrad nll_loss_grad(const TabularLM& model, std::span<const TokenId> context, TokenId token) {
  model.check_token(token);
  const ContextKey key = model.key_for(context);
  const CategoricalDist q = softmax(model.logits(key), model.temperature());
  LossGrad out;
  out.loss = -std::log(q.probs[static_cast<std::size_t>(token)]);
  auto& g = out.grad.row(key, model.vocab_size());
  const double inv_t = 1.0 / model.temperature();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = q.probs[i] * inv_t;
  g[static_cast<std::size_t>(token)] -= inv_t;
  return out;
}

ParamGrad nll_grad(const TabularLM& model, std::span<const TokenId> context, TokenId token) {
  return nll_loss_grad(model, context, token).grad;
}

LossGrad kl_loss_grad(const TabularLM& model, std::span<const TokenId> context, const CategoricalDist& teacher,
                      std::span<const TokenId> mask) {
  if (teacher.size() != model.vocab_size()) throw std::invalid_argument("kl_grad: teacher size mismatch");
  const ContextKey key = model.key_for(context);
  const auto logits = model.logits(key);
  const double temp = model.temperature();

  std::vector<TokenId> support;
  if (mask.empty()) {
    support.resize(model.vocab_size());
    std::iota(support.begin(), support.end(), 0);
  } else {
    support.assign(mask.begin(), mask.end());
    for (TokenId t : support) model.check_token(t);
  }

  double top = -std::numeric_limits<double>::infinity();
  for (TokenId t : support) top = std::max(top, logits[static_cast<std::size_t>(t)]);
  std::vector<double> s(support.size());
  double z = 0.0;
  double teacher_mass = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    s[i] = std::exp((logits[static_cast<std::size_t>(support[i])] - top) / temp);
    z += s[i];
    teacher_mass += teacher[support[i]];
  }
  if (std::abs(teacher_mass - 1.0) > 1e-9) throw std::invalid_argument("kl_grad: teacher not normalized over support");

  LossGrad out;
  std::vector<double> log_ratio(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    s[i] /= z;
    const double t = teacher[support[i]];
    if (t <= 0.0) {
      if (s[i] > 0.0) throw std::invalid_argument("kl_grad: teacher has zero mass where the student is positive");
      log_ratio[i] = 0.0;
      continue;
    }
    log_ratio[i] = s[i] > 0.0 ? std::log(s[i] / t) : 0.0;
    out.loss += s[i] * log_ratio[i];
  }
  auto& g = out.grad.row(key, model.vocab_size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    g[static_cast<std::size_t>(support[i])] += s[i] * (log_ratio[i] - out.loss) / temp;
  }
  return out;
}

ParamGrad kl_grad(const TabularLM& model, std::span<const TokenId> context, const CategoricalDist& teacher,
                  std::span<const TokenId> mask) {
  return kl_loss_grad(model, context, teacher, mask).grad;
}

void adam_step(std::span<double> params, std::span<const double> grad, Moments& moments, std::uint64_t step,
               const AdamHyper& hyper) {
  if (moments.m.size() != params.size()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * grad[i];
    moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = moments.m[i] / c1;
    const double v_hat = moments.v[i] / c2;
    params[i] -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * params[i]);
  }
}

void apply_update(TabularLM& model, const ParamGrad& grad, AdamState& state, const AdamHyper& hyper) {
  ++state.step;
  for (const auto& [key, g] : grad.rows) {
    if (g.size() != model.vocab_size()) throw std::invalid_argument("apply_update: gradient row size mismatch");
    model.key_for(model.unpack(key));
    adam_step(model.materialize(key), g, state.rows[key], state.step, hyper);
  }
  for (const auto& [t, g] : grad.embeddings) {
    if (g.size() != model.embed_dim()) throw std::invalid_argument("apply_update: embedding size mismatch");
    adam_step(model.embedding(t), g, state.embeddings[t], state.step, hyper);
  }
}

nlohmann::json adam_to_json(const AdamState& state) {
  std::vector<ContextKey> keys;
  for (const auto& [k, m] : state.rows) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  nlohmann::json rows = nlohmann::json::array();
  for (ContextKey k : keys) rows.push_back({{"key", k.packed}, {"moments", moments_to_json(state.rows.at(k))}});
  nlohmann::json embeds = nlohmann::json::array();
  for (const auto& [t, m] : state.embeddings) embeds.push_back({{"token", t}, {"moments", moments_to_json(m)}});
  return {{"step", state.step}, {"rows", rows}, {"embeddings", embeds}};
}

AdamState adam_from_json(const nlohmann::json& doc) {
  AdamState state;
  state.step = doc.at("step").get<std::uint64_t>();
  for (const auto& r : doc.at("rows")) {
    state.rows.emplace(ContextKey{r.at("key").get<std::uint64_t>()}, moments_from_json(r.at("moments")));
  }
  for (const auto& e : doc.at("embeddings")) {
    state.embeddings.emplace(e.at("token").get<TokenId>(), moments_from_json(e.at("moments")));
  }
  return state;
}

nlohmann::json checkpoint_to_json(const TabularLM& model, const AdamState* state) {
  std::vector<ContextKey> keys;
  for (const auto& [k, row] : model.rows()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  nlohmann::json rows = nlohmann::json::array();
  for (ContextKey k : keys) rows.push_back({{"context", model.unpack(k)}, {"logits", model.rows().at(k)}});
  std::vector<double> embed;
  for (std::size_t t = 0; t < model.vocab_size(); ++t) {
    const auto e = model.embedding(static_cast<TokenId>(t));
    embed.insert(embed.end(), e.begin(), e.end());
  }
  nlohmann::json doc = {{"version", kCheckpointFormatVersion},
                        {"vocab_size", model.vocab_size()},
                        {"order", model.order()},
                        {"embed_dim", model.embed_dim()},
                        {"temperature", model.temperature()},
                        {"backoff", model.backoff()},
                        {"rows", rows},
                        {"embeddings", embed}};
  if (state != nullptr) doc["optimizer"] = adam_to_json(*state);
  return doc;
}

TabularLM checkpoint_from_json(const nlohmann::json& doc, AdamState* state) {
  if (!doc.contains("version") || doc.at("version").get<int>() != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  TabularLM model(doc.at("vocab_size").get<std::size_t>(), doc.at("order").get<std::size_t>(),
                  doc.at("embed_dim").get<std::size_t>(), doc.at("temperature").get<double>());
  model.backoff() = doc.at("backoff").get<std::vector<double>>();
  if (model.backoff().size() != model.vocab_size()) throw std::runtime_error("checkpoint: backoff size mismatch");
  for (const auto& r : doc.at("rows")) {
    const auto ctx = r.at("context").get<std::vector<TokenId>>();
    if (ctx.size() > model.order()) throw std::runtime_error("checkpoint: context longer than model order");
    auto& row = model.materialize(model.key_for(ctx));
    row = r.at("logits").get<std::vector<double>>();
    if (row.size() != model.vocab_size()) throw std::runtime_error("checkpoint: logit row size mismatch");
  }
  const auto embed = doc.at("embeddings").get<std::vector<double>>();
  if (embed.size() != model.vocab_size() * model.embed_dim()) throw std::runtime_error("checkpoint: embedding size mismatch");
  for (std::size_t t = 0; t < model.vocab_size(); ++t) {
    auto e = model.embedding(static_cast<TokenId>(t));
    std::copy_n(embed.begin() + static_cast<std::ptrdiff_t>(t * model.embed_dim()), model.embed_dim(), e.begin());
  }
  if (state != nullptr) *state = doc.contains("optimizer") ? adam_from_json(doc.at("optimizer")) : AdamState{};
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const TabularLM& model, const AdamState* state) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out << checkpoint_to_json(model, state).dump() << '\n';
}

TabularLM load_checkpoint(const std::filesystem::path& path, AdamState* state) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  return checkpoint_from_json(nlohmann::json::parse(in), state);
}

}  // namespace xvspec
