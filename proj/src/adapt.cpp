#include "xvspec/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace xvspec {

std::string to_string(LambdaMode mode) {
  switch (mode) {
    case LambdaMode::Fixed: return "fixed";
    case LambdaMode::DynamicTargetProb: return "dynamic";
    case LambdaMode::ApproxKL: return "approx_kl";
  }
  return "?";
}

LambdaMode parse_lambda_mode(std::string_view name) {
  if (name == "fixed") return LambdaMode::Fixed;
  if (name == "dynamic") return LambdaMode::DynamicTargetProb;
  if (name == "approx_kl") return LambdaMode::ApproxKL;
  throw std::invalid_argument("unknown lambda mode '" + std::string(name) + "'");
}

std::string to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::None: return "none";
    case AdaptMode::DistillOnly: return "distill";
    case AdaptMode::AdaptOnly: return "adapt";
    case AdaptMode::Joint: return "joint";
    case AdaptMode::Interleaved: return "interleaved";
  }
  return "?";
}

AdaptMode parse_adapt_mode(std::string_view name) {
  if (name == "none") return AdaptMode::None;
  if (name == "distill") return AdaptMode::DistillOnly;
  if (name == "adapt") return AdaptMode::AdaptOnly;
  if (name == "joint") return AdaptMode::Joint;
  if (name == "interleaved") return AdaptMode::Interleaved;
  throw std::invalid_argument("unknown adaptation mode '" + std::string(name) + "'");
}

DistillBatchItem to_batch_item(std::span<const OutputRecord> records, const DirectMap& dmap) {
  DistillBatchItem item;
  for (const auto& r : records) {
    PositionRecord pos;
    pos.ctx_q = r.ctx_q;
    pos.draft_tokens = r.draft_tokens;
    pos.target_token = r.target_token;
    pos.target_dist = r.target_dist;
    pos.accepted = r.origin == TokenOrigin::Accepted;
    const bool direct = r.draft_tokens.size() == 1 && dmap.to_draft(r.target_token) == r.draft_tokens[0];
    pos.kind = direct ? Provenance::DirectMapped : Provenance::NGram;
    item.positions.push_back(std::move(pos));
  }
  return item;
}

namespace {

std::vector<TokenId> extend(const std::vector<TokenId>& ctx, std::span<const TokenId> more) {
  std::vector<TokenId> out = ctx;
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

/// Reverse KL on one direct-mapped position.
double direct_term(const TabularLM& drafter, const PositionRecord& pos, const DirectMap& dmap,
                   const NGramSupport* support, ParamGrad& grad) {
  CategoricalDist teacher;
  teacher.probs.assign(drafter.vocab_size(), 0.0);
  std::vector<TokenId> mask = dmap.draft_domain();
  for (TokenId d : mask) teacher.probs[static_cast<std::size_t>(d)] = pos.target_dist[*dmap.to_target(d)];
  if (support != nullptr) {
    for (const auto& [t, d] : support->prefixes) {
      if (!dmap.has_draft(d) && teacher.probs[static_cast<std::size_t>(d)] == 0.0) mask.push_back(d);
      teacher.probs[static_cast<std::size_t>(d)] += pos.target_dist[t];
    }
    std::sort(mask.begin(), mask.end());
    mask.erase(std::unique(mask.begin(), mask.end()), mask.end());
  }
  double mass = 0.0;
  for (TokenId d : mask) {
    auto& p = teacher.probs[static_cast<std::size_t>(d)];
    p = std::max(p, kTeacherFloor);
    mass += p;
  }
  for (double& x : teacher.probs) x /= mass;
  LossGrad lg = kl_loss_grad(drafter, pos.ctx_q, teacher, mask);
  grad.accumulate(lg.grad);
  return lg.loss;
}

/// Sum of sub-token NLLs along the drafter run, scaled by `weight`.
double ngram_nll_term(const TabularLM& drafter, const PositionRecord& pos, double weight, ParamGrad& grad) {
  double loss = 0.0;
  for (std::size_t j = 0; j < pos.draft_tokens.size(); ++j) {
    const auto ctx = extend(pos.ctx_q, std::span(pos.draft_tokens).first(j));
    LossGrad lg = nll_loss_grad(drafter, ctx, pos.draft_tokens[j]);
    loss += lg.loss;
    grad.accumulate(lg.grad, weight);
  }
  return weight * loss;
}

/// KL between the elevated drafter distribution and the target, both
/// restricted to the shared tokens, the merged token and its prefix image.
double ngram_kl_term(const TabularLM& drafter, const PositionRecord& pos, const DirectMap& dmap, double weight,
                     ParamGrad& grad) {
  const auto& run = pos.draft_tokens;
  const double temp = drafter.temperature();
  std::vector<ContextKey> keys;
  std::vector<CategoricalDist> rows;
  for (std::size_t j = 0; j < run.size(); ++j) {
    const auto ctx = extend(pos.ctx_q, std::span(run).first(j));
    keys.push_back(drafter.key_for(ctx));
    rows.push_back(softmax(drafter.logits(keys.back()), temp));
  }
  double joint = 1.0;
  for (std::size_t j = 0; j < run.size(); ++j) joint *= rows[j][run[j]];

  // Support entries: (target id, elevated mass, drafter id on the first row or -1 for the merged token).
  struct Entry {
    TokenId target;
    double mass;
    TokenId draft;
  };
  std::vector<Entry> support;
  const TokenId first = run[0];
  bool has_prefix = false;
  for (TokenId d : dmap.draft_domain()) {
    const TokenId t = *dmap.to_target(d);
    if (t == pos.target_token) continue;
    double mass = rows[0][d];
    if (d == first) {
      mass -= joint;
      has_prefix = true;
    }
    support.push_back({t, mass, d});
  }
  support.push_back({pos.target_token, joint, -1});

  double z = 0.0;
  double pz = 0.0;
  for (const auto& e : support) {
    z += e.mass;
    pz += std::max(pos.target_dist[e.target], kTeacherFloor);
  }
  std::vector<double> qhat(support.size());
  std::vector<double> log_ratio(support.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    qhat[i] = support[i].mass / z;
    if (qhat[i] <= 0.0) continue;
    const double phat = std::max(pos.target_dist[support[i].target], kTeacherFloor) / pz;
    log_ratio[i] = std::log(qhat[i] / phat);
    loss += qhat[i] * log_ratio[i];
  }

  // d loss / d elevated mass, then through the product and each row's softmax.
  std::vector<std::vector<double>> row_grads(run.size(), std::vector<double>(drafter.vocab_size(), 0.0));
  double g_joint = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double g = qhat[i] > 0.0 ? (log_ratio[i] - loss) / z : 0.0;
    if (support[i].draft < 0) {
      g_joint += g;
    } else {
      row_grads[0][static_cast<std::size_t>(support[i].draft)] += g;
      if (has_prefix && support[i].draft == first) g_joint -= g;
    }
  }
  for (std::size_t j = 0; j < run.size(); ++j) {
    double others = 1.0;
    for (std::size_t k = 0; k < run.size(); ++k) {
      if (k != j) others *= rows[k][run[k]];
    }
    row_grads[j][static_cast<std::size_t>(run[j])] += g_joint * others;
  }
  for (std::size_t j = 0; j < run.size(); ++j) {
    const auto& q = rows[j].probs;
    const auto& gq = row_grads[j];
    double dot = 0.0;
    for (std::size_t v = 0; v < q.size(); ++v) dot += q[v] * gq[v];
    auto& dst = grad.row(keys[j], drafter.vocab_size());
    for (std::size_t v = 0; v < q.size(); ++v) dst[v] += weight * q[v] * (gq[v] - dot) / temp;
  }
  return weight * loss;
}

}  // namespace

NGramSupport ngram_support(const NGramCache& cache) {
  NGramSupport out;
  std::set<TokenId> seen;
  for (const auto& e : cache.entries()) {
    if (seen.insert(e.target_token).second) out.prefixes.emplace_back(e.target_token, e.draft_seq.front());
  }
  return out;
}

LossGrad hybrid_loss_grad(const TabularLM& drafter, std::span<const DistillBatchItem> batch, const DirectMap& dmap,
                          const LambdaSpec& lambda, const NGramSupport* support) {
  std::size_t positions = 0;
  LossGrad out;
  for (const auto& item : batch) {
    for (const auto& pos : item.positions) {
      if (pos.target_dist.size() == 0) throw std::invalid_argument("hybrid loss: position lacks a target distribution");
      if (pos.draft_tokens.empty()) throw std::invalid_argument("hybrid loss: position lacks drafter tokens");
      ++positions;
      if (pos.kind == Provenance::DirectMapped) {
        out.loss += direct_term(drafter, pos, dmap, support, out.grad);
        continue;
      }
      if (pos.draft_tokens.size() < 2) throw std::invalid_argument("hybrid loss: n-gram position needs two drafter tokens");
      switch (lambda.mode) {
        case LambdaMode::Fixed:
          if (lambda.lambda != 0.0) out.loss += ngram_nll_term(drafter, pos, lambda.lambda, out.grad);
          break;
        case LambdaMode::DynamicTargetProb:
          out.loss += ngram_nll_term(drafter, pos, pos.target_dist[pos.target_token], out.grad);
          break;
        case LambdaMode::ApproxKL:
          if (lambda.lambda != 0.0) out.loss += ngram_kl_term(drafter, pos, dmap, lambda.lambda, out.grad);
          break;
      }
    }
  }
  if (positions == 0) throw std::invalid_argument("hybrid loss: empty batch");
  out.loss /= static_cast<double>(positions);
  out.grad.scale(1.0 / static_cast<double>(positions));
  return out;
}

double AcceptanceHead::logit(std::span<const double> embedding) const {
  if (embedding.size() != weights.size()) throw std::invalid_argument("acceptance head: embedding size mismatch");
  double f = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) f += weights[i] * embedding[i];
  return f;
}

double AcceptanceHead::predict(std::span<const double> embedding) const {
  return 1.0 / (1.0 + std::exp(-logit(embedding)));
}

namespace {

// log(sigmoid(f)) and log(1 - sigmoid(f)) without overflow.
double log_sigmoid(double f) { return f >= 0.0 ? -std::log1p(std::exp(-f)) : f - std::log1p(std::exp(f)); }

}  // namespace

HeadGrad bce_loss_grad(const AcceptanceHead& head, std::span<const HeadItem> items, double pos_weight) {
  HeadGrad g;
  g.weights.assign(head.weights.size(), 0.0);
  if (items.empty()) return g;
  const double inv_n = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    const double f = head.logit(item.embedding);
    const double s = 1.0 / (1.0 + std::exp(-f));
    const double l = item.label;
    g.loss -= inv_n * (pos_weight * l * log_sigmoid(f) + (1.0 - l) * log_sigmoid(-f));
    const double df = inv_n * (s * (pos_weight * l + 1.0 - l) - pos_weight * l);
    for (std::size_t i = 0; i < g.weights.size(); ++i) g.weights[i] += df * item.embedding[i];
    g.bias += df;
    std::vector<double> de(head.weights.size());
    for (std::size_t i = 0; i < de.size(); ++i) de[i] = df * head.weights[i];
    g.inputs.push_back(std::move(de));
  }
  return g;
}

double head_update(AcceptanceHead& head, std::span<const HeadItem> items, HeadOptimizer& opt, double pos_weight,
                   HeadGrad* grad_out) {
  HeadGrad g = bce_loss_grad(head, items, pos_weight);
  std::vector<double> params = head.weights;
  params.push_back(head.bias);
  std::vector<double> flat = g.weights;
  flat.push_back(g.bias);
  ++opt.moments.step;
  adam_step(params, flat, opt.moments.embeddings[0], opt.moments.step, opt.hyper);
  std::copy(params.begin(), params.end() - 1, head.weights.begin());
  head.bias = params.back();
  const double loss = g.loss;
  if (grad_out != nullptr) *grad_out = std::move(g);
  return loss;
}

double acceptance_label(double p_val, double q_val) { return std::min(1.0, p_val / std::max(q_val, 1e-12)); }

void pretrain_head(AcceptanceHead& head, std::span<const HeadItem> trace, std::size_t epochs, std::size_t batch_size,
                   HeadOptimizer& opt, double pos_weight) {
  if (batch_size == 0) throw std::invalid_argument("pretrain_head: batch size must be positive");
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < trace.size(); i += batch_size) {
      head_update(head, trace.subspan(i, std::min(batch_size, trace.size() - i)), opt, pos_weight);
    }
  }
}

void AdaptConfig::validate() const {
  if (interval == 0) throw std::invalid_argument("adapt: interval must be positive");
  if (batch_size == 0) throw std::invalid_argument("adapt: batch_size must be positive");
  if (replay_capacity == 0) throw std::invalid_argument("adapt: replay_capacity must be positive");
  if (!(label_temperature > 0.0)) throw std::invalid_argument("adapt: label_temperature must be positive");
  if (lambda.lambda < 0.0) throw std::invalid_argument("adapt: lambda must be non-negative");
}

OnlineSession::OnlineSession(TabularLM& drafter, const DirectMap& dmap, AdaptConfig config, std::uint64_t seed)
    : drafter_(&drafter),
      dmap_(&dmap),
      config_(std::move(config)),
      head_(drafter.embed_dim(), config_.head_init_bias),
      rng_(seed) {
  config_.validate();
  head_opt_.hyper = config_.head_opt;
}

bool OnlineSession::head_active() const {
  return config_.mode == AdaptMode::AdaptOnly || config_.mode == AdaptMode::Joint ||
         config_.mode == AdaptMode::Interleaved;
}

double OnlineSession::predict(TokenId draft_token) const { return head_.predict(drafter_->embedding(draft_token)); }

void OnlineSession::reset_buffers() {
  distill_buf_.clear();
  replay_.clear();
}

double OnlineSession::distill_round() {
  if (distill_buf_.empty()) throw std::logic_error("distill_round: empty buffer");
  std::vector<DistillBatchItem> batch;
  for (const auto& s : distill_buf_) {
    if (!s.empty()) batch.push_back(to_batch_item(s, *dmap_));
  }
  if (batch.empty()) return 0.0;
  std::optional<NGramSupport> support;
  if (cache_ != nullptr) support = ngram_support(*cache_);
  double first_loss = 0.0;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, config_.distill_steps); ++i) {
    LossGrad lg = hybrid_loss_grad(*drafter_, batch, *dmap_, config_.lambda, support ? &*support : nullptr);
    if (i == 0) first_loss = lg.loss;
    apply_update(*drafter_, lg.grad, drafter_state_, config_.drafter_opt);
  }
  ++counters_.distill_updates;
  distill_losses_.push_back(first_loss);
  return first_loss;
}

std::vector<HeadItem> OnlineSession::head_items(std::span<const StreamSample> samples) const {
  std::vector<HeadItem> items;
  for (const auto& s : samples) {
    for (const auto& r : s) {
      if (r.draft_tokens.size() != 1) continue;
      const TokenId d = r.draft_tokens[0];
      const CategoricalDist q = next_token_dist(*drafter_, r.ctx_q, config_.label_temperature);
      const auto e = drafter_->embedding(d);
      items.push_back({d, std::vector<double>(e.begin(), e.end()), acceptance_label(r.target_dist[r.target_token], q[d])});
    }
  }
  return items;
}

std::vector<double> OnlineSession::labels_for(std::span<const StreamSample> samples) const {
  std::vector<double> labels;
  for (const auto& item : head_items(samples)) labels.push_back(item.label);
  return labels;
}

void OnlineSession::apply_head_grad(const std::vector<HeadItem>& items, const HeadGrad& grad) {
  if (!config_.train_embeddings) return;
  ParamGrad pg;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& dst = pg.embedding(items[i].token, drafter_->embed_dim());
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += grad.inputs[i][k];
  }
  apply_update(*drafter_, pg, embed_state_, config_.head_opt);
}

double OnlineSession::head_step(std::span<const StreamSample> samples) {
  const auto items = head_items(samples);
  if (items.empty()) return 0.0;
  HeadGrad grad;
  const double loss = head_update(head_, items, head_opt_, config_.pos_weight, &grad);
  apply_head_grad(items, grad);
  ++counters_.head_updates;
  head_losses_.push_back(loss);
  return loss;
}

void OnlineSession::observe(StreamSample sample) {
  ++counters_.samples;
  const bool at_interval = counters_.samples % config_.interval == 0;
  distill_buf_.push_back(std::move(sample));
  switch (config_.mode) {
    case AdaptMode::None:
      distill_buf_.clear();
      break;
    case AdaptMode::DistillOnly:
      if (at_interval) {
        distill_round();
        distill_buf_.clear();
      }
      break;
    case AdaptMode::AdaptOnly:
      if (at_interval) {
        head_step(distill_buf_);
        distill_buf_.clear();
      }
      break;
    case AdaptMode::Joint:
      if (at_interval) {
        labels_before_ = labels_for(distill_buf_);
        distill_round();
        labels_after_ = labels_for(distill_buf_);
        head_step(distill_buf_);
        distill_buf_.clear();
      }
      break;
    case AdaptMode::Interleaved:
      if (at_interval) {
        distill_round();
        for (auto& s : distill_buf_) replay_.push_back(std::move(s));
        while (replay_.size() > config_.replay_capacity) replay_.pop_front();
        distill_buf_.clear();
      } else {
        std::vector<StreamSample> batch;
        if (replay_.empty()) {
          batch = distill_buf_;
        } else {
          for (std::size_t i = 0; i < config_.batch_size; ++i) batch.push_back(replay_[rng_.below(replay_.size())]);
        }
        head_step(batch);
      }
      break;
  }
}

GenerateResult OnlineSession::step(const DecodeModels& models, std::string_view prompt, const EngineConfig& engine,
                                   Rng& rng, std::ostream* trace) {
  DecodeHooks hooks;
  if (head_active()) hooks.accept_prob = [this](TokenId d) { return predict(d); };
  GenerateResult result = generate(models, prompt, engine, rng, hooks, trace);
  observe(result.records);
  return result;
}

namespace {

nlohmann::json record_to_json(const OutputRecord& r) {
  return {{"target", r.target_token},
          {"draft", r.draft_tokens},
          {"ctx_q", r.ctx_q},
          {"ctx_p", r.ctx_p},
          {"p", r.target_dist.probs},
          {"origin", static_cast<int>(r.origin)},
          {"ngram", r.proposed_as_ngram}};
}

OutputRecord record_from_json(const nlohmann::json& j) {
  OutputRecord r;
  r.target_token = j.at("target").get<TokenId>();
  r.draft_tokens = j.at("draft").get<std::vector<TokenId>>();
  r.ctx_q = j.at("ctx_q").get<std::vector<TokenId>>();
  r.ctx_p = j.at("ctx_p").get<std::vector<TokenId>>();
  r.target_dist.probs = j.at("p").get<std::vector<double>>();
  r.target_dist.space = VocabSpace::Target;
  r.origin = static_cast<TokenOrigin>(j.at("origin").get<int>());
  r.proposed_as_ngram = j.at("ngram").get<bool>();
  return r;
}

nlohmann::json samples_to_json(const auto& samples) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : s) recs.push_back(record_to_json(r));
    out.push_back(std::move(recs));
  }
  return out;
}

StreamSample sample_from_json(const nlohmann::json& j) {
  StreamSample s;
  for (const auto& r : j) s.push_back(record_from_json(r));
  return s;
}

}  // namespace

nlohmann::json OnlineSession::to_json() const {
  return {{"version", kSessionFormatVersion},
          {"drafter", checkpoint_to_json(*drafter_, &drafter_state_)},
          {"embedding_optimizer", adam_to_json(embed_state_)},
          {"head", {{"weights", head_.weights}, {"bias", head_.bias}}},
          {"head_optimizer", adam_to_json(head_opt_.moments)},
          {"distill_buffer", samples_to_json(distill_buf_)},
          {"replay_buffer", samples_to_json(replay_)},
          {"counters",
           {{"samples", counters_.samples},
            {"distill_updates", counters_.distill_updates},
            {"head_updates", counters_.head_updates}}},
          {"rng", rng_.state()},
          {"distill_losses", distill_losses_},
          {"head_losses", head_losses_}};
}

void OnlineSession::load_json(const nlohmann::json& doc) {
  if (!doc.contains("version") || doc.at("version").get<int>() != kSessionFormatVersion) {
    throw std::runtime_error("session: unsupported format version");
  }
  *drafter_ = checkpoint_from_json(doc.at("drafter"), &drafter_state_);
  embed_state_ = adam_from_json(doc.at("embedding_optimizer"));
  head_.weights = doc.at("head").at("weights").get<std::vector<double>>();
  head_.bias = doc.at("head").at("bias").get<double>();
  head_opt_.moments = adam_from_json(doc.at("head_optimizer"));
  distill_buf_.clear();
  for (const auto& s : doc.at("distill_buffer")) distill_buf_.push_back(sample_from_json(s));
  replay_.clear();
  for (const auto& s : doc.at("replay_buffer")) replay_.push_back(sample_from_json(s));
  const auto& c = doc.at("counters");
  counters_ = {c.at("samples").get<std::uint64_t>(), c.at("distill_updates").get<std::uint64_t>(),
               c.at("head_updates").get<std::uint64_t>()};
  rng_.set_state(doc.at("rng").get<std::string>());
  distill_losses_ = doc.at("distill_losses").get<std::vector<double>>();
  head_losses_ = doc.at("head_losses").get<std::vector<double>>();
}

void OnlineSession::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("session: cannot write " + path.string());
  out << to_json().dump() << '\n';
}

void OnlineSession::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("session: cannot read " + path.string());
  load_json(nlohmann::json::parse(in));
}

}  // namespace xvspec
