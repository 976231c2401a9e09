#include "xvspec/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>

namespace xvspec {

namespace {

constexpr std::size_t kExhaustiveMerges = std::size_t{1} << 20;

nlohmann::json optional_json(const std::optional<std::size_t>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<std::size_t> optional_size(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<std::size_t>();
}

EngineConfig engine_from_json(const nlohmann::json& doc) {
  EngineConfig e;
  e.k = doc.value("k", e.k);
  e.max_new_tokens = doc.value("max_new_tokens", e.max_new_tokens);
  e.temperature = doc.value("temperature", e.temperature);
  e.stopping_threshold = doc.value("stopping_threshold", e.stopping_threshold);
  if (doc.contains("mode")) e.mode = parse_decode_mode(doc.at("mode").get<std::string>());
  e.mask_unmapped = doc.value("mask_unmapped", e.mask_unmapped);
  e.cache_insert = doc.value("cache_insert", e.cache_insert);
  if (doc.contains("eos")) {
    e.eos = doc.at("eos").is_null() ? std::nullopt : std::optional<std::string>(doc.at("eos").get<std::string>());
  }
  if (doc.contains("cost")) {
    const auto& c = doc.at("cost");
    e.cost.draft_step_cost = c.value("draft_step_cost", e.cost.draft_step_cost);
    e.cost.target_step_cost = c.value("target_step_cost", e.cost.target_step_cost);
    e.cost.verify_overhead_cost = c.value("verify_overhead_cost", e.cost.verify_overhead_cost);
  }
  e.validate();
  return e;
}

nlohmann::json engine_to_json(const EngineConfig& e) {
  return {{"k", e.k},
          {"max_new_tokens", e.max_new_tokens},
          {"temperature", e.temperature},
          {"stopping_threshold", e.stopping_threshold},
          {"mode", to_string(e.mode)},
          {"mask_unmapped", e.mask_unmapped},
          {"cache_insert", e.cache_insert},
          {"eos", e.eos ? nlohmann::json(*e.eos) : nlohmann::json(nullptr)},
          {"cost",
           {{"draft_step_cost", e.cost.draft_step_cost},
            {"target_step_cost", e.cost.target_step_cost},
            {"verify_overhead_cost", e.cost.verify_overhead_cost}}}};
}

AdaptConfig adapt_from_json(const nlohmann::json& doc, double engine_temperature) {
  AdaptConfig a;
  if (doc.contains("mode")) a.mode = parse_adapt_mode(doc.at("mode").get<std::string>());
  a.lambda.lambda = doc.value("lambda", a.lambda.lambda);
  if (doc.contains("lambda_mode")) a.lambda.mode = parse_lambda_mode(doc.at("lambda_mode").get<std::string>());
  a.drafter_opt.lr = doc.value("lr", a.drafter_opt.lr);
  a.drafter_opt.weight_decay = doc.value("weight_decay", a.drafter_opt.weight_decay);
  a.drafter_opt.beta1 = doc.value("beta1", a.drafter_opt.beta1);
  a.drafter_opt.beta2 = doc.value("beta2", a.drafter_opt.beta2);
  a.head_opt.lr = doc.value("head_lr", a.head_opt.lr);
  a.interval = doc.value("interval", a.interval);
  a.batch_size = doc.value("batch_size", a.batch_size);
  a.replay_capacity = doc.value("replay_capacity", a.replay_capacity);
  a.distill_steps = doc.value("distill_steps", a.distill_steps);
  a.pos_weight = doc.value("pos_weight", a.pos_weight);
  a.head_init_bias = doc.value("head_init_bias", a.head_init_bias);
  a.train_embeddings = doc.value("train_embeddings", a.train_embeddings);
  a.label_temperature = doc.value("label_temperature", engine_temperature);
  a.validate();
  return a;
}

nlohmann::json adapt_to_json(const AdaptConfig& a) {
  return {{"mode", to_string(a.mode)},
          {"lambda", a.lambda.lambda},
          {"lambda_mode", to_string(a.lambda.mode)},
          {"lr", a.drafter_opt.lr},
          {"weight_decay", a.drafter_opt.weight_decay},
          {"beta1", a.drafter_opt.beta1},
          {"beta2", a.drafter_opt.beta2},
          {"head_lr", a.head_opt.lr},
          {"interval", a.interval},
          {"batch_size", a.batch_size},
          {"replay_capacity", a.replay_capacity},
          {"distill_steps", a.distill_steps},
          {"pos_weight", a.pos_weight},
          {"head_init_bias", a.head_init_bias},
          {"train_embeddings", a.train_embeddings},
          {"label_temperature", a.label_temperature}};
}

std::string family_key(const std::optional<std::size_t>& merges) {
  return merges ? std::to_string(*merges) : std::string("exhaustive");
}

std::vector<std::vector<TokenId>> tokenize_all(const Tokenizer& tok, const std::vector<std::string>& texts) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tok.tokenize(t));
  return out;
}

}  // namespace

void ScenarioConfig::validate() const {
  lexicon.validate();
  if (datasets.empty()) throw std::invalid_argument("scenario: at least one dataset is required");
  std::set<std::string> dataset_ids;
  for (const auto& d : datasets) {
    d.validate();
    if (!dataset_ids.insert(d.id).second) throw std::invalid_argument("scenario: duplicate dataset id '" + d.id + "'");
  }
  if (targets.empty()) throw std::invalid_argument("scenario: at least one target is required");
  std::set<std::string> target_ids;
  for (const auto& t : targets) {
    if (!target_ids.insert(t.id).second) throw std::invalid_argument("scenario: duplicate target id '" + t.id + "'");
    for (const auto& d : t.datasets) {
      if (!dataset_ids.contains(d)) throw std::invalid_argument("scenario: target '" + t.id + "' uses unknown dataset '" + d + "'");
    }
    if (t.order > kMaxOrder) throw std::invalid_argument("scenario: target order too large");
    if (!(t.alpha > 0.0)) throw std::invalid_argument("scenario: target alpha must be positive");
  }
  drafter.general.validate();
  if (drafter.order > kMaxOrder) throw std::invalid_argument("scenario: drafter order too large");
  engine.validate();
  adapt.validate();
  if (!dataset_ids.contains(stream.dataset)) {
    throw std::invalid_argument("scenario: stream uses unknown dataset '" + stream.dataset + "'");
  }
  if (!stream.target.empty() && !target_ids.contains(stream.target)) {
    throw std::invalid_argument("scenario: stream uses unknown target '" + stream.target + "'");
  }
  std::optional<std::size_t> last;
  for (const auto& e : events) {
    if (last && e.step <= *last) throw std::invalid_argument("scenario: switch steps must be strictly increasing");
    last = e.step;
    const auto& ids = e.kind == SwitchEvent::Kind::Dataset ? dataset_ids : target_ids;
    if (!ids.contains(e.id)) throw std::invalid_argument("scenario: switch to unknown id '" + e.id + "'");
  }
}

ScenarioConfig scenario_from_json(const nlohmann::json& doc) {
  ScenarioConfig c;
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("lexicon")) c.lexicon = lexicon_spec_from_json(doc.at("lexicon"));
  if (doc.contains("datasets")) {
    for (const auto& d : doc.at("datasets")) c.datasets.push_back(dataset_spec_from_json(d));
  } else {
    c.datasets.push_back(DatasetSpec{});
  }
  if (doc.contains("targets")) {
    for (const auto& t : doc.at("targets")) {
      TargetSpec s;
      s.id = t.value("id", s.id);
      s.datasets = t.value("datasets", s.datasets);
      s.order = t.value("order", s.order);
      s.alpha = t.value("alpha", s.alpha);
      s.scale = t.value("scale", s.scale);
      s.merges = optional_size(t, "merges");
      c.targets.push_back(std::move(s));
    }
  } else {
    c.targets.push_back(TargetSpec{});
  }
  for (auto& t : c.targets) {
    if (t.datasets.empty()) {
      for (const auto& d : c.datasets) t.datasets.push_back(d.id);
    }
  }
  if (doc.contains("drafter")) {
    const auto& d = doc.at("drafter");
    c.drafter.order = d.value("order", c.drafter.order);
    c.drafter.alpha = d.value("alpha", c.drafter.alpha);
    c.drafter.scale = d.value("scale", c.drafter.scale);
    c.drafter.embed_dim = d.value("embed_dim", c.drafter.embed_dim);
    c.drafter.embed_scale = d.value("embed_scale", c.drafter.embed_scale);
    if (d.contains("general")) {
      nlohmann::json g = to_json(c.drafter.general);
      g.update(d.at("general"));
      c.drafter.general = dataset_spec_from_json(g);
    }
    c.drafter.merges = optional_size(d, "merges");
    c.drafter.shared_vocab = d.value("shared_vocab", c.drafter.shared_vocab);
  }
  if (doc.contains("engine")) c.engine = engine_from_json(doc.at("engine"));
  if (doc.contains("cache")) {
    const auto& k = doc.at("cache");
    c.cache.enabled = k.value("enabled", c.cache.enabled);
    if (k.contains("policy")) c.cache.policy = parse_eviction_policy(k.at("policy").get<std::string>());
    c.cache.capacity = optional_size(k, "capacity");
  }
  c.adapt = adapt_from_json(doc.value("adapt", nlohmann::json::object()), c.engine.temperature);
  const std::string first_dataset = c.datasets.empty() ? c.stream.dataset : c.datasets.front().id;
  if (doc.contains("stream")) {
    const auto& s = doc.at("stream");
    c.stream.dataset = s.value("dataset", first_dataset);
    c.stream.target = s.value("target", c.stream.target);
    c.stream.samples = s.value("samples", c.stream.samples);
    c.stream.prompt_words = s.value("prompt_words", c.stream.prompt_words);
  } else {
    c.stream.dataset = first_dataset;
  }
  if (c.stream.target.empty() && !c.targets.empty()) c.stream.target = c.targets.front().id;
  if (doc.contains("events")) {
    for (const auto& e : doc.at("events")) {
      SwitchEvent ev;
      ev.step = e.at("step").get<std::size_t>();
      if (e.contains("dataset")) {
        ev.kind = SwitchEvent::Kind::Dataset;
        ev.id = e.at("dataset").get<std::string>();
      } else if (e.contains("target")) {
        ev.kind = SwitchEvent::Kind::Target;
        ev.id = e.at("target").get<std::string>();
      } else {
        throw std::invalid_argument("scenario: event needs 'dataset' or 'target'");
      }
      c.events.push_back(std::move(ev));
    }
  }
  if (doc.contains("eval")) {
    c.eval.enabled = doc.at("eval").value("enabled", true);
    c.eval.prompts = doc.at("eval").value("prompts", c.eval.prompts);
  }
  if (doc.contains("output")) {
    const auto& o = doc.at("output");
    c.output.dir = o.value("dir", c.output.dir);
    c.output.trace = o.value("trace", c.output.trace);
    c.output.artifacts = o.value("artifacts", c.output.artifacts);
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : c.datasets) datasets.push_back(to_json(d));
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : c.targets) {
    targets.push_back({{"id", t.id},
                       {"datasets", t.datasets},
                       {"order", t.order},
                       {"alpha", t.alpha},
                       {"scale", t.scale},
                       {"merges", optional_json(t.merges)}});
  }
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : c.events) {
    events.push_back({{"step", e.step}, {e.kind == SwitchEvent::Kind::Dataset ? "dataset" : "target", e.id}});
  }
  return {{"seed", c.seed},
          {"lexicon", to_json(c.lexicon)},
          {"datasets", datasets},
          {"targets", targets},
          {"drafter",
           {{"order", c.drafter.order},
            {"alpha", c.drafter.alpha},
            {"scale", c.drafter.scale},
            {"embed_dim", c.drafter.embed_dim},
            {"embed_scale", c.drafter.embed_scale},
            {"general", to_json(c.drafter.general)},
            {"merges", optional_json(c.drafter.merges)},
            {"shared_vocab", c.drafter.shared_vocab}}},
          {"engine", engine_to_json(c.engine)},
          {"cache",
           {{"enabled", c.cache.enabled}, {"policy", to_string(c.cache.policy)}, {"capacity", optional_json(c.cache.capacity)}}},
          {"adapt", adapt_to_json(c.adapt)},
          {"stream",
           {{"dataset", c.stream.dataset},
            {"target", c.stream.target},
            {"samples", c.stream.samples},
            {"prompt_words", c.stream.prompt_words}}},
          {"events", events},
          {"eval", {{"enabled", c.eval.enabled}, {"prompts", c.eval.prompts}}},
          {"output", {{"dir", c.output.dir}, {"trace", c.output.trace}, {"artifacts", c.output.artifacts}}}};
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("scenario: cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scenario: malformed JSON: ") + e.what());
  }
  return scenario_from_json(doc);
}

const Corpus& World::corpus(const std::string& id) const {
  for (const auto& [name, c] : corpora) {
    if (name == id) return c;
  }
  throw std::out_of_range("world: unknown dataset '" + id + "'");
}

World build_world(const ScenarioConfig& config) {
  World w;
  LexiconSpec lex = config.lexicon;
  lex.seed = derive_seed(config.seed, lex.seed);
  w.lexicon = build_lexicon(lex);
  for (const auto& d : config.datasets) {
    DatasetSpec spec = d;
    spec.seed = derive_seed(config.seed, d.seed);
    w.corpora.emplace_back(d.id, gen_corpus(w.lexicon, spec));
  }
  DatasetSpec general = config.drafter.general;
  general.seed = derive_seed(config.seed, general.seed);
  w.general = gen_corpus(w.lexicon, general);
  return w;
}

namespace {

struct TargetSlot {
  std::string id;
  std::string family;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::unique_ptr<TabularLM> model;
  std::unique_ptr<DirectMap> dmap;
};

}  // namespace

RunReport run_scenario(const ScenarioConfig& config) {
  config.validate();
  const World world = build_world(config);
  const bool vanilla = config.engine.mode == DecodeMode::Vanilla;

  std::map<std::string, std::shared_ptr<const Tokenizer>> families;
  auto family_tokenizer = [&](const std::optional<std::size_t>& merges) {
    const std::string key = family_key(merges);
    auto it = families.find(key);
    if (it == families.end()) {
      const auto units = world.lexicon.word_units();
      it = families.emplace(key, std::make_shared<const Tokenizer>(Tokenizer::train(units, merges.value_or(kExhaustiveMerges)))).first;
    }
    return it->second;
  };

  std::vector<TargetSlot> targets;
  for (const auto& spec : config.targets) {
    TargetSlot slot;
    slot.id = spec.id;
    slot.family = family_key(spec.merges);
    slot.tokenizer = family_tokenizer(spec.merges);
    std::vector<std::vector<TokenId>> seqs;
    for (const auto& d : spec.datasets) {
      auto s = tokenize_all(*slot.tokenizer, world.corpus(d).train);
      seqs.insert(seqs.end(), s.begin(), s.end());
    }
    slot.model = std::make_unique<TabularLM>(
        fit_counts(seqs, slot.tokenizer->vocab_size(), spec.order, spec.alpha, spec.scale, config.drafter.embed_dim));
    targets.push_back(std::move(slot));
  }
  auto target_index = [&](const std::string& id) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i].id == id) return i;
    }
    throw std::out_of_range("scenario: unknown target '" + id + "'");
  };
  std::size_t current = target_index(config.stream.target);

  std::shared_ptr<const Tokenizer> tok_q;
  if (vanilla || config.drafter.shared_vocab) {
    tok_q = targets[current].tokenizer;
  } else {
    tok_q = std::make_shared<const Tokenizer>(
        Tokenizer::train(world.lexicon.syllable_units(), config.drafter.merges.value_or(kExhaustiveMerges)));
  }
  for (auto& slot : targets) slot.dmap = std::make_unique<DirectMap>(DirectMap::build(*tok_q, *slot.tokenizer));

  TabularLM drafter = fit_counts(tokenize_all(*tok_q, world.general.train), tok_q->vocab_size(), config.drafter.order,
                                 config.drafter.alpha, config.drafter.scale, config.drafter.embed_dim);
  {
    Rng embed_rng(derive_seed(config.seed, 6));
    drafter.randomize_embeddings(embed_rng, config.drafter.embed_scale);
  }

  const bool use_cache = config.cache.enabled && config.engine.mode == DecodeMode::CrossVocabNGram;
  std::unique_ptr<NGramCache> cache;
  auto reset_cache = [&] {
    cache.reset();
    if (use_cache) {
      cache = std::make_unique<NGramCache>(tok_q, targets[current].tokenizer, config.cache.policy, config.cache.capacity);
    }
  };
  reset_cache();

  OnlineSession session(drafter, *targets[current].dmap, config.adapt, derive_seed(config.seed, 3));
  session.set_cache(cache.get());
  Rng rng(derive_seed(config.seed, 4));

  RunReport report;
  report.seed = config.seed;
  report.config = to_json(config);

  const std::filesystem::path out_dir = config.output.dir;
  const bool write = !out_dir.empty() && config.output.artifacts;
  std::unique_ptr<std::ofstream> trace;
  if (write) {
    std::filesystem::create_directories(out_dir);
    if (config.output.trace) trace = std::make_unique<std::ofstream>(out_dir / "trace.jsonl");
  }

  auto models = [&] {
    return DecodeModels{drafter, *targets[current].model, *tok_q, *targets[current].tokenizer,
                        *targets[current].dmap, cache.get()};
  };

  auto finish = [&] {
    if (cache) {
      report.final_cache_size = cache->size();
      report.hit_histogram = hit_histogram(*cache);
    }
    report.distill_losses = session.distill_losses();
    report.head_losses = session.head_losses();
    report.aggregates = aggregate(report.rows, config.engine.cost);
    report.eval = aggregate(report.eval_rows, config.engine.cost);
    if (!write) return;
    const ReportFormat formats[] = {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Histogram};
    report_emit(report, out_dir, formats);
    if (cache) cache->save(out_dir / "cache.jsonl");
    session.save(out_dir / "session.json");
    tok_q->save(out_dir / "tokenizer_draft.json");
    targets[current].tokenizer->save(out_dir / "tokenizer_target.json");
  };

  try {
    std::string dataset = config.stream.dataset;
    std::map<std::string, std::size_t> cursor;
    std::size_t next_event = 0;
    std::uint64_t tokens_processed = 0;
    const std::size_t n = config.stream.samples;
    std::set<std::size_t> checkpoints;
    for (double f : {0.25, 0.5, 0.75, 1.0}) {
      const auto at = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n)));
      if (at > 0) checkpoints.insert(at - 1);
    }

    for (std::size_t step = 0; step < n; ++step) {
      while (next_event < config.events.size() && config.events[next_event].step == step) {
        const auto& ev = config.events[next_event++];
        if (ev.kind == SwitchEvent::Kind::Dataset) {
          dataset = ev.id;
        } else {
          const std::size_t next = target_index(ev.id);
          const bool same_family = targets[next].family == targets[current].family;
          current = next;
          session.set_dmap(*targets[current].dmap);
          if (!same_family) {
            reset_cache();
            session.set_cache(cache.get());
          }
        }
      }
      const auto& train = world.corpus(dataset).train;
      if (train.empty()) throw std::runtime_error("scenario: dataset '" + dataset + "' has no training sentences");
      const std::string prompt = sentence_prefix(train[cursor[dataset]++ % train.size()], config.stream.prompt_words);

      if (trace) *trace << nlohmann::json({{"sample", step}, {"dataset", dataset}, {"target", targets[current].id}}).dump() << '\n';
      const GenerateResult result = session.step(models(), prompt, config.engine, rng, trace.get());
      tokens_processed += result.tokens.size();
      report.rows.push_back(make_row(step, result.rounds, config.engine.cost, cache ? cache->size() : 0));
      if (cache && cache->capacity() && cache->size() > *cache->capacity()) report.capacity_respected = false;
      if (cache && checkpoints.contains(step) && tokens_processed > 0) {
        report.cache_trajectory.push_back({step, tokens_processed, cache->stats_snapshot(tokens_processed)});
      }
    }

    if (config.eval.enabled) {
      const auto& test = world.corpus(dataset).test;
      const std::size_t count = config.eval.prompts == 0 ? test.size() : std::min(config.eval.prompts, test.size());
      Rng eval_rng(derive_seed(config.seed, 5));
      DecodeHooks hooks;
      if (session.head_active()) hooks.accept_prob = [&session](TokenId d) { return session.predict(d); };
      for (std::size_t i = 0; i < count; ++i) {
        const auto result = generate(models(), sentence_prefix(test[i], config.stream.prompt_words), config.engine,
                                     eval_rng, hooks);
        report.eval_rows.push_back(make_row(i, result.rounds, config.engine.cost, cache ? cache->size() : 0));
      }
    }
  } catch (...) {
    try {
      finish();
    } catch (...) {
    }
    throw;
  }
  finish();
  return report;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "k") return SweepAxis::K;
  if (name == "gamma") return SweepAxis::Gamma;
  if (name == "lambda") return SweepAxis::Lambda;
  if (name == "cache_policy") return SweepAxis::CachePolicy;
  if (name == "cache_capacity") return SweepAxis::CacheCapacity;
  if (name == "lambda_mode") return SweepAxis::LambdaMode;
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::K: return "k";
    case SweepAxis::Gamma: return "gamma";
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::CachePolicy: return "cache_policy";
    case SweepAxis::CacheCapacity: return "cache_capacity";
    case SweepAxis::LambdaMode: return "lambda_mode";
  }
  return "?";
}

namespace {

double parse_number(const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw std::invalid_argument("sweep: '" + value + "' is not a number");
  return v;
}

bool is_fraction(const std::string& value) { return value.find('.') != std::string::npos; }

}  // namespace

ScenarioConfig apply_axis(const ScenarioConfig& base, SweepAxis axis, const std::string& value, std::size_t full_size) {
  ScenarioConfig c = base;
  switch (axis) {
    case SweepAxis::K: {
      const double k = parse_number(value);
      if (k < 1 || k != std::floor(k)) throw std::invalid_argument("sweep: k must be a positive integer");
      c.engine.k = static_cast<std::size_t>(k);
      break;
    }
    case SweepAxis::Gamma:
      c.engine.stopping_threshold = parse_number(value);
      break;
    case SweepAxis::Lambda:
      c.adapt.lambda.lambda = parse_number(value);
      break;
    case SweepAxis::CachePolicy:
      c.cache.policy = parse_eviction_policy(value);
      break;
    case SweepAxis::LambdaMode:
      c.adapt.lambda.mode = parse_lambda_mode(value);
      break;
    case SweepAxis::CacheCapacity:
      if (value == "full") {
        c.cache.enabled = true;
        c.cache.capacity.reset();
      } else if (value == "off") {
        c.cache.enabled = false;
      } else if (is_fraction(value)) {
        const double f = parse_number(value);
        if (!(f > 0.0)) throw std::invalid_argument("sweep: capacity fraction must be positive");
        c.cache.enabled = true;
        c.cache.capacity = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(full_size))));
      } else {
        const double n = parse_number(value);
        if (n < 0 || n != std::floor(n)) throw std::invalid_argument("sweep: capacity must be a count");
        c.cache.enabled = true;
        c.cache.capacity = static_cast<std::size_t>(n);
      }
      break;
  }
  if (!c.output.dir.empty()) c.output.dir = (std::filesystem::path(base.output.dir) / (to_string(axis) + "_" + value)).string();
  c.validate();
  return c;
}

SweepResult sweep(const ScenarioConfig& base, SweepAxis axis, const std::vector<std::string>& values) {
  SweepResult result;
  result.axis = axis;
  result.values = values;
  std::size_t full_size = 0;
  if (axis == SweepAxis::CacheCapacity) {
    bool needs_full = false;
    for (const auto& v : values) needs_full = needs_full || is_fraction(v);
    if (needs_full) {
      ScenarioConfig full = apply_axis(base, axis, "full");
      full.output.artifacts = false;
      full_size = run_scenario(full).final_cache_size;
    }
  }
  for (const auto& v : values) result.reports.push_back(run_scenario(apply_axis(base, axis, v, full_size)));
  return result;
}

std::string sweep_table(const SweepResult& result) {
  std::string out = to_string(result.axis) + ",acceptance_rate,speedup,avg_ngram_hit,final_cache_size\n";
  for (std::size_t i = 0; i < result.values.size(); ++i) {
    const auto& r = result.reports[i];
    const auto& agg = r.eval ? r.eval : r.aggregates;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%zu\n", result.values[i].c_str(), agg ? agg->acceptance_rate : 0.0,
                  agg ? agg->speedup : 0.0, agg ? agg->avg_ngram_hit : 0.0, r.final_cache_size);
    out += buf;
  }
  return out;
}

}  // namespace xvspec
