#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvspec/adapt.hpp"
#include "xvspec/corpus.hpp"
#include "xvspec/engine.hpp"
#include "xvspec/ngram_cache.hpp"
#include "xvspec/report.hpp"

namespace xvspec {

/// A target model fitted on the training slices of some datasets. Targets
/// with equal `merges` share one tokenizer.
struct TargetSpec {
  std::string id = "target";
  std::vector<std::string> datasets;
  std::size_t order = 2;
  double alpha = 0.05;
  double scale = 1.0;
  std::optional<std::size_t> merges;
};

/// The drafter is pretrained on a general-domain stream over the same lexicon.
struct DrafterSpec {
  std::size_t order = 2;
  double alpha = 0.5;
  double scale = 1.0;
  std::size_t embed_dim = 16;
  double embed_scale = 1.0;
  DatasetSpec general{"general", 99, 0.6, 0.6, 0.3, 400, 3, 8, 0.0, 0, std::nullopt};
  std::optional<std::size_t> merges;
  /// Use the target tokenizer instead of the syllable tokenizer; implied by vanilla mode.
  bool shared_vocab = false;
};

struct CacheSpec {
  bool enabled = true;
  EvictionPolicy policy = EvictionPolicy::LFU;
  std::optional<std::size_t> capacity;
};

struct StreamSpec {
  std::string dataset = "A";
  std::string target;
  std::size_t samples = 500;
  std::size_t prompt_words = 2;
};

struct SwitchEvent {
  enum class Kind { Dataset, Target };
  std::size_t step = 0;
  Kind kind = Kind::Dataset;
  std::string id;
};

struct EvalSpec {
  bool enabled = false;
  /// Test prompts to decode after the stream; 0 means the whole test slice.
  std::size_t prompts = 0;
};

struct OutputSpec {
  std::string dir;
  bool trace = false;
  bool artifacts = true;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  LexiconSpec lexicon;
  std::vector<DatasetSpec> datasets;
  std::vector<TargetSpec> targets;
  DrafterSpec drafter;
  EngineConfig engine;
  CacheSpec cache;
  AdaptConfig adapt;
  StreamSpec stream;
  std::vector<SwitchEvent> events;
  EvalSpec eval;
  OutputSpec output;

  /// Throws std::invalid_argument naming the first problem.
  void validate() const;
};

ScenarioConfig scenario_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// The generated world for a config: lexicon, per-dataset corpora and the
/// general-domain drafter corpus, all seeded from the config seed.
struct World {
  Lexicon lexicon;
  std::vector<std::pair<std::string, Corpus>> corpora;
  Corpus general;

  const Corpus& corpus(const std::string& id) const;
};

World build_world(const ScenarioConfig& config);

/// Streams prompts through decoding and online adaptation, applying switch
/// events at their steps, then optionally evaluates on the held-out slice.
/// Artifacts go to config.output.dir when it is set.
RunReport run_scenario(const ScenarioConfig& config);

enum class SweepAxis { K, Gamma, Lambda, CachePolicy, CacheCapacity, LambdaMode };

SweepAxis parse_sweep_axis(std::string_view name);
std::string to_string(SweepAxis axis);

struct SweepResult {
  SweepAxis axis = SweepAxis::K;
  std::vector<std::string> values;
  std::vector<RunReport> reports;
};

/// Applies one axis value to a copy of `base`. Capacity values are entry
/// counts, "full" (unbounded) or fractions like "0.25" of `full_size`.
ScenarioConfig apply_axis(const ScenarioConfig& base, SweepAxis axis, const std::string& value,
                          std::size_t full_size = 0);

/// One independent run per value with the base seed. Fractional capacities
/// are resolved against an unbounded run, which is executed first.
SweepResult sweep(const ScenarioConfig& base, SweepAxis axis, const std::vector<std::string>& values);

/// Comparison table, one line per value.
std::string sweep_table(const SweepResult& result);

}  // namespace xvspec
