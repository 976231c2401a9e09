// Command-line front end: tokenizer training, corpus generation, scenario
// runs, sweeps and report re-emission.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xvspec/corpus.hpp"
#include "xvspec/report.hpp"
#include "xvspec/scenario.hpp"
#include "xvspec/tokenizer.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::filesystem::path output_root() {
  const char* root = std::getenv("XVSPEC_OUT");
  return root != nullptr && *root != '\0' ? std::filesystem::path(root) : std::filesystem::path("out");
}

std::filesystem::path resolve_out(const std::string& given, const std::string& fallback) {
  if (given.empty()) return output_root() / fallback;
  std::filesystem::path p(given);
  return p.is_absolute() ? p : output_root() / p;
}

xvspec::ScenarioConfig load_config(const std::string& path) {
  try {
    return xvspec::load_scenario(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void print_summary(const xvspec::RunReport& report) {
  nlohmann::json summary = {{"samples", report.rows.size()},
                            {"aggregates", report.aggregates ? xvspec::to_json(*report.aggregates) : nlohmann::json(nullptr)},
                            {"eval", report.eval ? xvspec::to_json(*report.eval) : nlohmann::json(nullptr)},
                            {"final_cache_size", report.final_cache_size}};
  std::cout << summary.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-vocabulary speculative decoding toolkit"};
  app.require_subcommand(1);

  std::string corpus_path, tok_out;
  std::size_t merges = 0;
  auto* train = app.add_subcommand("train-tokenizer", "Learn merge rules from a text file, one unit per line");
  train->add_option("--corpus", corpus_path, "Training text, one unit per line")->required();
  train->add_option("--merges", merges, "Number of merge rules")->required();
  train->add_option("--out", tok_out, "Tokenizer JSON path")->required();

  std::string config_path, out_dir;
  std::string dataset_id;
  auto* gen = app.add_subcommand("gen-corpus", "Write the train and test slices of a scenario dataset");
  gen->add_option("--config", config_path, "Scenario JSON")->required();
  gen->add_option("--dataset", dataset_id, "Dataset id (default: the stream dataset)");
  gen->add_option("--out", out_dir, "Output directory (relative paths resolve under $XVSPEC_OUT)");

  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run one scenario and write its report");
  run->add_option("--config", config_path, "Scenario JSON")->required();
  run->add_option("--out", out_dir, "Output directory (relative paths resolve under $XVSPEC_OUT)");
  run->add_option("--seed", seed, "Override the scenario seed");
  bool trace = false;
  run->add_flag("--trace", trace, "Write a per-round JSON-lines trace");

  std::string axis;
  std::vector<std::string> values;
  auto* sw = app.add_subcommand("sweep", "Run one scenario per axis value and print a comparison table");
  sw->add_option("--config", config_path, "Scenario JSON")->required();
  sw->add_option("--axis", axis, "k | gamma | lambda | cache_policy | cache_capacity | lambda_mode")->required();
  sw->add_option("--values", values, "Axis values")->required()->delimiter(',');
  sw->add_option("--out", out_dir, "Output directory (relative paths resolve under $XVSPEC_OUT)");
  sw->add_option("--seed", seed, "Override the scenario seed");

  std::string csv_path, cache_path, draft_tok, target_tok;
  auto* rep = app.add_subcommand("report", "Recompute aggregates from a rows CSV, optionally with a cache histogram");
  rep->add_option("--csv", csv_path, "rows.csv from a run")->required();
  rep->add_option("--cache", cache_path, "cache.jsonl from the same run");
  rep->add_option("--draft-tokenizer", draft_tok, "Drafter tokenizer JSON (needed with --cache)");
  rep->add_option("--target-tokenizer", target_tok, "Target tokenizer JSON (needed with --cache)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*train) {
      const auto units = read_lines(corpus_path);
      if (units.empty()) throw ConfigError("corpus is empty");
      xvspec::Tokenizer::train(units, merges).save(tok_out);
      std::cout << "wrote " << tok_out << '\n';
    } else if (*gen) {
      const auto config = load_config(config_path);
      const auto world = xvspec::build_world(config);
      const std::string id = dataset_id.empty() ? config.stream.dataset : dataset_id;
      const xvspec::Corpus* corpus = nullptr;
      try {
        corpus = &world.corpus(id);
      } catch (const std::out_of_range& e) {
        throw ConfigError(e.what());
      }
      const auto dir = resolve_out(out_dir, "corpus_" + id);
      std::filesystem::create_directories(dir);
      write_lines(dir / "train.txt", corpus->train);
      write_lines(dir / "test.txt", corpus->test);
      std::cout << "wrote " << corpus->train.size() << " train and " << corpus->test.size() << " test sentences to "
                << dir.string() << '\n';
    } else if (*run) {
      auto config = load_config(config_path);
      if (seed) config.seed = *seed;
      if (trace) config.output.trace = true;
      config.output.dir = resolve_out(out_dir.empty() ? config.output.dir : out_dir, "run").string();
      const auto report = xvspec::run_scenario(config);
      print_summary(report);
    } else if (*sw) {
      auto config = load_config(config_path);
      if (seed) config.seed = *seed;
      config.output.dir = resolve_out(out_dir.empty() ? config.output.dir : out_dir, "sweep").string();
      xvspec::SweepAxis parsed;
      try {
        parsed = xvspec::parse_sweep_axis(axis);
        for (const auto& v : values) xvspec::apply_axis(config, parsed, v, 1);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const auto result = xvspec::sweep(config, parsed, values);
      const std::string table = xvspec::sweep_table(result);
      std::filesystem::create_directories(config.output.dir);
      std::ofstream(std::filesystem::path(config.output.dir) / "sweep.csv") << table;
      std::cout << table;
    } else if (*rep) {
      std::ifstream in(csv_path);
      if (!in) throw ConfigError("cannot read " + csv_path);
      const auto rows = xvspec::read_csv(in);
      std::uint64_t proposed = 0, accepted = 0;
      for (const auto& r : rows) {
        proposed += r.proposed;
        accepted += r.accepted;
      }
      nlohmann::json out = {{"samples", rows.size()},
                            {"proposed", proposed},
                            {"accepted", accepted},
                            {"acceptance_rate", proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed)}};
      std::cout << out.dump(2) << '\n';
      if (!cache_path.empty()) {
        if (draft_tok.empty() || target_tok.empty()) throw ConfigError("--cache needs both tokenizer files");
        auto tq = std::make_shared<const xvspec::Tokenizer>(xvspec::Tokenizer::load(draft_tok));
        auto tp = std::make_shared<const xvspec::Tokenizer>(xvspec::Tokenizer::load(target_tok));
        const auto cache = xvspec::NGramCache::load(cache_path, tq, tp);
        xvspec::write_histogram(std::cout, xvspec::hit_histogram(cache));
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
