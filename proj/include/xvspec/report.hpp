#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvspec/engine.hpp"
#include "xvspec/ngram_cache.hpp"

namespace xvspec {

inline constexpr const char* kCsvHeader = "step,proposed,accepted,acc_rate,ngram_hit,accel_rate,overhead,speedup,cache_size";
inline constexpr const char* kCostNote =
    "speedup, overhead and acceleration use an abstract per-call cost model; compare them between runs only, "
    "never with wall-clock speedups measured on real hardware";

/// Metrics for one stream sample (one prompt decoded to completion).
struct StepRow {
  std::size_t step = 0;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rounds = 0;
  std::uint64_t decoded = 0;
  std::uint64_t ngram_hits = 0;
  double cost = 0.0;
  double acc_rate = 0.0;
  double ngram_hit = 0.0;
  double accel_rate = 0.0;
  double overhead = 0.0;
  double speedup = 0.0;
  std::size_t cache_size = 0;
};

StepRow make_row(std::size_t step, std::span<const StepMetrics> rounds, const CostModel& cost, std::size_t cache_size);

struct Aggregates {
  std::size_t samples = 0;
  double acceptance_rate = 0.0;
  double acceleration_rate = 0.0;
  double overhead = 0.0;
  double speedup = 0.0;
  double avg_ngram_hit = 0.0;
};

/// Pure function of the rows; nullopt for an empty slice.
std::optional<Aggregates> aggregate(std::span<const StepRow> rows, const CostModel& cost);

/// Acceptance over rows [begin, end).
double window_acceptance(std::span<const StepRow> rows, std::size_t begin, std::size_t end);

struct CacheCheckpoint {
  std::size_t step = 0;
  std::uint64_t tokens_processed = 0;
  CacheStats stats;
};

struct RunReport {
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<StepRow> rows;
  std::optional<Aggregates> aggregates;
  std::vector<StepRow> eval_rows;
  std::optional<Aggregates> eval;
  std::vector<CacheCheckpoint> cache_trajectory;
  std::map<std::uint64_t, std::size_t> hit_histogram;
  std::size_t final_cache_size = 0;
  bool capacity_respected = true;
  std::vector<double> distill_losses;
  std::vector<double> head_losses;
};

std::string format_csv_row(const StepRow& row);
void write_csv(std::ostream& out, std::span<const StepRow> rows);
std::string to_csv(std::span<const StepRow> rows);

/// Parses a CSV written by write_csv back into the visible columns.
std::vector<StepRow> read_csv(std::istream& in);

nlohmann::json to_json(const Aggregates& agg);
nlohmann::json report_to_json(const RunReport& report);

/// Entries per hit count.
std::map<std::uint64_t, std::size_t> hit_histogram(const NGramCache& cache);
void write_histogram(std::ostream& out, const std::map<std::uint64_t, std::size_t>& histogram);

enum class ReportFormat { Csv, Json, Histogram };

/// Writes rows.csv, report.json and/or histogram.csv under `dir`; returns the
/// paths written.
std::vector<std::filesystem::path> report_emit(const RunReport& report, const std::filesystem::path& dir,
                                               std::span<const ReportFormat> formats);

}  // namespace xvspec
