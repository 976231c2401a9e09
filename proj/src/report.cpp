#include "xvspec/report.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace xvspec {

StepRow make_row(std::size_t step, std::span<const StepMetrics> rounds, const CostModel& cost, std::size_t cache_size) {
  StepRow row;
  row.step = step;
  row.cache_size = cache_size;
  row.rounds = rounds.size();
  for (const auto& m : rounds) {
    row.proposed += m.proposed;
    row.accepted += m.accepted;
    row.decoded += m.decoded;
    row.ngram_hits += m.ngram_hits;
    row.cost += m.draft_cost + m.target_cost;
  }
  if (row.proposed > 0) row.acc_rate = static_cast<double>(row.accepted) / static_cast<double>(row.proposed);
  if (row.rounds > 0) {
    const double r = static_cast<double>(row.rounds);
    row.ngram_hit = static_cast<double>(row.ngram_hits) / r;
    row.accel_rate = static_cast<double>(row.decoded) / r;
    row.overhead = row.cost / r / cost.target_step_cost;
    row.speedup = row.accel_rate / row.overhead;
  }
  return row;
}

std::optional<Aggregates> aggregate(std::span<const StepRow> rows, const CostModel& cost) {
  if (rows.empty()) return std::nullopt;
  Aggregates a;
  a.samples = rows.size();
  std::uint64_t proposed = 0, accepted = 0, rounds = 0, decoded = 0, hits = 0;
  double spent = 0.0;
  for (const auto& r : rows) {
    proposed += r.proposed;
    accepted += r.accepted;
    rounds += r.rounds;
    decoded += r.decoded;
    hits += r.ngram_hits;
    spent += r.cost;
  }
  if (proposed > 0) a.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  if (rounds > 0) {
    const double n = static_cast<double>(rounds);
    a.acceleration_rate = static_cast<double>(decoded) / n;
    a.overhead = spent / n / cost.target_step_cost;
    a.speedup = a.acceleration_rate / a.overhead;
    a.avg_ngram_hit = static_cast<double>(hits) / n;
  }
  return a;
}

double window_acceptance(std::span<const StepRow> rows, std::size_t begin, std::size_t end) {
  std::uint64_t proposed = 0, accepted = 0;
  for (std::size_t i = begin; i < end && i < rows.size(); ++i) {
    proposed += rows[i].proposed;
    accepted += rows[i].accepted;
  }
  return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
}

std::string format_csv_row(const StepRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%llu,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%zu", r.step,
                static_cast<unsigned long long>(r.proposed), static_cast<unsigned long long>(r.accepted), r.acc_rate,
                r.ngram_hit, r.accel_rate, r.overhead, r.speedup, r.cache_size);
  return buf;
}

void write_csv(std::ostream& out, std::span<const StepRow> rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << format_csv_row(r) << '\n';
}

std::string to_csv(std::span<const StepRow> rows) {
  std::ostringstream out;
  write_csv(out, rows);
  return out.str();
}

std::vector<StepRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("csv: unexpected header");
  std::vector<StepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StepRow r;
    unsigned long long proposed = 0, accepted = 0;
    if (std::sscanf(line.c_str(), "%zu,%llu,%llu,%lf,%lf,%lf,%lf,%lf,%zu", &r.step, &proposed, &accepted, &r.acc_rate,
                    &r.ngram_hit, &r.accel_rate, &r.overhead, &r.speedup, &r.cache_size) != 9) {
      throw std::runtime_error("csv: malformed row '" + line + "'");
    }
    r.proposed = proposed;
    r.accepted = accepted;
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json to_json(const Aggregates& a) {
  return {{"samples", a.samples},
          {"acceptance_rate", a.acceptance_rate},
          {"acceleration_rate", a.acceleration_rate},
          {"overhead", a.overhead},
          {"speedup", a.speedup},
          {"avg_ngram_hit", a.avg_ngram_hit}};
}

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json trajectory = nlohmann::json::array();
  for (const auto& c : report.cache_trajectory) {
    trajectory.push_back({{"step", c.step},
                          {"tokens_processed", c.tokens_processed},
                          {"size", c.stats.size},
                          {"memory_estimate", c.stats.memory_estimate},
                          {"growth_rate", c.stats.growth_rate},
                          {"hit_rate", c.stats.hit_rate}});
  }
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [hits, n] : report.hit_histogram) hist[std::to_string(hits)] = n;
  nlohmann::json doc = {{"note", kCostNote},
                        {"seed", report.seed},
                        {"config", report.config},
                        {"samples", report.rows.size()},
                        {"aggregates", report.aggregates ? to_json(*report.aggregates) : nlohmann::json(nullptr)},
                        {"eval", report.eval ? to_json(*report.eval) : nlohmann::json(nullptr)},
                        {"cache_trajectory", trajectory},
                        {"final_cache_size", report.final_cache_size},
                        {"capacity_respected", report.capacity_respected},
                        {"hit_histogram", hist}};
  return doc;
}

std::map<std::uint64_t, std::size_t> hit_histogram(const NGramCache& cache) {
  std::map<std::uint64_t, std::size_t> out;
  for (const auto& e : cache.entries()) ++out[e.hit_count];
  return out;
}

void write_histogram(std::ostream& out, const std::map<std::uint64_t, std::size_t>& histogram) {
  out << "hits,entries\n";
  for (const auto& [hits, n] : histogram) out << hits << ',' << n << '\n';
}

std::vector<std::filesystem::path> report_emit(const RunReport& report, const std::filesystem::path& dir,
                                               std::span<const ReportFormat> formats) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& name) {
    const auto path = dir / name;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("report: cannot write " + path.string());
    written.push_back(path);
    return out;
  };
  for (ReportFormat f : formats) {
    switch (f) {
      case ReportFormat::Csv: {
        auto out = open("rows.csv");
        write_csv(out, report.rows);
        if (!report.eval_rows.empty()) {
          auto eval = open("eval_rows.csv");
          write_csv(eval, report.eval_rows);
        }
        break;
      }
      case ReportFormat::Json: {
        auto out = open("report.json");
        out << report_to_json(report).dump(2) << '\n';
        break;
      }
      case ReportFormat::Histogram: {
        auto out = open("histogram.csv");
        write_histogram(out, report.hit_histogram);
        break;
      }
    }
  }
  return written;
}

}  // namespace xvspec
