// Python bindings: tokenizers, the core decoding math and scenario runs.
// Structured values cross the boundary as JSON text.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvspec/adapt.hpp"
#include "xvspec/engine.hpp"
#include "xvspec/lm.hpp"
#include "xvspec/report.hpp"
#include "xvspec/scenario.hpp"
#include "xvspec/tokenizer.hpp"
#include "xvspec/translate.hpp"

namespace py = pybind11;
using namespace xvspec;

namespace {

CategoricalDist dist(std::vector<double> probs, VocabSpace space, bool subnormalized = false) {
  CategoricalDist d;
  d.probs = std::move(probs);
  d.space = space;
  d.subnormalized = subnormalized;
  return d;
}

std::string report_json(const RunReport& r) {
  nlohmann::json doc = report_to_json(r);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"step", row.step},
                    {"proposed", row.proposed},
                    {"accepted", row.accepted},
                    {"acc_rate", row.acc_rate},
                    {"ngram_hit", row.ngram_hit},
                    {"accel_rate", row.accel_rate},
                    {"overhead", row.overhead},
                    {"speedup", row.speedup},
                    {"cache_size", row.cache_size}});
  }
  doc["rows"] = rows;
  doc["csv"] = to_csv(r.rows);
  doc["distill_losses"] = r.distill_losses;
  doc["head_losses"] = r.head_losses;
  return doc.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-vocabulary speculative decoding toolkit";

  py::class_<Tokenizer>(m, "Tokenizer")
      .def_static(
          "train", [](const std::vector<std::string>& corpus, std::size_t merges) { return Tokenizer::train(corpus, merges); },
          py::arg("corpus"), py::arg("num_merges"))
      .def_static("from_json", [](const std::string& text) { return Tokenizer::from_json(nlohmann::json::parse(text)); })
      .def_static("load", [](const std::string& path) { return Tokenizer::load(path); })
      .def("to_json", [](const Tokenizer& t) { return t.to_json().dump(); })
      .def("save", [](const Tokenizer& t, const std::string& path) { t.save(path); })
      .def("tokenize", &Tokenizer::tokenize, py::arg("text"))
      .def("detokenize", [](const Tokenizer& t, const std::vector<TokenId>& ids) { return t.detokenize(ids); })
      .def("surface", &Tokenizer::surface, py::arg("id"))
      .def("find", &Tokenizer::find, py::arg("surface"))
      .def_property_readonly("vocab", &Tokenizer::vocab)
      .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
      .def("__len__", &Tokenizer::vocab_size);

  py::class_<DirectMap>(m, "DirectMap")
      .def_static("build", &DirectMap::build, py::arg("draft"), py::arg("target"))
      .def("to_target", &DirectMap::to_target)
      .def("to_draft", &DirectMap::to_draft)
      .def_property_readonly("draft_domain", &DirectMap::draft_domain)
      .def("__len__", &DirectMap::size);

  m.def(
      "residual",
      [](const std::vector<double>& p, const std::vector<double>& q_prime) {
        return residual(dist(p, VocabSpace::Target), dist(q_prime, VocabSpace::Target, true)).probs;
      },
      py::arg("p"), py::arg("q_prime"), "norm(max(0, p - q')), or p when nothing is left over.");
  m.def(
      "elevate",
      [](const std::vector<double>& q, const DirectMap& dmap, std::size_t target_vocab, std::optional<TokenId> ngram_target,
         const std::vector<TokenId>& draft_seq, const std::vector<std::vector<double>>& sub_dists) {
        NGramMatch match;
        if (ngram_target) {
          match.target_token = *ngram_target;
          match.draft_seq = draft_seq;
          for (const auto& s : sub_dists) match.sub_dists.push_back(dist(s, VocabSpace::Draft));
        }
        return elevate_distribution(dist(q, VocabSpace::Draft), dmap, target_vocab, ngram_target ? &match : nullptr).probs;
      },
      py::arg("q"), py::arg("dmap"), py::arg("target_vocab"), py::arg("ngram_target") = py::none(),
      py::arg("draft_seq") = std::vector<TokenId>{}, py::arg("sub_dists") = std::vector<std::vector<double>>{},
      "Drafter distribution re-expressed over the target vocabulary.");
  m.def("early_exit", [](const std::vector<double>& probs, double threshold) { return early_exit(probs, threshold); },
        py::arg("accept_probs"), py::arg("threshold"));
  m.def("acceptance_label", &acceptance_label, py::arg("p"), py::arg("q"));
  m.def(
      "compute_speedup",
      [](const std::vector<std::tuple<std::size_t, double, double>>& rounds, double target_step_cost) {
        std::vector<StepMetrics> metrics;
        for (const auto& [decoded, draft_cost, target_cost] : rounds) {
          StepMetrics s;
          s.decoded = decoded;
          s.draft_cost = draft_cost;
          s.target_cost = target_cost;
          metrics.push_back(s);
        }
        CostModel cost;
        cost.target_step_cost = target_step_cost;
        const auto r = compute_speedup(metrics, cost);
        py::dict out;
        out["acceleration_rate"] = r.acceleration_rate;
        out["overhead"] = r.overhead;
        out["speedup"] = r.speedup;
        return out;
      },
      py::arg("rounds"), py::arg("target_step_cost") = 1.0,
      "Rounds are (tokens decoded, drafting cost, verification cost) triples.");

  m.def("_run_scenario", [](const std::string& config) {
    ScenarioConfig c = scenario_from_json(nlohmann::json::parse(config));
    py::gil_scoped_release release;
    return report_json(run_scenario(c));
  });
  m.def("_sweep", [](const std::string& config, const std::string& axis, const std::vector<std::string>& values) {
    ScenarioConfig c = scenario_from_json(nlohmann::json::parse(config));
    const SweepAxis a = parse_sweep_axis(axis);
    py::gil_scoped_release release;
    const SweepResult r = sweep(c, a, values);
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& rep : r.reports) reports.push_back(nlohmann::json::parse(report_json(rep)));
    return nlohmann::json({{"table", sweep_table(r)}, {"values", r.values}, {"reports", reports}}).dump();
  });
  m.def("_load_scenario", [](const std::string& path) { return to_json(load_scenario(path)).dump(); });
  m.def("_normalize_scenario", [](const std::string& config) {
    const ScenarioConfig c = scenario_from_json(nlohmann::json::parse(config));
    c.validate();
    return to_json(c).dump();
  });

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });
}
