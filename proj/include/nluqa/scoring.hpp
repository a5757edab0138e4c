#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nluqa/corpus.hpp"
#include "nluqa/instruction.hpp"

namespace nluqa {

struct Prediction {
  std::string utterance_id;
  std::set<std::string> intents;
  // Absent key = unanswerable. Several values are joined with "; ".
  std::map<std::string, std::string> slot_values;
};

enum class Task { ID, VE };

std::string_view to_string(Task task);
Task parse_task(std::string_view s);

struct EvalReport {
  Task task = Task::ID;
  double micro_f1 = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::vector<std::pair<int, double>> per_fold;
  std::string aggregate_rule = "mean-of-folds";
  // F1 from the summed counts; reported next to the mean, never instead of it.
  std::optional<double> pooled_micro_f1;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// 2tp / (2tp + fp + fn); 1.0 when there is nothing to count.
double micro_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

// Only an answer normalizing to "yes" is positive.
bool parse_id_answer(std::string_view text);
std::optional<std::string> parse_ve_answer(std::string_view text);

// Greedy longest-match scan, case-insensitive, on word boundaries.
// "none of the above" and unmatched text contribute nothing.
std::set<std::size_t> parse_mc_answer(std::string_view text, std::span<const std::string> options);

// Groups answers per utterance id. Every utterance that has at least one
// instance gets a Prediction, in order of first appearance.
std::vector<Prediction> assemble(std::span<const InstructionInstance> instances,
                                 std::span<const std::string> answers, const DomainOntology& o);

// Predictions that reproduce the gold labels (what a perfect model emits).
Prediction gold_prediction(const AnnotatedUtterance& u);

EvalReport micro_f1_id(std::span<const Prediction> preds, std::span<const AnnotatedUtterance> gold,
                       int fold_id = 0);
EvalReport micro_f1_ve(std::span<const Prediction> preds, std::span<const AnnotatedUtterance> gold,
                       int fold_id = 0);
EvalReport score(Task task, std::span<const Prediction> preds,
                 std::span<const AnnotatedUtterance> gold, int fold_id = 0);

// Unweighted mean of the per-fold scores; counts are summed.
EvalReport aggregate(std::span<const EvalReport> reports);

}  // namespace nluqa
