#include "nluqa/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0;

  void add(const std::set<std::string>& predicted, const std::set<std::string>& gold) {
    for (const auto& p : predicted) {
      if (gold.count(p)) ++tp; else ++fp;
    }
    for (const auto& g : gold) {
      if (!predicted.count(g)) ++fn;
    }
  }
};

EvalReport make_report(Task task, const Counts& c, int fold_id) {
  EvalReport r;
  r.task = task;
  r.tp = c.tp;
  r.fp = c.fp;
  r.fn = c.fn;
  r.micro_f1 = micro_f1(c.tp, c.fp, c.fn);
  r.per_fold = {{fold_id, r.micro_f1}};
  r.pooled_micro_f1 = r.micro_f1;
  return r;
}

std::unordered_map<std::string_view, const Prediction*> index_predictions(
    std::span<const Prediction> preds, std::span<const AnnotatedUtterance> gold) {
  std::unordered_map<std::string_view, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.utterance_id, &p).second) {
      throw ArgumentError("duplicate prediction for utterance " + p.utterance_id);
    }
  }
  if (by_id.size() != gold.size()) {
    throw ArgumentError("prediction/gold utterance sets differ: " + std::to_string(by_id.size()) +
                        " predictions, " + std::to_string(gold.size()) + " gold utterances");
  }
  for (const auto& u : gold) {
    if (!by_id.count(u.id)) throw ArgumentError("no prediction for utterance " + u.id);
  }
  return by_id;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

std::string_view to_string(Task task) { return task == Task::ID ? "ID" : "VE"; }

Task parse_task(std::string_view s) {
  auto lowered = to_lower(s);
  if (lowered == "id") return Task::ID;
  if (lowered == "ve") return Task::VE;
  throw ArgumentError("unknown task '" + std::string(s) + "'");
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["task"] = to_string(r.task);
  j["micro_f1"] = r.micro_f1;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  auto folds = nlohmann::json::array();
  for (const auto& [id, f1] : r.per_fold) folds.push_back({{"fold_id", id}, {"micro_f1", f1}});
  j["per_fold"] = std::move(folds);
  j["aggregate_rule"] = r.aggregate_rule;
  j["pooled_micro_f1"] = r.pooled_micro_f1 ? nlohmann::json(*r.pooled_micro_f1) : nlohmann::json(nullptr);
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.micro_f1 = j.at("micro_f1").get<double>();
  r.tp = j.at("tp").get<std::uint64_t>();
  r.fp = j.at("fp").get<std::uint64_t>();
  r.fn = j.at("fn").get<std::uint64_t>();
  for (const auto& f : j.at("per_fold")) {
    r.per_fold.emplace_back(f.at("fold_id").get<int>(), f.at("micro_f1").get<double>());
  }
  r.aggregate_rule = j.value("aggregate_rule", std::string("mean-of-folds"));
  if (j.contains("pooled_micro_f1") && !j["pooled_micro_f1"].is_null()) {
    r.pooled_micro_f1 = j["pooled_micro_f1"].get<double>();
  }
  return r;
}

double micro_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * tp) / static_cast<double>(denom);
}

bool parse_id_answer(std::string_view text) { return normalize_answer(text) == kYes; }

std::optional<std::string> parse_ve_answer(std::string_view text) {
  auto normalized = normalize_answer(text);
  if (normalized.empty() || normalized == kUnanswerable) return std::nullopt;
  return normalize_value(text);
}

std::set<std::size_t> parse_mc_answer(std::string_view text, std::span<const std::string> options) {
  const std::string haystack = to_lower(text);
  // Candidate needles: the options plus the none token (index = options.size()).
  std::vector<std::pair<std::string, std::size_t>> needles;
  for (std::size_t i = 0; i < options.size(); ++i) {
    auto lowered = to_lower(trim(options[i]));
    if (!lowered.empty()) needles.emplace_back(std::move(lowered), i);
  }
  needles.emplace_back(std::string(kNoneOfTheAbove), options.size());
  std::stable_sort(needles.begin(), needles.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  std::set<std::size_t> out;
  std::size_t i = 0;
  while (i < haystack.size()) {
    bool at_boundary = i == 0 || !is_word_char(haystack[i - 1]);
    bool matched = false;
    if (at_boundary) {
      for (const auto& [needle, idx] : needles) {
        if (haystack.compare(i, needle.size(), needle) != 0) continue;
        std::size_t end = i + needle.size();
        if (end < haystack.size() && is_word_char(haystack[end]) && is_word_char(needle.back())) continue;
        if (idx < options.size()) out.insert(idx);
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

std::vector<Prediction> assemble(std::span<const InstructionInstance> instances,
                                 std::span<const std::string> answers, const DomainOntology& o) {
  if (instances.size() != answers.size()) {
    throw ArgumentError("assemble: " + std::to_string(instances.size()) + " instances but " +
                        std::to_string(answers.size()) + " answers");
  }
  if (instances.empty()) return {};
  const TaskKind kind = instances.front().task_kind;
  std::vector<std::string> options;
  if (kind == TaskKind::McId) options = mc_options(o);

  std::vector<Prediction> out;
  std::unordered_map<std::string, std::size_t> slot_of;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.task_kind != kind) throw ArgumentError("assemble: instances mix task kinds");
    auto [it, inserted] = slot_of.try_emplace(inst.utterance_id, out.size());
    if (inserted) {
      Prediction p;
      p.utterance_id = inst.utterance_id;
      out.push_back(std::move(p));
    }
    Prediction& pred = out[it->second];
    switch (kind) {
      case TaskKind::IdBinary:
        if (parse_id_answer(answers[i])) pred.intents.insert(inst.class_name);
        break;
      case TaskKind::VeExtractive:
        if (auto value = parse_ve_answer(answers[i])) {
          auto values = split_values(*value);
          if (!values.empty()) pred.slot_values[inst.class_name] = join(values, kValueSeparator);
        }
        break;
      case TaskKind::McId:
        for (std::size_t idx : parse_mc_answer(answers[i], options)) {
          pred.intents.insert(o.intents[idx].name);
        }
        break;
    }
  }
  return out;
}

Prediction gold_prediction(const AnnotatedUtterance& u) {
  Prediction p;
  p.utterance_id = u.id;
  p.intents = u.gold_intents;
  for (const auto& sv : u.gold_slots) {
    if (p.slot_values.count(sv.slot)) continue;
    auto values = u.values_for(sv.slot);
    if (!values.empty()) p.slot_values[sv.slot] = join(values, kValueSeparator);
  }
  return p;
}

EvalReport micro_f1_id(std::span<const Prediction> preds, std::span<const AnnotatedUtterance> gold,
                       int fold_id) {
  auto by_id = index_predictions(preds, gold);
  Counts c;
  for (const auto& u : gold) c.add(by_id.at(u.id)->intents, u.gold_intents);
  return make_report(Task::ID, c, fold_id);
}

EvalReport micro_f1_ve(std::span<const Prediction> preds, std::span<const AnnotatedUtterance> gold,
                       int fold_id) {
  auto by_id = index_predictions(preds, gold);
  Counts c;
  for (const auto& u : gold) {
    const Prediction& p = *by_id.at(u.id);
    std::set<std::string> slots;
    for (const auto& sv : u.gold_slots) slots.insert(sv.slot);
    for (const auto& [slot, _] : p.slot_values) slots.insert(slot);
    for (const auto& slot : slots) {
      auto it = p.slot_values.find(slot);
      std::set<std::string> predicted;
      if (it != p.slot_values.end()) predicted = as_set(split_values(it->second));
      c.add(predicted, as_set(u.values_for(slot)));
    }
  }
  return make_report(Task::VE, c, fold_id);
}

EvalReport score(Task task, std::span<const Prediction> preds,
                 std::span<const AnnotatedUtterance> gold, int fold_id) {
  return task == Task::ID ? micro_f1_id(preds, gold, fold_id) : micro_f1_ve(preds, gold, fold_id);
}

EvalReport aggregate(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ArgumentError("aggregate: no reports");
  EvalReport out;
  out.task = reports.front().task;
  double sum = 0.0;
  for (const auto& r : reports) {
    if (r.task != out.task) throw ArgumentError("aggregate: reports mix tasks");
    sum += r.micro_f1;
    out.tp += r.tp;
    out.fp += r.fp;
    out.fn += r.fn;
    out.per_fold.insert(out.per_fold.end(), r.per_fold.begin(), r.per_fold.end());
  }
  out.micro_f1 = sum / static_cast<double>(reports.size());
  out.pooled_micro_f1 = micro_f1(out.tp, out.fp, out.fn);
  return out;
}

}  // namespace nluqa
