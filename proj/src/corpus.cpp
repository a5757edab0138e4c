#include "nluqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"
#include "nluqa/fingerprint.hpp"
#include "nluqa/rng.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

template <typename Class>
void check_unique(const std::vector<Class>& classes, const std::string& kind,
                  const std::string& domain) {
  std::unordered_set<std::string> seen;
  for (const auto& c : classes) {
    if (c.name.empty()) throw ValidationError(domain + ": " + kind + " with empty name");
    if (trim(c.description).empty()) {
      throw ValidationError(domain + ": " + kind + " '" + c.name + "' has no description");
    }
    if (!seen.insert(c.name).second) {
      throw ValidationError(domain + ": duplicate " + kind + " '" + c.name + "'");
    }
  }
}

bool domain_matches(const ordered_json& spec, const std::string& domain) {
  if (!spec.is_object() || !spec.contains("domain")) return true;
  const auto& d = spec["domain"];
  auto matches = [&](const ordered_json& v) {
    return v.is_string() && (v.get<std::string>() == "general" || v.get<std::string>() == domain);
  };
  if (d.is_array()) return std::any_of(d.begin(), d.end(), matches);
  return matches(d);
}

template <typename Class>
std::vector<Class> read_classes(const ordered_json& table, const std::string& domain,
                                const fs::path& file) {
  std::vector<Class> out;
  if (table.is_null()) return out;
  if (!table.is_object()) throw LoadError(file.string() + ": class table must be an object");
  for (const auto& [name, spec] : table.items()) {
    if (!domain_matches(spec, domain)) continue;
    Class c;
    c.name = name;
    if (spec.is_string()) {
      c.description = spec.template get<std::string>();
    } else if (spec.is_object()) {
      c.description = spec.value("description", std::string{});
      if (spec.contains("question")) c.question = spec["question"].template get<std::string>();
    } else {
      throw LoadError(file.string() + ": bad entry for class '" + name + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

SlotValue read_slot_value(const std::string& slot, const ordered_json& v, const fs::path& file) {
  SlotValue sv;
  sv.slot = slot;
  if (v.is_string()) {
    sv.value = v.get<std::string>();
    return sv;
  }
  if (!v.is_object() || !v.contains("text")) {
    throw LoadError(file.string() + ": slot '" + slot + "' needs a \"text\" field");
  }
  sv.value = v["text"].get<std::string>();
  if (v.contains("span") && !v["span"].is_null()) {
    const auto& s = v["span"];
    if (!s.is_array() || s.size() != 2) {
      throw LoadError(file.string() + ": slot '" + slot + "' span must be [start, end]");
    }
    sv.span = Span{s[0].get<std::size_t>(), s[1].get<std::size_t>()};
  }
  return sv;
}

std::vector<AnnotatedUtterance> read_nlupp_fold(const fs::path& file, const std::string& prefix) {
  auto doc = read_json_file(file);
  if (doc.is_null()) return {};
  if (!doc.is_array()) throw LoadError(file.string() + ": expected an array of utterances");
  std::vector<AnnotatedUtterance> out;
  out.reserve(doc.size());
  try {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& rec = doc[i];
      AnnotatedUtterance u;
      u.id = prefix + "/" + std::to_string(i);
      u.text = rec.at("text").get<std::string>();
      if (rec.contains("intents") && !rec["intents"].is_null()) {
        for (const auto& name : rec["intents"]) u.gold_intents.insert(name.get<std::string>());
      }
      if (rec.contains("slots") && !rec["slots"].is_null()) {
        for (const auto& [slot, v] : rec["slots"].items()) {
          if (v.is_array()) {
            for (const auto& each : v) u.gold_slots.push_back(read_slot_value(slot, each, file));
          } else {
            u.gold_slots.push_back(read_slot_value(slot, v, file));
          }
        }
      }
      out.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed utterance record in " + file.string() + ": " + e.what());
  }
  return out;
}

std::vector<std::string> ids_of(std::span<const AnnotatedUtterance> us) {
  std::vector<std::string> ids;
  ids.reserve(us.size());
  for (const auto& u : us) ids.push_back(u.id);
  return ids;
}

// Fold i trains on chunk i and tests on the others (or the reverse).
std::vector<FoldSplit> folds_from_chunks(const std::vector<std::vector<std::string>>& chunks,
                                         FoldRole role) {
  std::vector<FoldSplit> folds;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    FoldSplit f;
    f.fold_id = static_cast<int>(i);
    std::vector<std::string> rest;
    for (std::size_t j = 0; j < chunks.size(); ++j) {
      if (j != i) rest.insert(rest.end(), chunks[j].begin(), chunks[j].end());
    }
    if (role == FoldRole::TrainOnOne) {
      f.train_ids = chunks[i];
      f.test_ids = std::move(rest);
    } else {
      f.train_ids = std::move(rest);
      f.test_ids = chunks[i];
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace

const IntentClass* DomainOntology::find_intent(std::string_view name) const {
  for (const auto& c : intents) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

const SlotClass* DomainOntology::find_slot(std::string_view name) const {
  for (const auto& c : slots) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void DomainOntology::validate() const {
  if (domain_name.empty()) throw ValidationError("ontology with empty domain name");
  check_unique(intents, "intent", domain_name);
  check_unique(slots, "slot", domain_name);
}

std::vector<std::string> AnnotatedUtterance::values_for(std::string_view slot) const {
  std::vector<const SlotValue*> hits;
  for (const auto& sv : gold_slots) {
    if (sv.slot == slot) hits.push_back(&sv);
  }
  bool all_spans = std::all_of(hits.begin(), hits.end(), [](const SlotValue* s) { return s->span.has_value(); });
  if (all_spans) {
    std::stable_sort(hits.begin(), hits.end(),
                     [](const SlotValue* a, const SlotValue* b) { return a->span->start < b->span->start; });
  }
  std::vector<std::string> out;
  for (const auto* sv : hits) {
    auto v = normalize_value(sv->value);
    if (!v.empty()) out.push_back(std::move(v));
  }
  return out;
}

void validate_utterance(const AnnotatedUtterance& u, const DomainOntology& o) {
  for (const auto& intent : u.gold_intents) {
    if (!o.find_intent(intent)) {
      throw ValidationError("utterance " + u.id + ": unknown intent '" + intent + "' in domain " +
                            o.domain_name);
    }
  }
  for (const auto& sv : u.gold_slots) {
    if (!o.find_slot(sv.slot)) {
      throw ValidationError("utterance " + u.id + ": unknown slot '" + sv.slot + "' in domain " +
                            o.domain_name);
    }
    if (sv.span) {
      if (sv.span->start > sv.span->end || sv.span->end > u.text.size()) {
        throw ValidationError("utterance " + u.id + ": span of slot '" + sv.slot + "' out of range");
      }
      auto covered = std::string_view(u.text).substr(sv.span->start, sv.span->end - sv.span->start);
      if (normalize_value(covered) != normalize_value(sv.value)) {
        throw ValidationError("utterance " + u.id + ": span of slot '" + sv.slot + "' covers '" +
                              std::string(covered) + "', value is '" + sv.value + "'");
      }
    }
  }
}

NluppDomain load_nluplusplus(const fs::path& path, const std::string& domain_name) {
  NluppDomain out;
  const fs::path ontology_file = path / "ontology.json";
  auto ontology = read_json_file(ontology_file);
  out.ontology.domain_name = domain_name;
  out.ontology.intents = read_classes<IntentClass>(ontology.value("intents", ordered_json{}),
                                                   domain_name, ontology_file);
  out.ontology.slots = read_classes<SlotClass>(ontology.value("slots", ordered_json{}),
                                               domain_name, ontology_file);
  out.ontology.validate();

  const fs::path dir = path / domain_name;
  std::vector<std::vector<std::string>> chunks;
  for (int i = 0;; ++i) {
    fs::path file = dir / ("fold" + std::to_string(i) + ".json");
    if (!fs::exists(file)) {
      if (i == 0) throw LoadError("missing fold file " + file.string());
      break;
    }
    auto fold = read_nlupp_fold(file, domain_name + "/fold" + std::to_string(i));
    for (const auto& u : fold) validate_utterance(u, out.ontology);
    chunks.push_back(ids_of(fold));
    std::move(fold.begin(), fold.end(), std::back_inserter(out.utterances));
  }

  const int n = static_cast<int>(chunks.size());
  out.folds[n] = folds_from_chunks(chunks, FoldRole::TrainOnOne);
  if (n >= 4 && n % 2 == 0) {
    std::vector<std::vector<std::string>> paired;
    for (int i = 0; i < n; i += 2) {
      auto merged = chunks[i];
      merged.insert(merged.end(), chunks[i + 1].begin(), chunks[i + 1].end());
      paired.push_back(std::move(merged));
    }
    out.folds[n / 2] = folds_from_chunks(paired, FoldRole::TrainOnOne);
  }
  return out;
}

std::map<std::string, ClincDomain> load_clinc(const fs::path& path, const ClincOptions& options) {
  const fs::path data_file = path / "data_full.json";
  const fs::path domains_file = path / "domains.json";
  const fs::path desc_file = options.descriptions.value_or(path / "descriptions.json");

  auto data = read_json_file(data_file);
  auto domains = read_json_file(domains_file);
  auto descriptions = read_json_file(desc_file);
  if (!domains.is_object()) throw LoadError(domains_file.string() + ": expected an object");
  if (!descriptions.is_object()) throw LoadError(desc_file.string() + ": expected an object");

  std::map<std::string, ClincDomain> out;
  std::unordered_map<std::string, std::string> domain_of_intent;
  for (const auto& [domain, intents] : domains.items()) {
    ClincDomain d;
    d.ontology.domain_name = domain;
    for (const auto& name_json : intents) {
      IntentClass c;
      c.name = name_json.get<std::string>();
      if (!descriptions.contains(c.name)) {
        throw ValidationError("intent '" + c.name + "' has no entry in " + desc_file.string());
      }
      const auto& entry = descriptions[c.name];
      if (entry.is_string()) {
        c.description = entry.get<std::string>();
      } else {
        c.description = entry.value("description", std::string{});
        if (entry.contains("question")) c.question = entry["question"].get<std::string>();
      }
      domain_of_intent[c.name] = domain;
      d.ontology.intents.push_back(std::move(c));
    }
    if (d.ontology.intents.size() != kClincIntentsPerDomain) {
      throw ValidationError("domain " + domain + " has " + std::to_string(d.ontology.intents.size()) +
                            " intents, expected " + std::to_string(kClincIntentsPerDomain));
    }
    d.ontology.validate();
    out.emplace(domain, std::move(d));
  }

  std::vector<AnnotatedUtterance> oos;
  try {
    for (const auto& split : options.splits) {
      if (!data.contains(split)) throw LoadError(data_file.string() + ": no partition '" + split + "'");
      const auto& records = data[split];
      for (std::size_t i = 0; i < records.size(); ++i) {
        AnnotatedUtterance u;
        u.id = "clinc/" + split + "/" + std::to_string(i);
        u.text = records[i].at(0).get<std::string>();
        const auto intent = records[i].at(1).get<std::string>();
        if (intent == "oos") {
          oos.push_back(std::move(u));
          continue;
        }
        auto it = domain_of_intent.find(intent);
        if (it == domain_of_intent.end()) {
          throw ValidationError("utterance " + u.id + ": intent '" + intent + "' not in any domain");
        }
        u.gold_intents.insert(intent);
        out[it->second].utterances.push_back(std::move(u));
      }
      const std::string oos_split = "oos_" + split;
      if (data.contains(oos_split)) {
        const auto& records_oos = data[oos_split];
        for (std::size_t i = 0; i < records_oos.size(); ++i) {
          AnnotatedUtterance u;
          u.id = "clinc/" + oos_split + "/" + std::to_string(i);
          u.text = records_oos[i].at(0).get<std::string>();
          oos.push_back(std::move(u));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed record in " + data_file.string() + ": " + e.what());
  }
  for (auto& [_, d] : out) d.out_of_scope = oos;
  return out;
}

std::vector<FoldSplit> make_folds(std::span<const AnnotatedUtterance> utterances, int k,
                                  std::uint64_t seed, FoldRole role) {
  if (k < 2) throw ArgumentError("make_folds: k must be at least 2");
  if (static_cast<std::size_t>(k) > utterances.size()) {
    throw ArgumentError("make_folds: k=" + std::to_string(k) + " exceeds corpus size " +
                        std::to_string(utterances.size()));
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    std::string key;
    for (const auto& intent : utterances[i].gold_intents) key += intent + '\x1f';
    strata[key].push_back(i);
  }

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  std::size_t cursor = 0;
  for (auto& [_, idx] : strata) {
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i : idx) {
      members[cursor].push_back(i);
      cursor = (cursor + 1) % static_cast<std::size_t>(k);
    }
  }

  std::vector<std::vector<std::string>> chunks;
  for (auto& m : members) {
    std::sort(m.begin(), m.end());
    std::vector<std::string> ids;
    for (std::size_t i : m) ids.push_back(utterances[i].id);
    chunks.push_back(std::move(ids));
  }
  return folds_from_chunks(chunks, role);
}

SampleSplit sample_efficiency_split(std::span<const AnnotatedUtterance> utterances,
                                    std::size_t n_train, std::uint64_t seed,
                                    std::size_t test_size) {
  if (n_train == 0) throw ArgumentError("sample_efficiency_split: n_train must be positive");
  if (utterances.size() < test_size + n_train) {
    throw ArgumentError("sample_efficiency_split: need " + std::to_string(test_size + n_train) +
                        " utterances, corpus has " + std::to_string(utterances.size()));
  }
  std::vector<std::size_t> order(utterances.size());
  std::iota(order.begin(), order.end(), 0);
  Rng test_rng = Rng::derive(seed, 0);
  test_rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_size));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(test_size), order.end());
  std::sort(test.begin(), test.end());
  std::sort(rest.begin(), rest.end());

  Rng train_rng = Rng::derive(seed, 1 + n_train);
  train_rng.shuffle(std::span<std::size_t>(rest));
  rest.resize(n_train);
  std::sort(rest.begin(), rest.end());

  SampleSplit out;
  for (std::size_t i : test) out.test.push_back(utterances[i]);
  for (std::size_t i : rest) out.train.push_back(utterances[i]);
  return out;
}

std::vector<AnnotatedUtterance> select(std::span<const AnnotatedUtterance> utterances,
                                       std::span<const std::string> ids) {
  std::unordered_map<std::string_view, const AnnotatedUtterance*> by_id;
  for (const auto& u : utterances) by_id.emplace(u.id, &u);
  std::vector<AnnotatedUtterance> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ArgumentError("unknown utterance id " + id);
    out.push_back(*it->second);
  }
  return out;
}

void write_snapshot(std::ostream& out, std::span<const AnnotatedUtterance> utterances) {
  for (const auto& u : utterances) {
    ordered_json rec;
    rec["id"] = u.id;
    rec["text"] = u.text;
    rec["intents"] = u.gold_intents;
    auto slots = ordered_json::array();
    for (const auto& sv : u.gold_slots) {
      ordered_json s;
      s["slot"] = sv.slot;
      s["value"] = sv.value;
      s["span"] = sv.span ? ordered_json::array({sv.span->start, sv.span->end}) : ordered_json(nullptr);
      slots.push_back(std::move(s));
    }
    rec["slots"] = std::move(slots);
    out << rec.dump() << '\n';
  }
}

std::string corpus_fingerprint(std::span<const AnnotatedUtterance> utterances) {
  std::ostringstream ss;
  write_snapshot(ss, utterances);
  return sha256_hex(ss.str());
}

}  // namespace nluqa
