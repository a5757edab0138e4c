#include "support.hpp"

#include <cstdlib>
#include <fstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

namespace nluqa::testing {

namespace fs = std::filesystem;

fs::path source_dir() { return fs::path(NLUQA_SOURCE_DIR); }

fs::path fixture(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = fs::path(NLUQA_TEST_TMP) / (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_synthetic_clinc(const fs::path& dir, int domains, int per_intent) {
  static const char* kVerbs[] = {"check", "update", "find", "order", "report", "set"};
  static const char* kNouns[] = {"balance", "route", "recipe", "alarm", "flight", "bill", "timer", "pto",
                                 "tire",    "card",  "song",   "meal",  "hotel",  "rate", "reminder"};
  fs::create_directories(dir);
  nlohmann::json data = {{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()},
                         {"oos_train", nlohmann::json::array()}};
  nlohmann::json doms = nlohmann::json::object();
  nlohmann::json desc = nlohmann::json::object();
  for (int d = 0; d < domains; ++d) {
    const std::string dom = "domain" + std::to_string(d);
    for (int i = 0; i < 15; ++i) {
      const std::string intent = dom + "_" + kNouns[i];
      doms[dom].push_back(intent);
      desc[intent] = "intend to " + std::string(kVerbs[d % 6]) + " a " + kNouns[i] + " in area " + std::to_string(d);
      for (int k = 0; k < per_intent; ++k) {
        data["train"].push_back({"please " + std::string(kVerbs[(d + k) % 6]) + " my " + kNouns[i] + " number " +
                                     std::to_string(k) + " in area " + std::to_string(d),
                                 intent});
      }
      data["val"].push_back({"val " + std::string(kNouns[i]), intent});
    }
  }
  data["train"].push_back({"what is the meaning of life", "oos"});
  data["oos_train"].push_back({"tell me about quantum gravity", "oos"});
  std::ofstream(dir / "data_full.json") << data.dump();
  std::ofstream(dir / "domains.json") << doms.dump();
  std::ofstream(dir / "descriptions.json") << desc.dump();
}

DomainOntology random_ontology(Rng& rng, int intents, int slots) {
  DomainOntology o;
  o.domain_name = "random";
  for (int i = 0; i < intents; ++i) {
    o.intents.push_back({"intent" + std::to_string(i), "intend to do thing " + std::to_string(i), std::nullopt});
  }
  for (int i = 0; i < slots; ++i) {
    o.slots.push_back({"slot" + std::to_string(i), "value number " + std::to_string(i), std::nullopt});
  }
  (void)rng;
  return o;
}

std::vector<AnnotatedUtterance> random_corpus(Rng& rng, const DomainOntology& o, int n) {
  static const char* kWords[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"};
  std::vector<AnnotatedUtterance> out;
  for (int i = 0; i < n; ++i) {
    AnnotatedUtterance u;
    u.id = "r/" + std::to_string(i);
    const int words = 2 + static_cast<int>(rng.index(6));
    for (int w = 0; w < words; ++w) {
      if (w) u.text += ' ';
      u.text += kWords[rng.index(8)];
    }
    for (const auto& c : o.intents) {
      if (rng.real() < 0.3) u.gold_intents.insert(c.name);
    }
    for (const auto& s : o.slots) {
      const int values = rng.real() < 0.5 ? 0 : 1 + static_cast<int>(rng.index(2));
      for (int v = 0; v < values; ++v) {
        const std::string value = "v" + std::to_string(rng.index(5)) + "x" + std::to_string(v);
        const std::size_t start = u.text.size() + 1;
        u.text += " " + value;
        u.gold_slots.push_back({s.name, value, Span{start, start + value.size()}});
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

bool torch_available() {
  static const bool ok = std::system("python3 -c 'import torch, transformers' >/dev/null 2>&1") == 0;
  return ok;
}

}  // namespace nluqa::testing
