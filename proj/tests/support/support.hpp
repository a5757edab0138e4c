#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nluqa/corpus.hpp"
#include "nluqa/rng.hpp"

namespace nluqa::testing {

std::filesystem::path source_dir();
std::filesystem::path fixture(const std::string& rel);

// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Writes a CLINC-layout corpus with `domains` domains of 15 intents each,
// `per_intent` utterances per intent in "train", a few out-of-scope
// records, and a descriptions file.
void write_synthetic_clinc(const std::filesystem::path& dir, int domains = 3, int per_intent = 4);

// Random utterances over a small ontology, for property tests.
DomainOntology random_ontology(Rng& rng, int intents, int slots);
std::vector<AnnotatedUtterance> random_corpus(Rng& rng, const DomainOntology& o, int n);

// True when python3 can import torch and transformers.
bool torch_available();

}  // namespace nluqa::testing
