#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace nluqa {

struct IntentClass {
  std::string name;
  // Phrase completing "did the user ...?", e.g. "intend to talk about some booking".
  std::string description;
  // Full question supplied by the ontology; used verbatim when present.
  std::optional<std::string> question;
};

struct SlotClass {
  std::string name;
  // Phrase completing "what is the ... mentioned?", e.g. "number of people".
  std::string description;
  std::optional<std::string> question;
};

struct DomainOntology {
  std::string domain_name;
  std::vector<IntentClass> intents;
  std::vector<SlotClass> slots;

  const IntentClass* find_intent(std::string_view name) const;
  const SlotClass* find_slot(std::string_view name) const;

  // Throws ValidationError on an empty domain name, empty descriptions or
  // duplicate class names.
  void validate() const;
};

// Half-open character range [start, end) into the utterance text.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
};

struct SlotValue {
  std::string slot;
  std::string value;  // verbatim; normalized only when compared
  std::optional<Span> span;
};

struct AnnotatedUtterance {
  std::string id;
  std::string text;
  std::set<std::string> gold_intents;  // empty for out-of-scope utterances
  std::vector<SlotValue> gold_slots;

  // Gold values of one slot in utterance order (by span start when spans
  // exist, annotation order otherwise), normalized.
  std::vector<std::string> values_for(std::string_view slot) const;
};

// Which side of a fold is the single held-out chunk.
enum class FoldRole {
  // Few-shot protocol: train on one chunk, test on all the others. The
  // training portions partition the corpus.
  TrainOnOne,
  // Classic cross-validation: the test portions partition the corpus.
  TestOnOne,
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// Throws ValidationError naming the utterance id if any gold label is not
// in the ontology or a span does not match its value.
void validate_utterance(const AnnotatedUtterance& u, const DomainOntology& o);

struct NluppDomain {
  DomainOntology ontology;
  std::vector<AnnotatedUtterance> utterances;
  // Published fold setups keyed by fold count (20 and 10 for the full release).
  std::map<int, std::vector<FoldSplit>> folds;
};

// Layout:
//   <path>/ontology.json                 {"intents": {...}, "slots": {...}}
//   <path>/<domain>/fold<i>.json         one file per published fold
// Classes whose "domain" is "general" or <domain> form the ontology.
NluppDomain load_nluplusplus(const std::filesystem::path& path, const std::string& domain_name);

struct ClincOptions {
  // Intent descriptions; defaults to <path>/descriptions.json.
  std::optional<std::filesystem::path> descriptions;
  // Release partitions whose in-scope utterances form each domain's corpus.
  std::vector<std::string> splits{"train"};
};

struct ClincDomain {
  DomainOntology ontology;
  std::vector<AnnotatedUtterance> utterances;
  // out_of_scope utterances from the same partitions, gold set empty. They
  // never enter training folds; runners add them to evaluation on request.
  std::vector<AnnotatedUtterance> out_of_scope;
};

inline constexpr std::size_t kClincIntentsPerDomain = 15;

// Layout: <path>/data_full.json, <path>/domains.json, descriptions file.
std::map<std::string, ClincDomain> load_clinc(const std::filesystem::path& path,
                                              const ClincOptions& options = {});

// Stratified k-fold split: utterances are grouped by their (sorted) intent
// set, each group is shuffled with the seed, and members are dealt
// round-robin to folds continuing where the previous group stopped.
std::vector<FoldSplit> make_folds(std::span<const AnnotatedUtterance> utterances, int k,
                                  std::uint64_t seed, FoldRole role = FoldRole::TrainOnOne);

struct SampleSplit {
  std::vector<AnnotatedUtterance> train;
  std::vector<AnnotatedUtterance> test;
};

inline constexpr std::size_t kSampleEfficiencyTestSize = 1000;

// The test set is drawn first from a stream that depends only on the seed,
// so it is identical for every n_train under one seed.
SampleSplit sample_efficiency_split(std::span<const AnnotatedUtterance> utterances,
                                    std::size_t n_train, std::uint64_t seed,
                                    std::size_t test_size = kSampleEfficiencyTestSize);

// Utterances in the order of `ids`; throws ArgumentError on an unknown id.
std::vector<AnnotatedUtterance> select(std::span<const AnnotatedUtterance> utterances,
                                       std::span<const std::string> ids);

// One JSON object per line: {"id","text","intents","slots"}.
void write_snapshot(std::ostream& out, std::span<const AnnotatedUtterance> utterances);
std::string corpus_fingerprint(std::span<const AnnotatedUtterance> utterances);

}  // namespace nluqa
