#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nluqa/analysis.hpp"
#include "nluqa/backend.hpp"
#include "nluqa/clse.hpp"
#include "nluqa/corpus.hpp"
#include "nluqa/scoring.hpp"
#include "nluqa/worker.hpp"

namespace nluqa {

enum class Protocol {
  ZeroShot,
  InDomain,
  CrossDomain,
  CrossTask,
  MultiTask,
  SampleEfficiency,
  McAblation,
  ClseBaseline,
};

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view s);

enum class Dataset { NluPlusPlus, Clinc };

// ID as one yes/no question per intent, or one multiple-choice prompt.
enum class Formulation { Binary, MultipleChoice };

struct RunSpec {
  Protocol protocol = Protocol::InDomain;
  Dataset dataset = Dataset::NluPlusPlus;
  std::filesystem::path data_path;
  std::optional<std::filesystem::path> descriptions;  // CLINC only
  bool include_out_of_scope = false;

  std::string domain;  // single-domain protocols
  std::string source_domain;
  std::string target_domain;
  std::vector<std::string> domains;  // cross-domain grid mode
  bool grid = false;

  int folds = 20;
  std::uint64_t fold_seed = 0;
  FoldRole fold_role = FoldRole::TrainOnOne;
  std::vector<int> fold_ids;  // empty = all

  std::string template_name = "desc";
  // "ID", "VE" or "both"; for cross-task this is the training task.
  std::string task = "ID";
  std::optional<Task> eval_task;
  Formulation formulation = Formulation::Binary;

  TrainConfig train;
  std::string backend = "gold-oracle";  // or "worker"
  std::string checkpoint;
  int max_input_length = 512;

  std::string encoder;  // CL-SE
  ClseConfig clse;

  std::vector<std::size_t> sizes;  // sample efficiency
  std::vector<std::uint64_t> seeds;
  std::size_t test_size = kSampleEfficiencyTestSize;

  int workers = 1;
  std::filesystem::path output_dir;
  nlohmann::json reference = nlohmann::json::object();

  // Throws ArgumentError on an inconsistent spec.
  void validate() const;
  std::vector<Task> tasks() const;
};

nlohmann::json to_json(const RunSpec& spec);
// Missing data_path falls back to NLUQA_NLUPP_PATH / NLUQA_CLINC_PATH.
RunSpec run_spec_from_json(const nlohmann::json& j);
RunSpec load_run_spec(const std::filesystem::path& file);

struct FoldResult {
  int fold_id = 0;
  std::string source;  // domain trained on ("" when untrained)
  std::string target;  // domain evaluated
  std::map<Task, EvalReport> reports;
  nlohmann::json to_json() const;
};

struct SampleRow {
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  double micro_f1 = 0.0;
};

struct RunResult {
  bool complete = false;
  bool skipped = false;  // identical completed run already on disk
  std::string error;
  std::vector<FoldResult> folds;
  // Aggregate per (target, task); single-domain runs have one target.
  std::map<std::string, std::map<Task, EvalReport>> aggregates;
  // Full-corpus score without training (zero-shot only).
  std::map<Task, EvalReport> full_corpus;
  std::optional<TransferMatrix> transfer;
  std::vector<SampleRow> sample_rows;

  // Score of the single (target, task) aggregate; throws if ambiguous.
  const EvalReport& report(Task task) const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  bool force = false;
  // Injected backend; defaults to the one named in the spec.
  std::shared_ptr<Seq2SeqBackend> backend;
  std::shared_ptr<SentenceEncoder> encoder;
  std::optional<ModelRegistry> registry;
};

// Validates the spec, writes <output_dir>/manifest.json before any
// training, runs every fold, and writes results.json and results.csv
// atomically. A failing fold stops scheduling and the partial results are
// written with status "partial".
RunResult run(const RunSpec& spec, const RunOptions& options = {});

// Per-protocol entry points; each checks the protocol then calls run().
RunResult run_zero_shot(const RunSpec& spec, const RunOptions& options = {});
RunResult run_in_domain(const RunSpec& spec, const RunOptions& options = {});
RunResult run_cross_domain(const RunSpec& spec, const RunOptions& options = {});
RunResult run_cross_task(const RunSpec& spec, const RunOptions& options = {});
RunResult run_sample_efficiency(const RunSpec& spec, const RunOptions& options = {});

// Loads the domains a spec refers to (exposed for tools and tests).
struct LoadedDomain {
  DomainOntology ontology;
  std::vector<AnnotatedUtterance> utterances;
  std::vector<AnnotatedUtterance> out_of_scope;
  std::vector<FoldSplit> folds;
};

std::map<std::string, LoadedDomain> load_domains(const RunSpec& spec);

// Write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& file, const std::string& content);

}  // namespace nluqa
