#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nluqa/instruction.hpp"

namespace nluqa {

struct AdapterConfig {
  int reduction_factor = 16;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;
  std::optional<AdapterConfig> adapter;
  int max_input_length = 512;
  int max_target_length = 32;

  static constexpr double kFullFineTuneRate = 5e-5;
  static constexpr double kAdapterRate = 5e-4;

  // Full fine-tuning defaults, or adapter defaults (reduction 16, lr 5e-4).
  static TrainConfig defaults(bool adapters = false);

  // Throws ArgumentError when an invariant is violated.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; an adapter block without an explicit
// learning rate selects the adapter learning rate.
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class BackendKind { Seq2SeqCheckpoint, GoldOracle };

// Targets per rendered input, in compile order. Repeated inputs are answered
// in the order their instances were registered.
struct GoldTable {
  std::unordered_map<std::string, std::vector<std::string>> answers;
};

// Immutable model reference. Training never mutates a handle; it returns a
// new one whose state points at the freshly written parameters.
struct ModelHandle {
  BackendKind kind = BackendKind::Seq2SeqCheckpoint;
  std::string checkpoint_id;
  // Directory of trained parameters; empty means the untuned checkpoint.
  std::string state;
  std::shared_ptr<const GoldTable> oracle;

  std::string describe() const;
};

ModelHandle make_gold_oracle(std::span<const InstructionInstance> instances);
ModelHandle make_checkpoint_handle(std::string checkpoint_id);

struct TrainManifest {
  TrainConfig config;
  std::string checkpoint_id;
  std::string base_state;
  std::string data_fingerprint;
  std::size_t examples = 0;
  std::size_t truncated_inputs = 0;
  std::size_t truncated_targets = 0;
  std::uint64_t trainable_parameters = 0;
  std::uint64_t total_parameters = 0;
  double final_loss = 0.0;
  std::vector<std::string> warnings;
};

nlohmann::json to_json(const TrainManifest& m);

struct TrainResult {
  ModelHandle model;
  TrainManifest manifest;
};

struct GenerateOptions {
  int max_new_tokens = 16;
  int max_input_length = 512;
  int batch_size = 32;
  // Per-input offset of the question; text before it may be truncated.
  std::vector<std::size_t> question_starts;
};

// Greedy decoding budget per task kind: 16 for ID, 32 for VE, 128 for MC.
int decode_budget(TaskKind kind);

std::string data_fingerprint(std::span<const InstructionInstance> data);

class Seq2SeqBackend {
 public:
  virtual ~Seq2SeqBackend() = default;

  // Preconditions: data non-empty, handle trainable, config valid. The
  // manifest is written to out_dir/train_manifest.json.
  TrainResult train(const ModelHandle& base, std::span<const InstructionInstance> data,
                    const TrainConfig& cfg, const std::filesystem::path& out_dir);

  // One output per input, order preserved.
  std::vector<std::string> generate(const ModelHandle& m, std::span<const std::string> inputs,
                                    const GenerateOptions& opts = {});

  // Generates for compiled instances with the task's decode budget and
  // truncation offsets.
  std::vector<std::string> generate(const ModelHandle& m,
                                    std::span<const InstructionInstance> instances,
                                    int max_input_length = 512);

 protected:
  virtual TrainResult do_train(const ModelHandle& base, std::span<const InstructionInstance> data,
                               const TrainConfig& cfg, const std::filesystem::path& out_dir) = 0;
  virtual std::vector<std::string> do_generate(const ModelHandle& m,
                                               std::span<const std::string> inputs,
                                               const GenerateOptions& opts) = 0;
};

// Answers from gold labels; the test double for every pipeline.
class GoldOracleBackend final : public Seq2SeqBackend {
 protected:
  TrainResult do_train(const ModelHandle&, std::span<const InstructionInstance>, const TrainConfig&,
                       const std::filesystem::path&) override;
  std::vector<std::string> do_generate(const ModelHandle& m, std::span<const std::string> inputs,
                                       const GenerateOptions& opts) override;
};

}  // namespace nluqa
