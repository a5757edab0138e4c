#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nluqa/backend.hpp"

namespace nluqa {

struct CheckpointEntry {
  std::string source;  // hub id or local directory handed to the worker
  std::optional<std::filesystem::path> architecture;
};

struct EncoderEntry {
  std::string kind;  // "native" or "sentence-transformers"
  std::string source;
  int dimension = 0;
};

// Model and encoder names resolved from a configuration file so that no
// code path hard-codes a checkpoint. Environment overrides:
//   NLUQA_CONFIG       path of the models file
//   NLUQA_MODEL_CACHE  cache root handed to the worker
//   NLUQA_WORKER       worker command line (whitespace separated)
class ModelRegistry {
 public:
  ModelRegistry() = default;

  static ModelRegistry load(const std::filesystem::path& file);
  // NLUQA_CONFIG if set, else <source>/configs/models.json if it exists,
  // else an empty registry (native encoders and random checkpoints only).
  static ModelRegistry from_environment();

  // Known checkpoint, "random-t5:<architecture.json>", or an existing directory.
  std::string resolve_checkpoint(const std::string& id) const;
  std::optional<std::filesystem::path> architecture_of(const std::string& id) const;
  const EncoderEntry& encoder(const std::string& id) const;
  bool has_encoder(const std::string& id) const;

  std::vector<std::string> worker_command() const;
  std::optional<std::filesystem::path> cache_dir() const;

  const std::map<std::string, CheckpointEntry>& checkpoints() const { return checkpoints_; }

 private:
  std::map<std::string, CheckpointEntry> checkpoints_;
  std::map<std::string, EncoderEntry> encoders_;
  std::vector<std::string> worker_command_;
  std::optional<std::filesystem::path> cache_dir_;
};

// Long-lived child process speaking one JSON object per line on
// stdin/stdout. Requests are serialized; the worker's stderr is inherited.
class WorkerProcess {
 public:
  explicit WorkerProcess(std::vector<std::string> command,
                         std::optional<std::filesystem::path> cache_dir = std::nullopt);
  ~WorkerProcess();

  WorkerProcess(const WorkerProcess&) = delete;
  WorkerProcess& operator=(const WorkerProcess&) = delete;

  // Sends a request and returns the response; {"ok": false} responses are
  // raised as std::runtime_error (GenerationError when an index is given).
  nlohmann::json call(const nlohmann::json& request);

 private:
  void start();
  void stop() noexcept;

  std::vector<std::string> command_;
  std::optional<std::filesystem::path> cache_dir_;
  int pid_ = -1;
  int to_child_ = -1;
  std::FILE* from_child_ = nullptr;
  std::mutex mu_;
};

class WorkerBackend final : public Seq2SeqBackend {
 public:
  explicit WorkerBackend(ModelRegistry registry);

  WorkerProcess& process();
  const ModelRegistry& registry() const { return registry_; }

 protected:
  TrainResult do_train(const ModelHandle& base, std::span<const InstructionInstance> data,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir) override;
  std::vector<std::string> do_generate(const ModelHandle& m, std::span<const std::string> inputs,
                                       const GenerateOptions& opts) override;

 private:
  ModelRegistry registry_;
  std::unique_ptr<WorkerProcess> process_;
  std::mutex start_mu_;
};

}  // namespace nluqa
