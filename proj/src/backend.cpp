#include "nluqa/backend.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"
#include "nluqa/fingerprint.hpp"

namespace nluqa {

namespace fs = std::filesystem;

TrainConfig TrainConfig::defaults(bool adapters) {
  TrainConfig cfg;
  if (adapters) {
    cfg.adapter = AdapterConfig{};
    cfg.learning_rate = kAdapterRate;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (adapter && adapter->reduction_factor < 1) throw ArgumentError("reduction_factor must be >= 1");
  if (max_input_length < 1 || max_target_length < 1) throw ArgumentError("max lengths must be >= 1");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["seed"] = cfg.seed;
  j["adapter"] = cfg.adapter ? nlohmann::json{{"reduction_factor", cfg.adapter->reduction_factor}}
                             : nlohmann::json(nullptr);
  j["max_input_length"] = cfg.max_input_length;
  j["max_target_length"] = cfg.max_target_length;
  j["optimizer"] = "adam";
  j["scheduler"] = "constant";
  j["weight_decay"] = 0.0;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const bool adapters = j.contains("adapter") && !j["adapter"].is_null() && j["adapter"] != false;
  TrainConfig cfg = TrainConfig::defaults(adapters);
  if (adapters && j["adapter"].is_object()) {
    cfg.adapter->reduction_factor = j["adapter"].value("reduction_factor", 16);
  }
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.max_input_length = j.value("max_input_length", cfg.max_input_length);
  cfg.max_target_length = j.value("max_target_length", cfg.max_target_length);
  cfg.validate();
  return cfg;
}

std::string ModelHandle::describe() const {
  if (kind == BackendKind::GoldOracle) return "gold-oracle";
  return state.empty() ? checkpoint_id : checkpoint_id + "@" + state;
}

ModelHandle make_gold_oracle(std::span<const InstructionInstance> instances) {
  auto table = std::make_shared<GoldTable>();
  for (const auto& inst : instances) table->answers[inst.input_text].push_back(inst.target_text);
  ModelHandle h;
  h.kind = BackendKind::GoldOracle;
  h.checkpoint_id = "gold-oracle";
  h.oracle = std::move(table);
  return h;
}

ModelHandle make_checkpoint_handle(std::string checkpoint_id) {
  ModelHandle h;
  h.kind = BackendKind::Seq2SeqCheckpoint;
  h.checkpoint_id = std::move(checkpoint_id);
  return h;
}

nlohmann::json to_json(const TrainManifest& m) {
  nlohmann::json j;
  j["config"] = to_json(m.config);
  j["checkpoint_id"] = m.checkpoint_id;
  j["base_state"] = m.base_state;
  j["data_fingerprint"] = m.data_fingerprint;
  j["examples"] = m.examples;
  j["truncated_inputs"] = m.truncated_inputs;
  j["truncated_targets"] = m.truncated_targets;
  j["trainable_parameters"] = m.trainable_parameters;
  j["total_parameters"] = m.total_parameters;
  j["final_loss"] = m.final_loss;
  j["warnings"] = m.warnings;
  return j;
}

int decode_budget(TaskKind kind) {
  switch (kind) {
    case TaskKind::IdBinary: return 16;
    case TaskKind::VeExtractive: return 32;
    case TaskKind::McId: return 128;
  }
  return 32;
}

std::string data_fingerprint(std::span<const InstructionInstance> data) {
  std::ostringstream ss;
  write_instances(ss, data);
  return sha256_hex(ss.str());
}

TrainResult Seq2SeqBackend::train(const ModelHandle& base, std::span<const InstructionInstance> data,
                                  const TrainConfig& cfg, const fs::path& out_dir) {
  if (base.kind == BackendKind::GoldOracle) throw ArgumentError("gold-oracle handles are not trainable");
  if (data.empty()) throw ArgumentError("train: no training instances");
  cfg.validate();
  fs::create_directories(out_dir);
  TrainResult result = do_train(base, data, cfg, out_dir);
  std::ofstream(out_dir / "train_manifest.json") << to_json(result.manifest).dump(2) << '\n';
  return result;
}

std::vector<std::string> Seq2SeqBackend::generate(const ModelHandle& m,
                                                  std::span<const std::string> inputs,
                                                  const GenerateOptions& opts) {
  if (inputs.empty()) throw ArgumentError("generate: no inputs");
  if (!opts.question_starts.empty() && opts.question_starts.size() != inputs.size()) {
    throw ArgumentError("generate: question_starts must match inputs");
  }
  auto out = do_generate(m, inputs, opts);
  if (out.size() != inputs.size()) {
    throw GenerationError(out.size(), "backend returned " + std::to_string(out.size()) +
                                          " outputs for " + std::to_string(inputs.size()) + " inputs");
  }
  return out;
}

std::vector<std::string> Seq2SeqBackend::generate(const ModelHandle& m,
                                                  std::span<const InstructionInstance> instances,
                                                  int max_input_length) {
  if (instances.empty()) return {};
  GenerateOptions opts;
  opts.max_input_length = max_input_length;
  opts.max_new_tokens = 0;
  std::vector<std::string> inputs;
  inputs.reserve(instances.size());
  for (const auto& inst : instances) {
    inputs.push_back(inst.input_text);
    opts.question_starts.push_back(inst.question_start);
    opts.max_new_tokens = std::max(opts.max_new_tokens, decode_budget(inst.task_kind));
  }
  return generate(m, inputs, opts);
}

TrainResult GoldOracleBackend::do_train(const ModelHandle&, std::span<const InstructionInstance>,
                                        const TrainConfig&, const fs::path&) {
  throw ArgumentError("gold-oracle handles are not trainable");
}

std::vector<std::string> GoldOracleBackend::do_generate(const ModelHandle& m,
                                                        std::span<const std::string> inputs,
                                                        const GenerateOptions&) {
  if (m.kind != BackendKind::GoldOracle || !m.oracle) {
    throw ConfigError("gold-oracle backend needs a gold-oracle handle");
  }
  std::unordered_map<std::string_view, std::size_t> cursor;
  std::vector<std::string> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto it = m.oracle->answers.find(inputs[i]);
    if (it == m.oracle->answers.end()) throw GenerationError(i, "input not in the gold table");
    std::size_t& c = cursor[it->first];
    out.push_back(it->second[std::min(c, it->second.size() - 1)]);
    ++c;
  }
  return out;
}

}  // namespace nluqa
