#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "nluqa/backend.hpp"

namespace nluqa {

// Encoder-decoder transformer shape, read from a model config.json.
struct T5Architecture {
  std::uint64_t vocab_size = 32128;
  std::uint64_t d_model = 768;
  std::uint64_t d_kv = 64;
  std::uint64_t d_ff = 2048;
  std::uint64_t num_heads = 12;
  std::uint64_t num_layers = 12;
  std::uint64_t num_decoder_layers = 12;
  std::uint64_t relative_attention_num_buckets = 32;
  bool gated_ffn = true;  // "gated-gelu" vs "relu"
  bool tie_word_embeddings = false;

  static T5Architecture from_json(const nlohmann::json& j);
  static T5Architecture load(const std::filesystem::path& config_json);
};

struct ParameterCount {
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;
};

// Sequential bottleneck adapter after the feed-forward block of every
// encoder and decoder layer, width d_model / reduction_factor.
std::uint64_t adapter_parameters(const T5Architecture& a, const AdapterConfig& cfg);

// With an adapter only the adapter weights are trainable.
ParameterCount count_parameters(const T5Architecture& a,
                                const std::optional<AdapterConfig>& adapter = std::nullopt);

}  // namespace nluqa
