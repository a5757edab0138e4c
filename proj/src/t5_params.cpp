#include "nluqa/t5_params.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"

namespace nluqa {

T5Architecture T5Architecture::from_json(const nlohmann::json& j) {
  T5Architecture a;
  a.vocab_size = j.value("vocab_size", a.vocab_size);
  a.d_model = j.value("d_model", a.d_model);
  a.d_kv = j.value("d_kv", a.d_model / std::max<std::uint64_t>(1, j.value("num_heads", a.num_heads)));
  a.d_ff = j.value("d_ff", a.d_ff);
  a.num_heads = j.value("num_heads", a.num_heads);
  a.num_layers = j.value("num_layers", a.num_layers);
  a.num_decoder_layers = j.value("num_decoder_layers", a.num_layers);
  a.relative_attention_num_buckets = j.value("relative_attention_num_buckets", a.relative_attention_num_buckets);
  const std::string proj = j.value("feed_forward_proj", std::string("relu"));
  a.gated_ffn = proj.rfind("gated-", 0) == 0;
  // The library default ties the output projection to the embeddings.
  a.tie_word_embeddings = j.value("tie_word_embeddings", true);
  if (a.d_model == 0 || a.num_heads == 0 || a.vocab_size == 0) {
    throw ConfigError("architecture needs positive d_model, num_heads and vocab_size");
  }
  return a;
}

T5Architecture T5Architecture::load(const std::filesystem::path& config_json) {
  std::ifstream in(config_json);
  if (!in) throw ConfigError("cannot open architecture " + config_json.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed architecture " + config_json.string() + ": " + e.what());
  }
  return from_json(j);
}

std::uint64_t adapter_parameters(const T5Architecture& a, const AdapterConfig& cfg) {
  if (cfg.reduction_factor < 1) throw ArgumentError("reduction_factor must be >= 1");
  const std::uint64_t b = std::max<std::uint64_t>(1, a.d_model / static_cast<std::uint64_t>(cfg.reduction_factor));
  const std::uint64_t per_layer = a.d_model * b + b + b * a.d_model + a.d_model;
  return per_layer * (a.num_layers + a.num_decoder_layers);
}

ParameterCount count_parameters(const T5Architecture& a, const std::optional<AdapterConfig>& adapter) {
  const std::uint64_t d = a.d_model;
  const std::uint64_t inner = a.num_heads * a.d_kv;
  const std::uint64_t attention = 4 * d * inner;
  const std::uint64_t ffn = (a.gated_ffn ? 3 : 2) * d * a.d_ff;
  const std::uint64_t bias_table = a.relative_attention_num_buckets * a.num_heads;

  const std::uint64_t encoder_layer = attention + ffn + 2 * d;
  const std::uint64_t decoder_layer = 2 * attention + ffn + 3 * d;

  ParameterCount c;
  c.total = a.vocab_size * d                      // shared embeddings
            + a.num_layers * encoder_layer + bias_table + d
            + a.num_decoder_layers * decoder_layer + bias_table + d;
  if (!a.tie_word_embeddings) c.total += a.vocab_size * d;
  c.trainable = c.total;
  if (adapter) {
    c.trainable = adapter_parameters(a, *adapter);
    c.total += c.trainable;
  }
  return c;
}

}  // namespace nluqa
