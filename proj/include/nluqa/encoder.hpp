#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "nluqa/worker.hpp"

namespace nluqa {

// Rows of the returned matrix are L2-normalized, one per input text.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual const std::string& id() const = 0;
  virtual Eigen::MatrixXd encode(std::span<const std::string> texts) = 0;
};

// Dependency-free encoder: signed feature hashing of lowercased word
// unigrams, bigrams and character trigrams with log term frequency.
// Named "hash-ngram-<dim>". Lexical only; used for tests and offline runs.
class HashingEncoder final : public SentenceEncoder {
 public:
  explicit HashingEncoder(int dimension = 512);
  const std::string& id() const override { return id_; }
  Eigen::MatrixXd encode(std::span<const std::string> texts) override;
  Eigen::VectorXd encode_one(std::string_view text) const;

 private:
  int dim_;
  std::string id_;
};

// sentence-transformers model served by the worker process.
class WorkerEncoder final : public SentenceEncoder {
 public:
  WorkerEncoder(std::string id, std::string source, const ModelRegistry& registry);
  const std::string& id() const override { return id_; }
  Eigen::MatrixXd encode(std::span<const std::string> texts) override;

 private:
  std::string id_;
  std::string source_;
  WorkerProcess process_;
};

// Memoizes rows keyed by (encoder id, sha256 of the text).
class CachingEncoder final : public SentenceEncoder {
 public:
  explicit CachingEncoder(std::unique_ptr<SentenceEncoder> inner);
  const std::string& id() const override { return inner_->id(); }
  Eigen::MatrixXd encode(std::span<const std::string> texts) override;
  std::size_t cache_size() const;

 private:
  std::unique_ptr<SentenceEncoder> inner_;
  std::unordered_map<std::string, Eigen::VectorXd> cache_;
  mutable std::mutex mu_;
};

// "hash-ngram-<dim>" or a registry encoder; ConfigError otherwise.
std::unique_ptr<SentenceEncoder> make_encoder(const std::string& encoder_id,
                                              const ModelRegistry& registry);

// Throws ArgumentError on an empty list.
Eigen::MatrixXd embed(std::span<const std::string> texts, const std::string& encoder_id,
                      const ModelRegistry& registry);

}  // namespace nluqa
