#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "nluqa/corpus.hpp"

namespace nluqa {

// Intent classifier over fixed sentence embeddings: one tanh hidden layer,
// one sigmoid output per intent, binary cross-entropy, Adam.
struct ClseConfig {
  int hidden_size = 512;
  double threshold = 0.3;
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ClseConfig& cfg);
ClseConfig clse_config_from_json(const nlohmann::json& j);

class ClseClassifier {
 public:
  ClseClassifier() = default;

  const std::vector<std::string>& intents() const { return intents_; }
  Eigen::Index input_dimension() const { return w1_.cols(); }
  Eigen::Index output_dimension() const { return w2_.rows(); }
  double threshold() const { return threshold_; }

  // Sigmoid outputs in ontology intent order.
  Eigen::VectorXd probabilities(const Eigen::VectorXd& embedding) const;
  // Classes whose output is strictly above theta.
  std::set<std::string> predict(const Eigen::VectorXd& embedding, double theta) const;
  std::set<std::string> predict(const Eigen::VectorXd& embedding) const { return predict(embedding, threshold_); }

  nlohmann::json to_json() const;
  static ClseClassifier from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static ClseClassifier load(const std::filesystem::path& file);

 private:
  friend ClseClassifier train_clse(std::span<const Eigen::VectorXd>, std::span<const std::set<std::string>>,
                                   const DomainOntology&, const ClseConfig&);

  std::vector<std::string> intents_;
  Eigen::MatrixXd w1_;  // hidden x input
  Eigen::VectorXd b1_;
  Eigen::MatrixXd w2_;  // intents x hidden
  Eigen::VectorXd b2_;
  double threshold_ = 0.3;
  double final_loss_ = 0.0;
};

// Throws ArgumentError on empty input, |embeddings| != |gold|, differing
// dimensions, or a gold intent missing from the ontology.
ClseClassifier train_clse(std::span<const Eigen::VectorXd> embeddings,
                          std::span<const std::set<std::string>> gold, const DomainOntology& o,
                          const ClseConfig& cfg);

}  // namespace nluqa
