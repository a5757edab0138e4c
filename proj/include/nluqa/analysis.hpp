#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nluqa/corpus.hpp"
#include "nluqa/encoder.hpp"

namespace nluqa {

// Mean cosine over every (row of a, row of b) pair. Rows must be unit
// vectors; the mean then equals the dot product of the two row centroids,
// so the full cross-product is exact at O((|a| + |b|) d) cost.
double mean_pairwise_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Domain similarity over utterances. ArgumentError if either list is empty.
double sim_e(std::span<const std::string> utts_a, std::span<const std::string> utts_b,
             SentenceEncoder& encoder);
// Same contract over class prompts (rendered intent questions).
double sim_c(std::span<const std::string> prompts_a, std::span<const std::string> prompts_b,
             SentenceEncoder& encoder);

// Class prompts of an ontology: question_for_intent of each intent.
std::vector<std::string> class_prompts(const DomainOntology& o);

// Sample Pearson correlation. UndefinedCorrelation when lengths differ,
// fewer than two points, or either input is constant.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Rows are source domains, columns target domains; diagonal is in-domain.
struct TransferMatrix {
  std::vector<std::string> domains;
  Eigen::MatrixXd scores;

  // ValidationError unless square over `domains` with entries in [0, 100].
  void validate() const;
  std::size_t index_of(const std::string& domain) const;
  double at(const std::string& source, const std::string& target) const;

  // Header "source,<d1>,...,<dn>", then one row per source.
  static TransferMatrix load_csv(const std::filesystem::path& file);
  void write_csv(std::ostream& out) const;
};

// Symmetric similarity between domain pairs; lookups accept either order.
class PairSimilarity {
 public:
  void set(const std::string& a, const std::string& b, double value);
  bool contains(const std::string& a, const std::string& b) const;
  double at(const std::string& a, const std::string& b) const;

 private:
  std::map<std::pair<std::string, std::string>, double> values_;
};

struct CorrelationRow {
  std::string label;  // e.g. "sim-C desc"
  std::vector<double> rho;  // per target, in matrix domain order
  double mean_signed = 0.0;
  // Mean |rho|, the AVG column of the reference table.
  double mean_abs = 0.0;
};

struct CorrelationReport {
  std::vector<std::string> targets;
  std::vector<CorrelationRow> rows;
};

// For each target, rho between the off-diagonal source scores in its
// column and the corresponding similarities. ArgumentError on a missing
// pair; UndefinedCorrelation propagates from a constant column.
CorrelationRow correlate(const TransferMatrix& tm, const PairSimilarity& sims, std::string label);

CorrelationReport correlation_report(const TransferMatrix& tm, const PairSimilarity& sim_e_values,
                                     const PairSimilarity& sim_c_values, const std::string& template_name);

// Rows: template x similarity kind; columns: targets then AVG.
void write_correlation_table(std::ostream& out, std::span<const CorrelationReport> reports);

// Pairwise sim-E / sim-C over named domains.
PairSimilarity domain_similarities(const std::map<std::string, std::vector<std::string>>& texts,
                                   SentenceEncoder& encoder);

}  // namespace nluqa
