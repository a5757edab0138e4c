#include "nluqa/analysis.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nluqa/errors.hpp"
#include "nluqa/instruction.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

double mean_pairwise_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ArgumentError("similarity needs non-empty lists");
  if (a.cols() != b.cols()) throw ArgumentError("embedding dimensions differ");
  const Eigen::RowVectorXd ca = a.colwise().mean();
  const Eigen::RowVectorXd cb = b.colwise().mean();
  return ca.dot(cb);
}

double sim_e(std::span<const std::string> a, std::span<const std::string> b, SentenceEncoder& encoder) {
  if (a.empty() || b.empty()) throw ArgumentError("sim_e: empty utterance list");
  return mean_pairwise_cosine(encoder.encode(a), encoder.encode(b));
}

double sim_c(std::span<const std::string> a, std::span<const std::string> b, SentenceEncoder& encoder) {
  if (a.empty() || b.empty()) throw ArgumentError("sim_c: empty prompt list");
  return mean_pairwise_cosine(encoder.encode(a), encoder.encode(b));
}

std::vector<std::string> class_prompts(const DomainOntology& o) {
  std::vector<std::string> out;
  out.reserve(o.intents.size());
  for (const auto& c : o.intents) out.push_back(question_for_intent(c));
  return out;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw UndefinedCorrelation("pearson: lengths differ");
  if (xs.size() < 2) throw UndefinedCorrelation("pearson: fewer than two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: constant input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

void TransferMatrix::validate() const {
  const auto n = static_cast<Eigen::Index>(domains.size());
  if (n == 0 || scores.rows() != n || scores.cols() != n) {
    throw ValidationError("transfer matrix must be square over its domain list");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = scores(i, j);
      if (!(v >= 0.0 && v <= 100.0)) {
        throw ValidationError("transfer score " + domains[static_cast<std::size_t>(i)] + "->" +
                              domains[static_cast<std::size_t>(j)] + " outside [0, 100]");
      }
    }
  }
}

std::size_t TransferMatrix::index_of(const std::string& domain) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] == domain) return i;
  }
  throw ArgumentError("domain '" + domain + "' not in transfer matrix");
}

double TransferMatrix::at(const std::string& source, const std::string& target) const {
  return scores(static_cast<Eigen::Index>(index_of(source)), static_cast<Eigen::Index>(index_of(target)));
}

TransferMatrix TransferMatrix::load_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw LoadError(file.string() + ": empty file");
  auto header = split(trim(line), ",");
  TransferMatrix tm;
  tm.domains.assign(header.begin() + 1, header.end());
  const auto n = static_cast<Eigen::Index>(tm.domains.size());
  tm.scores = Eigen::MatrixXd::Constant(n, n, std::nan(""));
  std::vector<bool> seen(tm.domains.size(), false);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ",");
    if (static_cast<Eigen::Index>(cells.size()) != n + 1) throw LoadError(file.string() + ": ragged row");
    std::size_t row = 0;
    try {
      row = tm.index_of(std::string(trim(cells[0])));
    } catch (const ArgumentError&) {
      throw LoadError(file.string() + ": row domain '" + cells[0] + "' not in header");
    }
    seen[row] = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      try {
        tm.scores(static_cast<Eigen::Index>(row), j) = std::stod(cells[static_cast<std::size_t>(j) + 1]);
      } catch (const std::exception&) {
        throw LoadError(file.string() + ": bad number '" + cells[static_cast<std::size_t>(j) + 1] + "'");
      }
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw LoadError(file.string() + ": missing row for " + tm.domains[i]);
  }
  tm.validate();
  return tm;
}

void TransferMatrix::write_csv(std::ostream& out) const {
  out << "source";
  for (const auto& d : domains) out << ',' << d;
  out << '\n';
  for (std::size_t i = 0; i < domains.size(); ++i) {
    out << domains[i];
    for (std::size_t j = 0; j < domains.size(); ++j) {
      out << ',' << scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    out << '\n';
  }
}

void PairSimilarity::set(const std::string& a, const std::string& b, double value) {
  values_[{std::min(a, b), std::max(a, b)}] = value;
}

bool PairSimilarity::contains(const std::string& a, const std::string& b) const {
  return values_.count({std::min(a, b), std::max(a, b)}) > 0;
}

double PairSimilarity::at(const std::string& a, const std::string& b) const {
  auto it = values_.find({std::min(a, b), std::max(a, b)});
  if (it == values_.end()) throw ArgumentError("no similarity for pair " + a + " / " + b);
  return it->second;
}

CorrelationRow correlate(const TransferMatrix& tm, const PairSimilarity& sims, std::string label) {
  tm.validate();
  CorrelationRow row;
  row.label = std::move(label);
  for (std::size_t t = 0; t < tm.domains.size(); ++t) {
    std::vector<double> perf, sim;
    for (std::size_t s = 0; s < tm.domains.size(); ++s) {
      if (s == t) continue;
      perf.push_back(tm.scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)));
      sim.push_back(sims.at(tm.domains[s], tm.domains[t]));
    }
    row.rho.push_back(pearson(sim, perf));
  }
  for (double r : row.rho) {
    row.mean_signed += r;
    row.mean_abs += std::abs(r);
  }
  row.mean_signed /= static_cast<double>(row.rho.size());
  row.mean_abs /= static_cast<double>(row.rho.size());
  return row;
}

CorrelationReport correlation_report(const TransferMatrix& tm, const PairSimilarity& e,
                                     const PairSimilarity& c, const std::string& template_name) {
  CorrelationReport r;
  r.targets = tm.domains;
  r.rows.push_back(correlate(tm, e, "sim-E," + template_name));
  r.rows.push_back(correlate(tm, c, "sim-C," + template_name));
  return r;
}

void write_correlation_table(std::ostream& out, std::span<const CorrelationReport> reports) {
  if (reports.empty()) return;
  out << "similarity,template";
  for (const auto& t : reports.front().targets) out << ',' << t;
  out << ",avg\n";
  for (const auto& rep : reports) {
    for (const auto& row : rep.rows) {
      out << row.label;
      for (double r : row.rho) out << ',' << std::fixed << std::setprecision(4) << r;
      out << ',' << std::fixed << std::setprecision(4) << row.mean_abs << '\n';
    }
  }
  out.unsetf(std::ios::fixed);
}

PairSimilarity domain_similarities(const std::map<std::string, std::vector<std::string>>& texts,
                                   SentenceEncoder& encoder) {
  std::map<std::string, Eigen::RowVectorXd> centroids;
  for (const auto& [domain, list] : texts) {
    if (list.empty()) throw ArgumentError("domain '" + domain + "' has no texts");
    centroids[domain] = encoder.encode(list).colwise().mean();
  }
  PairSimilarity out;
  for (auto a = centroids.begin(); a != centroids.end(); ++a) {
    for (auto b = a; b != centroids.end(); ++b) out.set(a->first, b->first, a->second.dot(b->second));
  }
  return out;
}

}  // namespace nluqa
