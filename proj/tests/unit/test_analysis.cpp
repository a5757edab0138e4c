#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "nluqa/analysis.hpp"
#include "nluqa/encoder.hpp"
#include "nluqa/errors.hpp"
#include "nluqa/rng.hpp"
#include "support.hpp"

using namespace nluqa;

namespace {

// Two-pass textbook Pearson in long double.
double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

}  // namespace

TEST(Pearson, MatchesTwoPassOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-5, 5);
      y[i] = 0.5 * x[i] + rng.uniform(-3, 3);
    }
    EXPECT_NEAR(pearson(x, y), oracle_pearson(x, y), 1e-12);
  }
}

TEST(Pearson, PerfectAndAffineInvariant) {
  std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 10}, z{5, 4, 3, 2, 1};
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, z), -1.0, 1e-15);
  std::vector<double> a{0.3, 1.7, -2.0, 4.4}, b{1.0, 0.1, 0.5, 2.2};
  std::vector<double> a2;
  for (double v : a) a2.push_back(3.0 * v - 11.0);
  EXPECT_NEAR(pearson(a, b), pearson(a2, b), 1e-12);
  EXPECT_NEAR(pearson(a, b), pearson(b, a), 1e-15);
}

TEST(Pearson, UndefinedCases) {
  std::vector<double> one{1.0}, c{2, 2, 2}, x{1, 2, 3}, short_{1, 2};
  EXPECT_THROW(pearson(one, one), UndefinedCorrelation);
  EXPECT_THROW(pearson(c, x), UndefinedCorrelation);
  EXPECT_THROW(pearson(x, c), UndefinedCorrelation);
  EXPECT_THROW(pearson(x, short_), UndefinedCorrelation);
}

TEST(Similarity, CentroidIdentityMatchesBruteForce) {
  HashingEncoder enc(128);
  std::vector<std::string> a{"book a room", "cancel booking", "wifi password"};
  std::vector<std::string> b{"card balance", "transfer money", "book a room", "hello"};
  auto ea = enc.encode(a), eb = enc.encode(b);
  double brute = 0;
  for (Eigen::Index i = 0; i < ea.rows(); ++i)
    for (Eigen::Index j = 0; j < eb.rows(); ++j) brute += ea.row(i).dot(eb.row(j));
  brute /= static_cast<double>(ea.rows() * eb.rows());
  EXPECT_NEAR(mean_pairwise_cosine(ea, eb), brute, 1e-12);
  EXPECT_NEAR(sim_e(a, b, enc), brute, 1e-12);
  EXPECT_NEAR(sim_e(a, b, enc), sim_e(b, a, enc), 1e-12);
}

TEST(Similarity, IdenticalSingletonsAreOneAndEmptyIsError) {
  HashingEncoder enc(64);
  std::vector<std::string> s{"same text"}, empty;
  EXPECT_NEAR(sim_c(s, s, enc), 1.0, 1e-12);
  EXPECT_THROW(sim_e(s, empty, enc), ArgumentError);
  EXPECT_THROW(sim_c(empty, s, enc), ArgumentError);
}

TEST(Similarity, ClassPromptsAreIntentQuestions) {
  auto d = load_nluplusplus(nluqa::testing::fixture("nlupp"), "hotels");
  auto p = class_prompts(d.ontology);
  ASSERT_EQ(p.size(), d.ontology.intents.size());
  EXPECT_EQ(p[0], question_for_intent(d.ontology.intents[0]));
}

namespace {

TransferMatrix small_matrix() {
  TransferMatrix tm;
  tm.domains = {"a", "b", "c", "d"};
  tm.scores.resize(4, 4);
  tm.scores << 90, 40, 30, 20,  //
      50, 80, 45, 35,           //
      20, 60, 85, 55,           //
      10, 30, 70, 95;
  return tm;
}

PairSimilarity sims(double ab, double ac, double ad, double bc, double bd, double cd) {
  PairSimilarity s;
  s.set("a", "b", ab);
  s.set("a", "c", ac);
  s.set("a", "d", ad);
  s.set("b", "c", bc);
  s.set("b", "d", bd);
  s.set("c", "d", cd);
  return s;
}

}  // namespace

TEST(Correlate, ColumnwiseOffDiagonalAgainstOracle) {
  auto tm = small_matrix();
  auto s = sims(0.5, 0.2, 0.1, 0.6, 0.3, 0.7);
  auto row = correlate(tm, s, "x");
  ASSERT_EQ(row.rho.size(), 4u);
  // Target a: sources b, c, d.
  EXPECT_NEAR(row.rho[0], oracle_pearson({50, 20, 10}, {0.5, 0.2, 0.1}), 1e-12);
  EXPECT_NEAR(row.rho[2], oracle_pearson({30, 45, 70}, {0.2, 0.6, 0.7}), 1e-12);
  double signed_sum = 0, abs_sum = 0;
  for (double r : row.rho) {
    signed_sum += r;
    abs_sum += std::abs(r);
  }
  EXPECT_NEAR(row.mean_signed, signed_sum / 4, 1e-12);
  EXPECT_NEAR(row.mean_abs, abs_sum / 4, 1e-12);
  EXPECT_TRUE(s.contains("d", "c"));
  EXPECT_DOUBLE_EQ(s.at("d", "c"), 0.7);
}

TEST(Correlate, MissingPairIsArgumentError) {
  auto tm = small_matrix();
  PairSimilarity s;
  s.set("a", "b", 0.1);
  EXPECT_THROW(correlate(tm, s, "x"), ArgumentError);
}

TEST(TransferMatrixIo, CsvRoundTripAndValidation) {
  auto tm = small_matrix();
  nluqa::testing::TempDir tmp("tm");
  {
    std::ofstream out(tmp.path() / "m.csv");
    tm.write_csv(out);
  }
  auto back = TransferMatrix::load_csv(tmp.path() / "m.csv");
  EXPECT_EQ(back.domains, tm.domains);
  EXPECT_TRUE(back.scores.isApprox(tm.scores));
  EXPECT_DOUBLE_EQ(back.at("c", "b"), 60);
  EXPECT_THROW(back.index_of("zz"), ArgumentError);
  back.scores(0, 1) = 140;
  EXPECT_THROW(back.validate(), ValidationError);
}

TEST(ReferenceTables, TransferMatricesLoadAndAreWellFormed) {
  for (const char* name : {"qa-ft", "none", "desc"}) {
    auto tm = TransferMatrix::load_csv(nluqa::testing::source_dir() / "data/reference" /
                                       (std::string("clinc_transfer_") + name + ".csv"));
    EXPECT_EQ(tm.domains.size(), 10u);
    EXPECT_NO_THROW(tm.validate());
  }
}

TEST(CorrelationTable, HeaderAndAvgColumnIsMeanAbs) {
  auto tm = small_matrix();
  auto e = sims(0.5, 0.2, 0.1, 0.6, 0.3, 0.7);
  auto c = sims(0.1, 0.9, 0.4, 0.2, 0.8, 0.3);
  std::vector<CorrelationReport> reports{correlation_report(tm, e, c, "desc")};
  ASSERT_EQ(reports[0].rows.size(), 2u);
  std::ostringstream out;
  write_correlation_table(out, reports);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header.substr(0, 20), "similarity,template,");
  EXPECT_EQ(header.substr(header.size() - 4), ",avg");
  const auto& row = reports[0].rows[0];
  std::ostringstream avg;
  avg.setf(std::ios::fixed);
  avg.precision(4);
  avg << row.mean_abs;
  EXPECT_EQ(first.substr(first.rfind(',') + 1), avg.str());
}

TEST(DomainSimilarities, AllPairsSymmetric) {
  HashingEncoder enc(64);
  std::map<std::string, std::vector<std::string>> texts{
      {"a", {"x y", "y z"}}, {"b", {"p q"}}, {"c", {"x y", "q r"}}};
  auto s = domain_similarities(texts, enc);
  for (const auto& [a, _] : texts)
    for (const auto& [b, __] : texts)
      if (a != b) EXPECT_DOUBLE_EQ(s.at(a, b), s.at(b, a));
  EXPECT_NEAR(s.at("a", "c"), sim_e(texts["a"], texts["c"], enc), 1e-12);
}
