#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "nluqa/clse.hpp"
#include "nluqa/encoder.hpp"
#include "nluqa/errors.hpp"
#include "support.hpp"

using namespace nluqa;

TEST(HashingEncoder, RowsAreUnitAndDeterministic) {
  HashingEncoder enc(256);
  EXPECT_EQ(enc.id(), "hash-ngram-256");
  std::vector<std::string> texts{"book a room", "what is my balance", "", "!!!"};
  auto m = enc.encode(texts);
  ASSERT_EQ(m.rows(), 4);
  ASSERT_EQ(m.cols(), 256);
  for (Eigen::Index i = 0; i < m.rows(); ++i) EXPECT_NEAR(m.row(i).norm(), 1.0, 1e-12);
  EXPECT_TRUE(m.isApprox(HashingEncoder(256).encode(texts)));
}

TEST(HashingEncoder, LexicalOverlapRaisesCosine) {
  HashingEncoder enc(1024);
  auto a = enc.encode_one("i want to book a hotel room");
  auto b = enc.encode_one("please book a hotel room for me");
  auto c = enc.encode_one("what is my credit card balance");
  EXPECT_GT(a.dot(b), a.dot(c));
  EXPECT_NEAR(a.dot(enc.encode_one("I want to book a hotel room")), 1.0, 1e-12);
}

TEST(CachingEncoder, DeduplicatesAndMatchesInner) {
  CachingEncoder enc(std::make_unique<HashingEncoder>(64));
  std::vector<std::string> texts{"a b", "c d", "a b"};
  auto m = enc.encode(texts);
  EXPECT_EQ(enc.cache_size(), 2u);
  EXPECT_TRUE(m.row(0).isApprox(m.row(2)));
  EXPECT_TRUE(m.isApprox(HashingEncoder(64).encode(texts)));
}

TEST(MakeEncoder, KnownAndUnknownIds) {
  ModelRegistry empty;
  EXPECT_EQ(make_encoder("hash-ngram-32", empty)->id(), "hash-ngram-32");
  EXPECT_THROW(make_encoder("no-such-encoder", empty), ConfigError);
  EXPECT_THROW(make_encoder("hash-ngram-0", empty), ConfigError);
  EXPECT_THROW(embed(std::span<const std::string>{}, "hash-ngram-32", empty), ArgumentError);
}

namespace {

struct Toy {
  DomainOntology o;
  std::vector<Eigen::VectorXd> x;
  std::vector<std::set<std::string>> y;
};

// Separable data: intent k fires when coordinate k is large.
Toy toy(int n, int intents, int dim, std::uint64_t seed) {
  Toy t;
  t.o.domain_name = "toy";
  for (int k = 0; k < intents; ++k) t.o.intents.push_back({"i" + std::to_string(k), "do " + std::to_string(k), {}});
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v[d] = rng.uniform(-0.2, 0.2);
    std::set<std::string> labels;
    for (int k = 0; k < intents; ++k) {
      if (rng.real() < 0.4) {
        v[k] += 1.0;
        labels.insert("i" + std::to_string(k));
      }
    }
    t.x.push_back(v.normalized());
    t.y.push_back(labels);
  }
  return t;
}

ClseConfig fast_config() {
  ClseConfig c;
  c.hidden_size = 32;
  c.epochs = 200;
  c.learning_rate = 1e-2;
  c.seed = 1;
  return c;
}

}  // namespace

TEST(Clse, MemorizesSeparableTrainingSet) {
  auto t = toy(40, 4, 8, 3);
  auto clf = train_clse(t.x, t.y, t.o, fast_config());
  EXPECT_EQ(clf.output_dimension(), 4);
  EXPECT_EQ(clf.input_dimension(), 8);
  int correct = 0;
  for (std::size_t i = 0; i < t.x.size(); ++i) correct += clf.predict(t.x[i]) == t.y[i];
  EXPECT_GE(correct, 38);
}

TEST(Clse, ThresholdMonotoneAndZeroSelectsAll) {
  auto t = toy(20, 3, 6, 5);
  auto cfg = fast_config();
  cfg.epochs = 5;
  auto clf = train_clse(t.x, t.y, t.o, cfg);
  for (const auto& x : t.x) {
    const auto p = clf.probabilities(x);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      EXPECT_GT(p[k], 0.0);
      EXPECT_LT(p[k], 1.0);
    }
    std::size_t prev = clf.predict(x, 0.0).size();
    EXPECT_EQ(prev, 3u);
    for (double theta : {0.1, 0.3, 0.5, 0.7, 0.9, 0.999999}) {
      auto s = clf.predict(x, theta);
      EXPECT_LE(s.size(), prev);
      prev = s.size();
    }
  }
}

TEST(Clse, SameSeedSameWeights) {
  auto t = toy(16, 3, 5, 9);
  auto cfg = fast_config();
  cfg.epochs = 3;
  auto a = train_clse(t.x, t.y, t.o, cfg).to_json();
  auto b = train_clse(t.x, t.y, t.o, cfg).to_json();
  EXPECT_EQ(a, b);
  cfg.seed = 2;
  EXPECT_NE(a, train_clse(t.x, t.y, t.o, cfg).to_json());
}

TEST(Clse, InputErrors) {
  auto t = toy(6, 2, 4, 1);
  auto cfg = fast_config();
  EXPECT_THROW(train_clse({}, {}, t.o, cfg), ArgumentError);
  EXPECT_THROW(train_clse(t.x, std::span(t.y).first(5), t.o, cfg), ArgumentError);
  auto bad_dim = t.x;
  bad_dim[3] = Eigen::VectorXd::Ones(7);
  EXPECT_THROW(train_clse(bad_dim, t.y, t.o, cfg), ArgumentError);
  auto bad_label = t.y;
  bad_label[0].insert("ghost");
  EXPECT_THROW(train_clse(t.x, bad_label, t.o, cfg), ArgumentError);
  cfg.threshold = 1.0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(Clse, SaveLoadPreservesPredictions) {
  auto t = toy(12, 3, 5, 4);
  auto cfg = fast_config();
  cfg.epochs = 10;
  auto clf = train_clse(t.x, t.y, t.o, cfg);
  nluqa::testing::TempDir tmp("clse");
  clf.save(tmp.path() / "c.json");
  auto back = ClseClassifier::load(tmp.path() / "c.json");
  EXPECT_EQ(back.intents(), clf.intents());
  for (const auto& x : t.x) EXPECT_TRUE(back.probabilities(x).isApprox(clf.probabilities(x), 1e-12));
}

TEST(Clse, DefaultConfig) {
  ClseConfig c;
  EXPECT_EQ(c.hidden_size, 512);
  EXPECT_DOUBLE_EQ(c.threshold, 0.3);
  EXPECT_NO_THROW(c.validate());
  auto back = clse_config_from_json(to_json(c));
  EXPECT_EQ(back.hidden_size, 512);
}
