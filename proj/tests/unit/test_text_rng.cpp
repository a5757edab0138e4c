#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "nluqa/rng.hpp"
#include "nluqa/text.hpp"

using namespace nluqa;

TEST(Text, NormalizeAnswerStripsCaseWhitespaceAndTerminalPunctuation) {
  EXPECT_EQ(normalize_answer("  Yes. "), "yes");
  EXPECT_EQ(normalize_answer("YES!?"), "yes");
  EXPECT_EQ(normalize_answer("no"), "no");
  EXPECT_EQ(normalize_answer(""), "");
}

TEST(Text, NormalizeValueKeepsCase) {
  EXPECT_EQ(normalize_value("  Anna "), "Anna");
  EXPECT_EQ(normalize_value("50 Euros"), "50 Euros");
}

TEST(Text, SplitValuesDropsEmptyPieces) {
  EXPECT_EQ(split_values("a; b;  ; c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(split_values("").empty());
  EXPECT_EQ(join({"x", "y"}, kValueSeparator), "x; y");
}

TEST(Text, CountOccurrences) {
  EXPECT_EQ(count_occurrences("aaa", "a"), 3u);
  EXPECT_EQ(count_occurrences("abcabc", "bc"), 2u);
  EXPECT_EQ(count_occurrences("abc", ""), 0u);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, KnownFirstOutputOfStandardEngine) {
  // mt19937_64 default-seed output fixed by the standard.
  Rng r(5489);
  EXPECT_EQ(r.next(), 14514284786278117030ULL);
}

TEST(Rng, IndexAndRealRanges) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    EXPECT_LT(r.index(13), 13u);
    const double x = r.real();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(Rng, ShuffleIsAPermutationAndDeterministic) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng(3).shuffle(std::span<int>(a));
  Rng(3).shuffle(std::span<int>(b));
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(sorted, expect);
}

TEST(Rng, DerivedStreamsDiffer) {
  EXPECT_NE(Rng::derive(1, 0).next(), Rng::derive(1, 1).next());
  EXPECT_EQ(Rng::derive(1, 2).next(), Rng::derive(1, 2).next());
}
