#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "paretopic/rng.hpp"

using paretopic::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(17), b(17);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_TRUE(a == b);
}

TEST(Rng, StateRoundTrip) {
  Rng a(3);
  for (int i = 0; i < 10; ++i) a.normal();
  Rng b;
  b.set_state(a.state());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, MalformedStateRejected) {
  Rng a;
  EXPECT_THROW(a.set_state("not a state"), paretopic::DataError);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(5);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[r.below(7)];
  for (int h : hist) EXPECT_GT(h, 800);
  EXPECT_THROW(r.below(0), paretopic::NumericError);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(9);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v.begin(), v.end());
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Rng, NormalAndGammaMoments) {
  Rng r(11);
  const int n = 200000;
  double s = 0, s2 = 0, g = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
    g += r.gamma(0.1);
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(g / n, 0.1, 0.005);
}
