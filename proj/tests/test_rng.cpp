#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <vector>

#include "ftattr/rng.hpp"

using namespace ftattr;

// Pinned with tests/oracles/prng_oracle.py.
TEST(Rng, PinnedDraws) {
  CounterRng rng(derive_key(0, {}));
  EXPECT_EQ(rng.next_u64(), 0xa706dd2f4d197e6fULL);
  EXPECT_EQ(rng.next_u64(), 0xb382a305f4414f5eULL);
  EXPECT_EQ(rng.next_u64(), 0x631a9154fbabf717ULL);
  EXPECT_EQ(rng.counter(), 3u);
}

TEST(Rng, CounterAddressing) {
  CounterRng a(42);
  for (int i = 0; i < 5; ++i) a.next_u64();
  CounterRng b(42, 5);
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DeriveKeyDependsOnTags) {
  EXPECT_NE(derive_key(1, {1}), derive_key(1, {2}));
  EXPECT_NE(derive_key(1, {1, 2}), derive_key(1, {2, 1}));
  EXPECT_EQ(derive_key(7, {3, 4}), derive_key(7, {3, 4}));
}

TEST(Rng, UniformAndBelowRanges) {
  CounterRng rng(9);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    ASSERT_LT(rng.below(7), 7u);
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  CounterRng rng(11);
  double s = 0, s2 = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, PermutationIsPermutation) {
  for (std::size_t n : {0u, 1u, 2u, 17u, 100u}) {
    CounterRng rng(n);
    auto p = random_permutation(n, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p[i], i);
  }
}

TEST(Rng, PermutationUniformity) {
  // All 6 permutations of 3 items appear with roughly equal frequency.
  std::map<std::vector<std::size_t>, int> counts;
  for (std::uint64_t s = 0; s < 6000; ++s) {
    CounterRng rng(derive_key(s, {5}));
    counts[random_permutation(3, rng)]++;
  }
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [perm, c] : counts) EXPECT_NEAR(c, 1000, 120);
}
