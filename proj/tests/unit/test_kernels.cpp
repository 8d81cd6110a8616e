#include "oracles.hpp"
#include "proxyfair/kernels.hpp"

#include <gtest/gtest.h>
#include <omp.h>

using namespace proxyfair;

namespace {

// The sandbox may expose one core; force a team so the parallel paths split work.
class Kernels : public ::testing::Test {
 protected:
  void SetUp() override {
    saved_ = omp_get_max_threads();
    omp_set_num_threads(4);
  }
  void TearDown() override { omp_set_num_threads(saved_); }

 private:
  int saved_ = 1;
};

}  // namespace

TEST_F(Kernels, NearestCentroidAgrees) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix p = oracle::random_matrix(5000, 6, seed);
    Matrix c = oracle::random_matrix(3, 6, seed + 50);
    c.row(2) = c.row(0);  // exact tie resolves to the lower index
    Labels ls(5000), lp(5000);
    std::vector<double> ds(5000), dp(5000);
    kernels::serial::nearest_centroid(p, c, ls, ds);
    kernels::parallel::nearest_centroid(p, c, lp, dp);
    EXPECT_EQ(ls, lp);
    EXPECT_EQ(ds, dp);
    for (int l : ls) EXPECT_NE(l, 2);
  }
}

TEST_F(Kernels, NearestCentroidMatchesDirectSearch) {
  const Matrix p = oracle::random_matrix(200, 3, 1), c = oracle::random_matrix(4, 3, 2);
  Labels l(200);
  std::vector<double> d(200);
  kernels::nearest_centroid(p, c, l, d);
  for (Index i = 0; i < 200; ++i) {
    Index best = 0;
    for (Index k = 1; k < 4; ++k)
      if ((p.row(i) - c.row(k)).squaredNorm() < (p.row(i) - c.row(best)).squaredNorm()) best = k;
    EXPECT_EQ(l[static_cast<std::size_t>(i)], best);
    EXPECT_NEAR(d[static_cast<std::size_t>(i)], (p.row(i) - c.row(best)).squaredNorm(), 1e-12);
  }
}

TEST_F(Kernels, SquaredDistancesAgree) {
  const Matrix p = oracle::random_matrix(700, 5, 3);
  const Matrix s = kernels::serial::squared_distances(p), q = kernels::parallel::squared_distances(p);
  EXPECT_EQ(s, q);
  EXPECT_NEAR(s(3, 9), (p.row(3) - p.row(9)).squaredNorm(), 1e-12);
  EXPECT_EQ(s(4, 4), 0.0);
  EXPECT_EQ(s, s.transpose());
}

TEST_F(Kernels, NearestWardAgrees) {
  const Matrix c = oracle::random_matrix(3000, 4, 4);
  std::vector<double> sizes(3000);
  std::vector<std::uint8_t> active(3000, 1);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    sizes[i] = 1.0 + static_cast<double>(i % 5);
    if (i % 7 == 0) active[i] = 0;
  }
  for (Index q : {1, 500, 2999}) {
    const auto s = kernels::serial::nearest_ward(c, sizes, active, q);
    const auto p = kernels::parallel::nearest_ward(c, sizes, active, q);
    EXPECT_EQ(s.index, p.index);
    EXPECT_EQ(s.cost, p.cost);
    EXPECT_NE(s.index, q);
    EXPECT_TRUE(active[static_cast<std::size_t>(s.index)]);
    const auto qi = static_cast<std::size_t>(q), si = static_cast<std::size_t>(s.index);
    EXPECT_NEAR(s.cost, kernels::ward_cost(sizes[qi], sizes[si], (c.row(q) - c.row(s.index)).squaredNorm()), 1e-12);
  }
}

TEST_F(Kernels, GroupConfusionAgrees) {
  const Labels pred = oracle::random_labels(100000, 1), y = oracle::random_labels(100000, 2),
               s = oracle::random_labels(100000, 3, 0.3);
  const auto a = kernels::serial::group_confusion(pred, y, s);
  const auto b = kernels::parallel::group_confusion(pred, y, s);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].total() + a[1].total(), 100000);
  std::int64_t tp1 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) tp1 += s[i] == 1 && pred[i] == 1 && y[i] == 1;
  EXPECT_EQ(a[1].tp, tp1);
}
