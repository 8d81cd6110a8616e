#include "proxyfair/kernels.hpp"

#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace proxyfair::kernels {

namespace {

inline double sqdist_rows(const Matrix& a, Index i, const Matrix& b, Index j) {
  double s = 0.0;
  const double* pa = a.data() + i * a.cols();
  const double* pb = b.data() + j * b.cols();
  for (Index k = 0; k < a.cols(); ++k) {
    const double d = pa[k] - pb[k];
    s += d * d;
  }
  return s;
}

inline void nearest_one(const Matrix& points, const Matrix& centroids, Index i, int& label, double& best) {
  best = std::numeric_limits<double>::infinity();
  label = 0;
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d = sqdist_rows(points, i, centroids, c);
    if (d < best) {
      best = d;
      label = static_cast<int>(c);
    }
  }
}

inline bool better(const WardCandidate& a, const WardCandidate& b) {
  if (b.index < 0) return a.index >= 0;
  if (a.index < 0) return false;
  return a.cost < b.cost || (a.cost == b.cost && a.index < b.index);
}

inline void tally(Confusion& c, int pred, int truth) {
  if (truth == 1)
    (pred == 1 ? c.tp : c.fn)++;
  else
    (pred == 1 ? c.fp : c.tn)++;
}

void check_confusion_inputs(std::span<const int> p, std::span<const int> y, std::span<const int> g) {
  if (p.size() != y.size() || p.size() != g.size()) throw ShapeError("group_confusion: length mismatch");
}

constexpr Index kParallelRows = 2048;

}  // namespace

namespace serial {

void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist) {
  for (Index i = 0; i < points.rows(); ++i)
    nearest_one(points, centroids, i, labels[static_cast<std::size_t>(i)], sqdist[static_cast<std::size_t>(i)]);
}

Matrix squared_distances(const Matrix& points) {
  const Index n = points.rows();
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = sqdist_rows(points, i, points, j);
  }
  return d;
}

WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query) {
  WardCandidate best;
  for (Index j = 0; j < centroids.rows(); ++j) {
    if (j == query || !active[static_cast<std::size_t>(j)]) continue;
    WardCandidate c{j, ward_cost(sizes[static_cast<std::size_t>(query)], sizes[static_cast<std::size_t>(j)],
                                 sqdist_rows(centroids, query, centroids, j))};
    if (better(c, best)) best = c;
  }
  return best;
}

GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group) {
  check_confusion_inputs(predicted, truth, group);
  GroupConfusion out{};
  for (std::size_t i = 0; i < predicted.size(); ++i) tally(out[group[i] == 1 ? 1 : 0], predicted[i], truth[i]);
  return out;
}

}  // namespace serial

namespace parallel {

void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist) {
  const Index n = points.rows();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i)
    nearest_one(points, centroids, i, labels[static_cast<std::size_t>(i)], sqdist[static_cast<std::size_t>(i)]);
}

Matrix squared_distances(const Matrix& points) {
  const Index n = points.rows();
  Matrix d(n, n);
#pragma omp parallel for schedule(dynamic, 16)
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d(i, j) = i == j ? 0.0 : sqdist_rows(points, std::min(i, j), points, std::max(i, j));
  return d;
}

WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query) {
  WardCandidate best;
#pragma omp parallel
  {
    WardCandidate local;
#pragma omp for schedule(static) nowait
    for (Index j = 0; j < centroids.rows(); ++j) {
      if (j == query || !active[static_cast<std::size_t>(j)]) continue;
      WardCandidate c{j, ward_cost(sizes[static_cast<std::size_t>(query)], sizes[static_cast<std::size_t>(j)],
                                   sqdist_rows(centroids, query, centroids, j))};
      if (better(c, local)) local = c;
    }
#pragma omp critical
    {
      if (better(local, best)) best = local;
    }
  }
  return best;
}

GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group) {
  check_confusion_inputs(predicted, truth, group);
  std::int64_t tp0 = 0, fp0 = 0, tn0 = 0, fn0 = 0, tp1 = 0, fp1 = 0, tn1 = 0, fn1 = 0;
  const auto n = static_cast<std::int64_t>(predicted.size());
#pragma omp parallel for schedule(static) reduction(+ : tp0, fp0, tn0, fn0, tp1, fp1, tn1, fn1)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const bool g1 = group[k] == 1;
    const bool pos = predicted[k] == 1;
    if (truth[k] == 1) {
      if (pos) (g1 ? tp1 : tp0)++;
      else (g1 ? fn1 : fn0)++;
    } else {
      if (pos) (g1 ? fp1 : fp0)++;
      else (g1 ? tn1 : tn0)++;
    }
  }
  return {Confusion{tp0, fp0, tn0, fn0}, Confusion{tp1, fp1, tn1, fn1}};
}

}  // namespace parallel

void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist) {
  if (static_cast<std::size_t>(points.rows()) != labels.size() || labels.size() != sqdist.size())
    throw ShapeError("nearest_centroid: output size mismatch");
  if (points.cols() != centroids.cols())
    throw ShapeError("nearest_centroid: points " + shape_string(points.rows(), points.cols()) + " vs centroids " +
                     shape_string(centroids.rows(), centroids.cols()));
  if (points.rows() >= kParallelRows)
    parallel::nearest_centroid(points, centroids, labels, sqdist);
  else
    serial::nearest_centroid(points, centroids, labels, sqdist);
}

Matrix squared_distances(const Matrix& points) {
  return points.rows() >= 512 ? parallel::squared_distances(points) : serial::squared_distances(points);
}

WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query) {
  return centroids.rows() >= kParallelRows ? parallel::nearest_ward(centroids, sizes, active, query)
                                           : serial::nearest_ward(centroids, sizes, active, query);
}

GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group) {
  return predicted.size() >= static_cast<std::size_t>(kParallelRows)
             ? parallel::group_confusion(predicted, truth, group)
             : serial::group_confusion(predicted, truth, group);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace proxyfair::kernels
