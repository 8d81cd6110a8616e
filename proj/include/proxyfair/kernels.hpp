#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels::parallel; both produce
// bit-identical results (per-row work only, integer or fixed-order
// reductions). The unqualified entry points dispatch on problem size.

#include "proxyfair/common.hpp"

#include <array>
#include <span>

namespace proxyfair::kernels {

// Confusion tallies for one group: tp, fp, tn, fn.
struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};
using GroupConfusion = std::array<Confusion, 2>;

struct WardCandidate {
  Index index = -1;
  double cost = 0.0;
};

namespace serial {

// labels[i] = argmin_c ||p_i - c||^2 (lowest index wins ties); sqdist[i] = that minimum.
void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist);

// Full n x n squared Euclidean distance matrix.
Matrix squared_distances(const Matrix& points);

// Cheapest Ward merge partner of `query` among active clusters (lowest index wins ties).
WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query);

GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group);

}  // namespace serial

namespace parallel {

void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist);
Matrix squared_distances(const Matrix& points);
WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query);
GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group);

}  // namespace parallel

// Size-dispatched entry points.
void nearest_centroid(const Matrix& points, const Matrix& centroids, std::span<int> labels,
                      std::span<double> sqdist);
Matrix squared_distances(const Matrix& points);
WardCandidate nearest_ward(const Matrix& centroids, std::span<const double> sizes,
                           std::span<const std::uint8_t> active, Index query);
GroupConfusion group_confusion(std::span<const int> predicted, std::span<const int> truth,
                               std::span<const int> group);

inline double ward_cost(double size_a, double size_b, double sqdist) {
  return size_a * size_b / (size_a + size_b) * sqdist;
}

int max_threads();

}  // namespace proxyfair::kernels
