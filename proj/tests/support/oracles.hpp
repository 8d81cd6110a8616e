#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond the Matrix typedefs.

#include "proxyfair/common.hpp"
#include "proxyfair/nncore.hpp"

#include <functional>
#include <set>
#include <span>
#include <vector>

namespace oracle {

using proxyfair::Index;
using proxyfair::Labels;
using proxyfair::Matrix;

struct Metrics {
  double spd = 0.0, dfpr = 0.0, dfnr = 0.0, eod = 0.0, ap = 0.0;
};

// Direct tallies over the rows, one pass per quantity.
Metrics tally_metrics(std::span<const int> hard, std::span<const double> score, std::span<const int> y,
                      std::span<const int> s);

struct Bipartition {
  double sse = 0.0;
  Labels labels;
};
// Minimum within-cluster SSE over all 2^n two-way assignments with both sides non-empty.
Bipartition exhaustive_bipartition(const Matrix& points);

struct RefMerge {
  std::set<Index> left, right;
  double cost = 0.0;
};
// Ward agglomeration recomputing every pairwise cost from member sets at
// each step. Ties go to the pair whose smaller minimal member is lowest.
std::vector<RefMerge> brute_force_ward(const Matrix& points);

// Central differences over every parameter entry. Relative error per entry
// |a - n| / max(|a| + |n|, floor); returns the maximum.
double finite_difference_error(const proxyfair::nn::ParameterList& params,
                               const std::function<double()>& loss_and_grad, const std::function<double()>& loss,
                               double epsilon = 1e-6, double floor = 1e-8);

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0);
Labels random_labels(std::size_t n, std::uint64_t seed, double p = 0.5);

}  // namespace oracle
