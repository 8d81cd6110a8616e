#pragma once

#include "proxyfair/common.hpp"

#include <array>
#include <memory>
#include <optional>
#include <span>

namespace proxyfair {

enum class ClusterMethod { kmeans, hierarchical, birch };
ClusterMethod parse_cluster_method(const std::string& name);
std::string to_string(ClusterMethod m);

enum class Linkage { ward, average, complete };
Linkage parse_linkage(const std::string& name);
std::string to_string(Linkage l);

// One agglomeration step. Leaves are 0..n-1; the i-th merge creates n + i.
struct Merge {
  Index a = 0, b = 0;  // a < b
  double height = 0.0;
  Index size = 0;
};

struct ClusterResult {
  Labels labels;
  std::string method;
  std::uint64_t seed = 0;
  double inertia = 0.0;                // within-cluster SSE of the final labels
  std::vector<double> inertia_history;  // k-means: per Lloyd iteration, then per transfer sweep
  int iterations = 0;
  std::vector<Merge> merges;  // hierarchical/birch, sorted by height
  Index subclusters = 0;      // birch leaf entries
  bool degenerate = false;    // fewer than k distinct labels
};

struct KMeansOptions {
  int k = 2;
  int restarts = 10;
  int max_iterations = 300;
  std::uint64_t seed = 0;
};

ClusterResult kmeans(const Matrix& points, const KMeansOptions& options);
inline ClusterResult kmeans(const Matrix& points, int k, int restarts, std::uint64_t seed) {
  return kmeans(points, KMeansOptions{k, restarts, 300, seed});
}

// Points beyond this many rows use the nearest-neighbour chain with
// centroid-form Ward costs (linear memory); below it, greedy global search
// with the smallest-index tie rule.
inline constexpr Index kGreedyLimit = 256;
// average/complete keep a full distance matrix.
inline constexpr Index kMatrixLinkageLimit = 8000;

ClusterResult hierarchical(const Matrix& points, int k = 2, Linkage linkage = Linkage::ward);

enum class WardSearch { automatic, greedy, chain };

// Weighted Ward agglomeration of `centroids` carrying `sizes` points each.
std::vector<Merge> ward_dendrogram(const Matrix& centroids, std::span<const double> sizes,
                                   WardSearch search = WardSearch::automatic);
// Cluster ids 0..k-1 (ordered by smallest member) after applying the first n-k merges.
Labels cut_tree(Index n, std::span<const Merge> merges, int k);

// ---- BIRCH --------------------------------------------------------------

struct ClusteringFeature {
  double n = 0.0;
  RowVector ls;
  double ss = 0.0;

  static ClusteringFeature of_point(const RowVector& x);
  void add(const ClusteringFeature& other);
  RowVector centroid() const { return ls / n; }
  // sqrt(SS/N - ||LS/N||^2)
  double radius() const;
};

ClusteringFeature merge(const ClusteringFeature& a, const ClusteringFeature& b);

struct CFNode;

struct CFEntry {
  ClusteringFeature cf;
  std::unique_ptr<CFNode> child;  // null at leaves
  Index subcluster = -1;          // leaf entries only
};

struct CFNode {
  bool leaf = true;
  std::vector<CFEntry> entries;
};

class CFTree {
 public:
  CFTree(Index dim, double threshold, int branching);

  // Inserts and returns the id of the leaf subcluster that absorbed the point.
  Index insert(const RowVector& x);

  const CFNode& root() const { return *root_; }
  Index subcluster_count() const { return next_subcluster_; }
  // Leaf subcluster features indexed by subcluster id.
  std::vector<ClusteringFeature> subclusters() const;
  // Max over internal entries of |parent CF - sum of child CFs| (N, LS, SS).
  double additivity_error() const;
  int depth() const;

  double threshold;
  int branching;

 private:
  struct Split {
    CFEntry left, right;
  };
  std::optional<Split> insert_into(CFNode& node, const ClusteringFeature& point, Index& id);
  Split split_node(CFNode& node);

  Index dim_;
  std::unique_ptr<CFNode> root_;
  Index next_subcluster_ = 0;
};

struct BirchOptions {
  double threshold = 0.5;
  int branching = 50;
  int k = 2;
};

ClusterResult birch(const Matrix& points, const BirchOptions& options = {});

// ---- proxy labels -------------------------------------------------------

struct ProxyLabels {
  Labels proxy;
  std::array<Index, 2> sizes{0, 0};
  std::string method;
};

// Larger cluster becomes 0; on equal sizes the cluster of row 0 becomes 0.
ProxyLabels assign_proxy(const ClusterResult& result);

// Per-column z-score; constant columns are only centred.
Matrix standardize_columns(const Matrix& x);

double within_sse(const Matrix& points, std::span<const int> labels, int k);
double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth);
// Balanced accuracy under the better of the two label orientations.
double recovery_accuracy(std::span<const int> proxy, std::span<const int> truth);

}  // namespace proxyfair
