#include "proxyfair/clustering.hpp"

#include "proxyfair/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace proxyfair {

ClusterMethod parse_cluster_method(const std::string& name) {
  if (name == "kmeans") return ClusterMethod::kmeans;
  if (name == "hierarchical") return ClusterMethod::hierarchical;
  if (name == "birch") return ClusterMethod::birch;
  throw Error("unknown clusterer '" + name + "' (kmeans, hierarchical, birch)");
}

std::string to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::kmeans: return "kmeans";
    case ClusterMethod::hierarchical: return "hierarchical";
    case ClusterMethod::birch: return "birch";
  }
  return "?";
}

Linkage parse_linkage(const std::string& name) {
  if (name == "ward") return Linkage::ward;
  if (name == "average") return Linkage::average;
  if (name == "complete") return Linkage::complete;
  throw Error("unknown linkage '" + name + "' (ward, average, complete)");
}

std::string to_string(Linkage l) {
  switch (l) {
    case Linkage::ward: return "ward";
    case Linkage::average: return "average";
    case Linkage::complete: return "complete";
  }
  return "?";
}

namespace {

int distinct_labels(const Labels& labels, int k) {
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
  return static_cast<int>(std::count(seen.begin(), seen.end(), true));
}

Matrix kmeanspp(const Matrix& points, int k, Rng& rng) {
  const Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Index pick = 0;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    centroids.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

double within_sse_counts(const Matrix& points, const Labels& labels, const Matrix& sums,
                         const std::vector<double>& counts) {
  double sse = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    sse += (points.row(i) - sums.row(static_cast<Index>(c)) / counts[c]).squaredNorm();
  }
  return sse;
}

struct LloydRun {
  Labels labels;
  std::vector<double> history;
  int iterations = 0;
};

LloydRun lloyd(const Matrix& points, Matrix centroids, int max_iterations) {
  const Index n = points.rows();
  const auto k = static_cast<int>(centroids.rows());
  LloydRun run;
  Labels current(static_cast<std::size_t>(n), -1);
  Labels next(static_cast<std::size_t>(n));
  std::vector<double> d(static_cast<std::size_t>(n));
  for (int it = 0; it < max_iterations; ++it) {
    kernels::nearest_centroid(points, centroids, next, d);
    run.history.push_back(std::accumulate(d.begin(), d.end(), 0.0));
    run.iterations = it + 1;
    if (next == current) break;
    current = next;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const int c = current[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move its centroid onto the point farthest from its own.
      Index far = -1;
      for (Index i = 0; i < n; ++i) {
        const auto owner = static_cast<std::size_t>(current[static_cast<std::size_t>(i)]);
        if (counts[owner] < 2) continue;
        if (far < 0 || d[static_cast<std::size_t>(i)] > d[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) continue;
      centroids.row(c) = points.row(far);
      d[static_cast<std::size_t>(far)] = 0.0;
    }
  }
  run.labels = current.front() < 0 ? next : current;
  return run;
}

// Single-point transfers (Hartigan): move a point whenever doing so lowers the
// SSE once both centroids are updated. Every fixed point here is also a Lloyd
// fixed point, and many shallow Lloyd optima are escaped.
void hartigan(const Matrix& points, Labels& labels, int k, std::vector<double>& history) {
  const Index n = points.rows();
  Matrix sums = Matrix::Zero(k, points.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < n; ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
    counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  bool moved = true;
  for (int sweep = 0; moved && sweep < 1000; ++sweep) {
    moved = false;
    for (Index i = 0; i < n; ++i) {
      const int a = labels[static_cast<std::size_t>(i)];
      const double na = counts[static_cast<std::size_t>(a)];
      if (na < 2.0) continue;
      const double leave = na / (na - 1.0) * (points.row(i) - sums.row(a) / na).squaredNorm();
      int to = -1;
      double gain = 1e-12 * (1.0 + leave);
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = counts[static_cast<std::size_t>(b)];
        const double join = nb == 0.0 ? 0.0 : nb / (nb + 1.0) * (points.row(i) - sums.row(b) / nb).squaredNorm();
        if (leave - join > gain) {
          gain = leave - join;
          to = b;
        }
      }
      if (to < 0) continue;
      sums.row(a) -= points.row(i);
      sums.row(to) += points.row(i);
      counts[static_cast<std::size_t>(a)] -= 1.0;
      counts[static_cast<std::size_t>(to)] += 1.0;
      labels[static_cast<std::size_t>(i)] = to;
      moved = true;
    }
    if (moved) history.push_back(within_sse_counts(points, labels, sums, counts));
  }
}

}  // namespace

double within_sse(const Matrix& points, std::span<const int> labels, int k) {
  if (static_cast<Index>(labels.size()) != points.rows()) throw ShapeError("within_sse: label count mismatch");
  Matrix sums = Matrix::Zero(k, points.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < points.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
    counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  double sse = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    sse += (points.row(i) - sums.row(c) / counts[static_cast<std::size_t>(c)]).squaredNorm();
  }
  return sse;
}

ClusterResult kmeans(const Matrix& points, const KMeansOptions& options) {
  const Index n = points.rows();
  if (options.k < 1) throw Error("kmeans: k must be positive");
  if (n < options.k) throw Error("kmeans: " + std::to_string(n) + " points for k = " + std::to_string(options.k));
  if (options.restarts < 1) throw Error("kmeans: restarts must be at least 1");
  if (options.max_iterations < 1) throw Error("kmeans: max_iterations must be at least 1");

  ClusterResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < options.restarts; ++r) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(r)));
    LloydRun run = lloyd(points, kmeanspp(points, options.k, rng), options.max_iterations);
    hartigan(points, run.labels, options.k, run.history);
    const double sse = within_sse(points, run.labels, options.k);
    if (sse < best.inertia) {
      best.inertia = sse;
      best.labels = std::move(run.labels);
      best.inertia_history = std::move(run.history);
      best.iterations = run.iterations;
    }
  }
  best.method = "kmeans";
  best.seed = options.seed;
  best.degenerate = distinct_labels(best.labels, options.k) < options.k;
  return best;
}

// ---- agglomerative ------------------------------------------------------

namespace {

// Merge between the clusters whose smallest leaves are a < b.
struct RawMerge {
  Index a, b;
  double height;
  Index size;
};

std::vector<Merge> finalize(Index n, std::vector<RawMerge> raw) {
  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& x, const RawMerge& y) { return x.height < y.height; });
  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  std::vector<Index> node(static_cast<std::size_t>(n));
  std::iota(node.begin(), node.end(), Index{0});
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  std::vector<Merge> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Index ra = find(raw[i].a), rb = find(raw[i].b);
    const Index na = node[static_cast<std::size_t>(ra)], nb = node[static_cast<std::size_t>(rb)];
    out.push_back({std::min(na, nb), std::max(na, nb), raw[i].height, raw[i].size});
    const Index root = std::min(ra, rb);
    parent[static_cast<std::size_t>(std::max(ra, rb))] = root;
    node[static_cast<std::size_t>(root)] = n + static_cast<Index>(i);
  }
  return out;
}

// Global search over all active pairs; ties go to the lexicographically smallest pair.
std::vector<RawMerge> greedy_ward(Matrix centroids, std::vector<double> sizes) {
  const Index n = centroids.rows();
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  std::vector<RawMerge> merges;
  for (Index step = 0; step + 1 < n; ++step) {
    Index bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (Index j = i + 1; j < n; ++j) {
        if (!active[static_cast<std::size_t>(j)]) continue;
        const double c = kernels::ward_cost(sizes[static_cast<std::size_t>(i)], sizes[static_cast<std::size_t>(j)],
                                            (centroids.row(i) - centroids.row(j)).squaredNorm());
        if (c < best) {
          best = c;
          bi = i;
          bj = j;
        }
      }
    }
    const double si = sizes[static_cast<std::size_t>(bi)], sj = sizes[static_cast<std::size_t>(bj)];
    centroids.row(bi) = (si * centroids.row(bi) + sj * centroids.row(bj)) / (si + sj);
    sizes[static_cast<std::size_t>(bi)] = si + sj;
    active[static_cast<std::size_t>(bj)] = false;
    merges.push_back({bi, bj, best, static_cast<Index>(std::llround(si + sj))});
  }
  return merges;
}

std::vector<RawMerge> chain_ward(Matrix centroids, std::vector<double> sizes) {
  const Index n = centroids.rows();
  std::vector<std::uint8_t> active(static_cast<std::size_t>(n), 1);
  std::vector<RawMerge> merges;
  merges.reserve(static_cast<std::size_t>(n - 1));
  std::vector<Index> chain;
  Index next_start = 0;
  auto cost = [&](Index i, Index j) {
    return kernels::ward_cost(sizes[static_cast<std::size_t>(i)], sizes[static_cast<std::size_t>(j)],
                              (centroids.row(i) - centroids.row(j)).squaredNorm());
  };
  for (Index remaining = n; remaining > 1;) {
    if (chain.empty()) {
      while (!active[static_cast<std::size_t>(next_start)]) ++next_start;
      chain.push_back(next_start);
    }
    Index a = 0, b = 0;
    double height = 0.0;
    while (true) {
      a = chain.back();
      auto cand = kernels::nearest_ward(centroids, sizes, active, a);
      if (chain.size() >= 2) {
        const Index prev = chain[chain.size() - 2];
        const double c = cost(a, prev);
        if (c <= cand.cost) cand = {prev, c};
      }
      if (chain.size() >= 2 && cand.index == chain[chain.size() - 2]) {
        b = cand.index;
        height = cand.cost;
        break;
      }
      chain.push_back(cand.index);
    }
    chain.pop_back();
    chain.pop_back();
    const Index lo = std::min(a, b), hi = std::max(a, b);
    const double sl = sizes[static_cast<std::size_t>(lo)], sh = sizes[static_cast<std::size_t>(hi)];
    centroids.row(lo) = (sl * centroids.row(lo) + sh * centroids.row(hi)) / (sl + sh);
    sizes[static_cast<std::size_t>(lo)] = sl + sh;
    active[static_cast<std::size_t>(hi)] = 0;
    merges.push_back({lo, hi, height, static_cast<Index>(std::llround(sl + sh))});
    --remaining;
  }
  return merges;
}

// Average/complete linkage over Euclidean distances with Lance-Williams updates.
std::vector<RawMerge> matrix_linkage(const Matrix& points, Linkage linkage) {
  const Index n = points.rows();
  Matrix d = kernels::squared_distances(points).cwiseSqrt();
  std::vector<double> sizes(static_cast<std::size_t>(n), 1.0);
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  std::vector<RawMerge> merges;
  auto update = [&](Index lo, Index hi) {
    const double sl = sizes[static_cast<std::size_t>(lo)], sh = sizes[static_cast<std::size_t>(hi)];
    for (Index k = 0; k < n; ++k) {
      if (!active[static_cast<std::size_t>(k)] || k == lo || k == hi) continue;
      const double v = linkage == Linkage::average ? (sl * d(lo, k) + sh * d(hi, k)) / (sl + sh)
                                                   : std::max(d(lo, k), d(hi, k));
      d(lo, k) = d(k, lo) = v;
    }
    sizes[static_cast<std::size_t>(lo)] = sl + sh;
    active[static_cast<std::size_t>(hi)] = false;
    merges.push_back({lo, hi, 0.0, static_cast<Index>(std::llround(sl + sh))});
  };

  if (n <= kGreedyLimit) {
    for (Index step = 0; step + 1 < n; ++step) {
      Index bi = -1, bj = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < n; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        for (Index j = i + 1; j < n; ++j)
          if (active[static_cast<std::size_t>(j)] && d(i, j) < best) {
            best = d(i, j);
            bi = i;
            bj = j;
          }
      }
      update(bi, bj);
      merges.back().height = best;
    }
    return merges;
  }

  std::vector<Index> chain;
  Index next_start = 0;
  for (Index remaining = n; remaining > 1; --remaining) {
    if (chain.empty()) {
      while (!active[static_cast<std::size_t>(next_start)]) ++next_start;
      chain.push_back(next_start);
    }
    Index a = 0, b = 0;
    while (true) {
      a = chain.back();
      Index best_j = -1;
      double best = std::numeric_limits<double>::infinity();
      if (chain.size() >= 2) {
        best_j = chain[chain.size() - 2];
        best = d(a, best_j);
      }
      for (Index j = 0; j < n; ++j)
        if (j != a && active[static_cast<std::size_t>(j)] && d(a, j) < best) {
          best = d(a, j);
          best_j = j;
        }
      if (chain.size() >= 2 && best_j == chain[chain.size() - 2]) {
        b = best_j;
        break;
      }
      chain.push_back(best_j);
    }
    chain.pop_back();
    chain.pop_back();
    const double h = d(a, b);
    update(std::min(a, b), std::max(a, b));
    merges.back().height = h;
  }
  return merges;
}

Labels cut_raw(Index n, std::span<const Merge> merges, int k) { return cut_tree(n, merges, k); }

}  // namespace

std::vector<Merge> ward_dendrogram(const Matrix& centroids, std::span<const double> sizes, WardSearch search) {
  const Index n = centroids.rows();
  if (static_cast<Index>(sizes.size()) != n) throw ShapeError("ward_dendrogram: size count mismatch");
  if (n < 2) return {};
  std::vector<double> s(sizes.begin(), sizes.end());
  if (search == WardSearch::automatic) search = n <= kGreedyLimit ? WardSearch::greedy : WardSearch::chain;
  auto raw = search == WardSearch::greedy ? greedy_ward(centroids, std::move(s)) : chain_ward(centroids, std::move(s));
  return finalize(n, std::move(raw));
}

Labels cut_tree(Index n, std::span<const Merge> merges, int k) {
  if (k < 1 || k > n) throw Error("cut_tree: k = " + std::to_string(k) + " for " + std::to_string(n) + " leaves");
  if (static_cast<Index>(merges.size()) < n - k) throw Error("cut_tree: dendrogram is incomplete");
  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  std::vector<Index> leaf_of(static_cast<std::size_t>(2 * n));
  std::iota(leaf_of.begin(), leaf_of.begin() + n, Index{0});
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (Index i = 0; i < n - k; ++i) {
    const auto& m = merges[static_cast<std::size_t>(i)];
    const Index ra = find(leaf_of[static_cast<std::size_t>(m.a)]);
    const Index rb = find(leaf_of[static_cast<std::size_t>(m.b)]);
    const Index root = std::min(ra, rb);
    parent[static_cast<std::size_t>(std::max(ra, rb))] = root;
    leaf_of[static_cast<std::size_t>(n + i)] = root;
  }
  // Roots are smallest members, so ordering by root orders by smallest member.
  Labels labels(static_cast<std::size_t>(n));
  std::vector<int> id(static_cast<std::size_t>(n), -1);
  int next = 0;
  for (Index i = 0; i < n; ++i) {
    const Index r = find(i);
    if (id[static_cast<std::size_t>(r)] < 0) id[static_cast<std::size_t>(r)] = next++;
    labels[static_cast<std::size_t>(i)] = id[static_cast<std::size_t>(r)];
  }
  return labels;
}

ClusterResult hierarchical(const Matrix& points, int k, Linkage linkage) {
  const Index n = points.rows();
  if (n < 2) throw Error("hierarchical: need at least 2 points, got " + std::to_string(n));
  if (k < 1 || k > n) throw Error("hierarchical: k = " + std::to_string(k) + " for " + std::to_string(n) + " points");
  ClusterResult result;
  if (linkage == Linkage::ward) {
    const std::vector<double> ones(static_cast<std::size_t>(n), 1.0);
    result.merges = ward_dendrogram(points, ones);
  } else {
    if (n > kMatrixLinkageLimit)
      throw Error("hierarchical: " + to_string(linkage) + " linkage is limited to " +
                  std::to_string(kMatrixLinkageLimit) + " points; use ward");
    result.merges = finalize(n, matrix_linkage(points, linkage));
  }
  result.labels = cut_raw(n, result.merges, k);
  result.method = "hierarchical-" + to_string(linkage);
  result.inertia = within_sse(points, result.labels, k);
  result.degenerate = distinct_labels(result.labels, k) < k;
  return result;
}

// ---- BIRCH --------------------------------------------------------------

ClusteringFeature ClusteringFeature::of_point(const RowVector& x) { return {1.0, x, x.squaredNorm()}; }

void ClusteringFeature::add(const ClusteringFeature& other) {
  if (n == 0.0) {
    *this = other;
    return;
  }
  n += other.n;
  ls += other.ls;
  ss += other.ss;
}

double ClusteringFeature::radius() const {
  if (n <= 0.0) return 0.0;
  return std::sqrt(std::max(0.0, ss / n - (ls / n).squaredNorm()));
}

ClusteringFeature merge(const ClusteringFeature& a, const ClusteringFeature& b) {
  ClusteringFeature out = a;
  out.add(b);
  return out;
}

CFTree::CFTree(Index dim, double t, int b) : threshold(t), branching(b), dim_(dim), root_(std::make_unique<CFNode>()) {
  if (!(t > 0.0)) throw Error("birch: threshold must be positive");
  if (b < 2) throw Error("birch: branching factor must be at least 2");
  if (dim <= 0) throw Error("birch: dimension must be positive");
}

namespace {

Index nearest_entry(const std::vector<CFEntry>& entries, const RowVector& x) {
  Index best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double d = (entries[i].cf.centroid() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<Index>(i);
    }
  }
  return best;
}

ClusteringFeature sum_entries(const CFNode& node) {
  ClusteringFeature cf;
  for (const auto& e : node.entries) cf.add(e.cf);
  return cf;
}

}  // namespace

Index CFTree::insert(const RowVector& x) {
  if (x.size() != dim_)
    throw ShapeError("birch: point of width " + std::to_string(x.size()) + ", tree width " + std::to_string(dim_));
  Index id = -1;
  auto split = insert_into(*root_, ClusteringFeature::of_point(x), id);
  if (split) {
    auto root = std::make_unique<CFNode>();
    root->leaf = false;
    root->entries.push_back(std::move(split->left));
    root->entries.push_back(std::move(split->right));
    root_ = std::move(root);
  }
  return id;
}

std::optional<CFTree::Split> CFTree::insert_into(CFNode& node, const ClusteringFeature& point, Index& id) {
  const RowVector x = point.ls;
  const Index near = nearest_entry(node.entries, x);
  if (node.leaf) {
    if (near >= 0) {
      auto& e = node.entries[static_cast<std::size_t>(near)];
      if (merge(e.cf, point).radius() <= threshold) {
        e.cf.add(point);
        id = e.subcluster;
        return std::nullopt;
      }
    }
    CFEntry e;
    e.cf = point;
    e.subcluster = next_subcluster_++;
    id = e.subcluster;
    node.entries.push_back(std::move(e));
  } else {
    auto& e = node.entries[static_cast<std::size_t>(near)];
    auto split = insert_into(*e.child, point, id);
    if (!split) {
      e.cf.add(point);
      return std::nullopt;
    }
    const auto pos = node.entries.begin() + near;
    *pos = std::move(split->left);
    node.entries.insert(pos + 1, std::move(split->right));
  }
  if (static_cast<int>(node.entries.size()) > branching) return split_node(node);
  return std::nullopt;
}

CFTree::Split CFTree::split_node(CFNode& node) {
  const std::size_t m = node.entries.size();
  std::size_t s1 = 0, s2 = 1;
  double far = -1.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double d = (node.entries[i].cf.centroid() - node.entries[j].cf.centroid()).squaredNorm();
      if (d > far) {
        far = d;
        s1 = i;
        s2 = j;
      }
    }
  const RowVector c1 = node.entries[s1].cf.centroid(), c2 = node.entries[s2].cf.centroid();
  auto left = std::make_unique<CFNode>(), right = std::make_unique<CFNode>();
  left->leaf = right->leaf = node.leaf;
  for (std::size_t i = 0; i < m; ++i) {
    const RowVector c = node.entries[i].cf.centroid();
    const bool to_left = i == s1 || (i != s2 && (c - c1).squaredNorm() <= (c - c2).squaredNorm());
    (to_left ? left : right)->entries.push_back(std::move(node.entries[i]));
  }
  node.entries.clear();
  Split out;
  out.left.cf = sum_entries(*left);
  out.left.child = std::move(left);
  out.right.cf = sum_entries(*right);
  out.right.child = std::move(right);
  return out;
}

std::vector<ClusteringFeature> CFTree::subclusters() const {
  std::vector<ClusteringFeature> out(static_cast<std::size_t>(next_subcluster_));
  std::vector<const CFNode*> stack{root_.get()};
  while (!stack.empty()) {
    const CFNode* node = stack.back();
    stack.pop_back();
    for (const auto& e : node->entries) {
      if (node->leaf)
        out[static_cast<std::size_t>(e.subcluster)] = e.cf;
      else
        stack.push_back(e.child.get());
    }
  }
  return out;
}

double CFTree::additivity_error() const {
  double worst = 0.0;
  std::vector<const CFNode*> stack{root_.get()};
  while (!stack.empty()) {
    const CFNode* node = stack.back();
    stack.pop_back();
    if (node->leaf) continue;
    for (const auto& e : node->entries) {
      const ClusteringFeature sum = sum_entries(*e.child);
      worst = std::max({worst, std::abs(e.cf.n - sum.n), (e.cf.ls - sum.ls).cwiseAbs().maxCoeff(),
                        std::abs(e.cf.ss - sum.ss)});
      stack.push_back(e.child.get());
    }
  }
  return worst;
}

int CFTree::depth() const {
  int d = 1;
  for (const CFNode* node = root_.get(); !node->leaf; node = node->entries.front().child.get()) ++d;
  return d;
}

ClusterResult birch(const Matrix& points, const BirchOptions& options) {
  const Index n = points.rows();
  if (n < 1) throw Error("birch: no points");
  if (options.k < 1) throw Error("birch: k must be positive");
  CFTree tree(points.cols(), options.threshold, options.branching);
  std::vector<Index> owner(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) owner[static_cast<std::size_t>(i)] = tree.insert(points.row(i));

  const auto subs = tree.subclusters();
  const auto m = static_cast<Index>(subs.size());
  Matrix centroids(m, points.cols());
  std::vector<double> sizes(static_cast<std::size_t>(m));
  for (Index s = 0; s < m; ++s) {
    centroids.row(s) = subs[static_cast<std::size_t>(s)].centroid();
    sizes[static_cast<std::size_t>(s)] = subs[static_cast<std::size_t>(s)].n;
  }
  ClusterResult result;
  result.method = "birch";
  result.subclusters = m;
  const int k = static_cast<int>(std::min<Index>(options.k, m));
  result.merges = ward_dendrogram(centroids, sizes);
  const Labels sub_labels = cut_tree(m, result.merges, k);
  result.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    result.labels[static_cast<std::size_t>(i)] =
        sub_labels[static_cast<std::size_t>(owner[static_cast<std::size_t>(i)])];
  result.inertia = within_sse(points, result.labels, options.k);
  result.degenerate = distinct_labels(result.labels, options.k) < options.k;
  return result;
}

// ---- proxy labels -------------------------------------------------------

ProxyLabels assign_proxy(const ClusterResult& result) {
  ProxyLabels out;
  out.method = result.method;
  std::array<Index, 2> counts{0, 0};
  for (int l : result.labels) {
    if (l != 0 && l != 1) throw Error("assign_proxy: expected a 2-cluster result, saw label " + std::to_string(l));
    ++counts[static_cast<std::size_t>(l)];
  }
  if (result.degenerate || counts[0] == 0 || counts[1] == 0)
    throw Error("assign_proxy: " + result.method +
                " produced a single cluster; try a different clustering method or seed");
  const bool flip = counts[1] > counts[0] || (counts[1] == counts[0] && result.labels.front() == 1);
  out.proxy.reserve(result.labels.size());
  for (int l : result.labels) out.proxy.push_back(flip ? 1 - l : l);
  out.sizes = flip ? std::array<Index, 2>{counts[1], counts[0]} : counts;
  return out;
}

Matrix standardize_columns(const Matrix& x) {
  if (x.rows() == 0) return x;
  const RowVector mean = x.colwise().mean();
  Matrix out = x.rowwise() - mean;
  for (Index c = 0; c < x.cols(); ++c) {
    const double sd = std::sqrt(out.col(c).squaredNorm() / static_cast<double>(x.rows()));
    if (sd > 0.0) out.col(c) /= sd;
  }
  return out;
}

double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("balanced_accuracy: length mismatch");
  double tp = 0, tn = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1) {
      ++pos;
      tp += predicted[i] == 1;
    } else {
      ++neg;
      tn += predicted[i] != 1;
    }
  }
  if (pos == 0 || neg == 0) throw Error("balanced_accuracy: truth has a single class");
  return 0.5 * (tp / pos + tn / neg);
}

double recovery_accuracy(std::span<const int> proxy, std::span<const int> truth) {
  const double ba = balanced_accuracy(proxy, truth);
  return std::max(ba, 1.0 - ba);
}

}  // namespace proxyfair
