#include "proxyfair/probe.hpp"

#include "proxyfair/clustering.hpp"
#include "proxyfair/dataset.hpp"
#include "proxyfair/nncore.hpp"

#include <algorithm>
#include <cmath>

namespace proxyfair {

namespace {

double objective(const Matrix& x, const Vector& y, const Vector& w, double b, double l2) {
  const Vector z = (x * w).array() + b;
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) loss += nn::softplus(z(i)) - y(i) * z(i);
  return loss / static_cast<double>(x.rows()) + 0.5 * l2 * w.squaredNorm();
}

}  // namespace

LinearProbe train_probe(const Matrix& x, std::span<const int> labels, const ProbeConfig& config) {
  const Index n = x.rows(), d = x.cols();
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("probe: label count mismatch");
  if (n == 0 || d == 0) throw Error("probe: empty input");
  Vector y(n);
  Index positives = 0;
  for (Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    if (l != 0 && l != 1) throw Error("probe: labels must be 0 or 1");
    y(i) = l;
    positives += l;
  }
  if (positives == 0 || positives == n) throw Error("probe: labels contain a single class");

  LinearProbe probe;
  Vector w = Vector::Zero(d);
  double b = 0.0;
  double current = objective(x, y, w, b, config.l2);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < config.max_iterations; ++it) {
    const Vector z = (x * w).array() + b;
    Vector p(n), curv(n);
    for (Index i = 0; i < n; ++i) {
      p(i) = nn::sigmoid(z(i));
      curv(i) = p(i) * (1.0 - p(i));
    }
    const Vector r = p - y;
    Vector grad(d + 1);
    grad.head(d) = x.transpose() * r * inv_n + config.l2 * w;
    grad(d) = r.sum() * inv_n;

    Eigen::MatrixXd hess(d + 1, d + 1);
    const Matrix xc = x.array().colwise() * curv.array();
    hess.topLeftCorner(d, d) = x.transpose() * xc * inv_n;
    hess.topLeftCorner(d, d).diagonal().array() += config.l2;
    const Vector col = xc.colwise().sum().transpose() * inv_n;
    hess.topRightCorner(d, 1) = col;
    hess.bottomLeftCorner(1, d) = col.transpose();
    hess(d, d) = curv.sum() * inv_n + 1e-12;
    const Vector step = hess.ldlt().solve(grad);

    double scale = 1.0;
    Vector w_new;
    double b_new = 0.0, next = current;
    for (int tries = 0; tries < 40; ++tries) {
      w_new = w - scale * step.head(d);
      b_new = b - scale * step(d);
      next = objective(x, y, w_new, b_new, config.l2);
      if (next <= current) break;
      scale *= 0.5;
    }
    probe.iterations = it + 1;
    if (!(next <= current)) break;
    w = std::move(w_new);
    b = b_new;
    const double gain = current - next;
    current = next;
    if (gain <= config.tolerance * std::max(1.0, std::abs(current))) break;
  }
  probe.weight = std::move(w);
  probe.bias = b;
  probe.train_accuracy = probe_accuracy(probe, x, labels);
  return probe;
}

double probe_accuracy(const LinearProbe& probe, const Matrix& x, std::span<const int> labels) {
  if (x.cols() != probe.weight.size()) throw ShapeError("probe: feature width mismatch");
  if (x.rows() == 0) return 0.0;
  const Vector z = (x * probe.weight).array() + probe.bias;
  Index hits = 0;
  for (Index i = 0; i < z.size(); ++i) hits += (z(i) >= 0.0 ? 1 : 0) == labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hits) / static_cast<double>(z.size());
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine: widths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Json SimilarityReport::to_json() const {
  return Json{{"cos_proxy_true", cos_proxy_true},
              {"cos_proxy_downstream", cos_proxy_downstream},
              {"accuracy", {{"proxy", acc_proxy}, {"true", acc_true}, {"downstream", acc_downstream}}},
              {"train_rows", train_rows},
              {"test_rows", test_rows}};
}

SimilarityReport analyze(const Matrix& embeddings, std::span<const int> proxy, std::span<const int> s,
                         std::span<const int> y, const ProbeConfig& config) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (proxy.size() != n || s.size() != n || y.size() != n)
    throw ShapeError("analyze: label vectors must align with the " + std::to_string(n) + " embedding rows");
  const Matrix x = standardize_columns(embeddings);
  const SplitIndex parts = split(n, config.test_frac, config.seed);
  const Matrix train = nn::gather_rows(x, parts.train), test = nn::gather_rows(x, parts.test);
  auto pick = [](std::span<const int> v, const std::vector<std::size_t>& rows) {
    Labels out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(v[r]);
    return out;
  };
  auto fit = [&](std::span<const int> labels) {
    LinearProbe p = train_probe(train, pick(labels, parts.train), config);
    p.test_accuracy = probe_accuracy(p, test, pick(labels, parts.test));
    return p;
  };
  const LinearProbe c_proxy = fit(proxy), c_true = fit(s), c_down = fit(y);
  SimilarityReport r;
  r.cos_proxy_true = cosine(c_proxy.weight, c_true.weight);
  r.cos_proxy_downstream = cosine(c_proxy.weight, c_down.weight);
  r.acc_proxy = c_proxy.test_accuracy;
  r.acc_true = c_true.test_accuracy;
  r.acc_downstream = c_down.test_accuracy;
  r.train_rows = static_cast<Index>(parts.train.size());
  r.test_rows = static_cast<Index>(parts.test.size());
  return r;
}

}  // namespace proxyfair
