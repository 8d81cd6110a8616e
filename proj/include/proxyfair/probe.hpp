#pragma once

#include "proxyfair/artifacts.hpp"
#include "proxyfair/common.hpp"

#include <span>

namespace proxyfair {

struct ProbeConfig {
  double l2 = 1e-4;
  int max_iterations = 100;
  double tolerance = 1e-10;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

struct LinearProbe {
  Vector weight;
  double bias = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int iterations = 0;
};

// L2-regularised logistic regression, mean BCE + l2/2 ||w||^2 (bias free),
// minimised with damped Newton steps from zero. Positive class is label 1.
LinearProbe train_probe(const Matrix& x, std::span<const int> labels, const ProbeConfig& config = {});
double probe_accuracy(const LinearProbe& probe, const Matrix& x, std::span<const int> labels);

// dot(a, b) / (|a| |b|)
double cosine(const Vector& a, const Vector& b);

struct SimilarityReport {
  double cos_proxy_true = 0.0;
  double cos_proxy_downstream = 0.0;
  double acc_proxy = 0.0;
  double acc_true = 0.0;
  double acc_downstream = 0.0;
  Index train_rows = 0, test_rows = 0;

  Json to_json() const;
};

// Trains proxy/true/downstream probes on the same standardised inputs and
// split; accuracies are on the held-out rows.
SimilarityReport analyze(const Matrix& embeddings, std::span<const int> proxy, std::span<const int> s,
                         std::span<const int> y, const ProbeConfig& config = {});

}  // namespace proxyfair
