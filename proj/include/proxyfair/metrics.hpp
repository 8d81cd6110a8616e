#pragma once

#include "proxyfair/artifacts.hpp"
#include "proxyfair/kernels.hpp"
#include "proxyfair/mitigation.hpp"

#include <span>

namespace proxyfair {

struct PredictionSet {
  Labels hard;
  std::vector<double> score;
  Labels y;
  Labels s;

  static PredictionSet from_scores(std::vector<double> scores, Labels y, Labels s, double threshold = 0.5);
  void validate() const;
};

// |P(Yhat = 1 | S = 0) - P(Yhat = 1 | S = 1)| on hard labels.
double spd(const PredictionSet& p);

struct OddsGaps {
  double dfpr = 0.0;
  double dfnr = 0.0;
  double eod = 0.0;  // (dfpr + dfnr) / 2
};
OddsGaps eod(const PredictionSet& p);

// Mean precision at each positive, scores descending, ties in original order.
double average_precision(std::span<const double> scores, std::span<const int> y);

struct FairnessReport {
  double ap = 0.0;
  double spd = 0.0;
  double dfpr = 0.0;
  double dfnr = 0.0;
  double eod = 0.0;
  std::array<Index, 2> group_sizes{0, 0};
  kernels::GroupConfusion confusion{};
  std::string provenance = "none";

  Json to_json() const;
};

FairnessReport evaluate(const PredictionSet& p, const std::string& provenance = "none");
// Scores the model on x and audits against the true sensitive labels s.
FairnessReport evaluate(const ClassifierModel& model, const Matrix& x, const Labels& y, const Labels& s);

// Mean and sample standard deviation over runs.
struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};
Summary summarize(std::span<const double> values);

struct TableCell {
  Summary ap, spd, eod;
  int runs = 0;
};
TableCell summarize_reports(std::span<const FairnessReport> reports);

struct Table1Row {
  std::string label;
  TableCell cell;
};
std::string table1_markdown(std::span<const Table1Row> rows);

struct Table2Entry {
  std::string embedder;   // display name
  std::string clusterer;  // display name
  TableCell fair_mixup;
  TableCell adversarial;
};
std::string table2_markdown(std::span<const Table2Entry> entries);

Json cell_json(const TableCell& cell);

}  // namespace proxyfair
