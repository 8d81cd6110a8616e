#include "proxyfair/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace proxyfair {

PredictionSet PredictionSet::from_scores(std::vector<double> scores, Labels y, Labels s, double threshold) {
  PredictionSet p;
  p.hard = hard_labels(scores, threshold);
  p.score = std::move(scores);
  p.y = std::move(y);
  p.s = std::move(s);
  p.validate();
  return p;
}

void PredictionSet::validate() const {
  const std::size_t n = hard.size();
  if (y.size() != n || s.size() != n || (!score.empty() && score.size() != n))
    throw ShapeError("prediction set: lengths differ (hard " + std::to_string(n) + ", y " + std::to_string(y.size()) +
                     ", s " + std::to_string(s.size()) + ", score " + std::to_string(score.size()) + ")");
  auto binary = [](const Labels& v, const char* name) {
    for (int x : v)
      if (x != 0 && x != 1) throw Error(std::string("prediction set: ") + name + " must be 0 or 1");
  };
  binary(hard, "predicted labels");
  binary(y, "targets");
  binary(s, "groups");
}

double spd(const PredictionSet& p) {
  p.validate();
  double pos[2] = {0, 0}, count[2] = {0, 0};
  for (std::size_t i = 0; i < p.s.size(); ++i) {
    count[p.s[i]] += 1;
    pos[p.s[i]] += p.hard[i];
  }
  for (int g = 0; g < 2; ++g)
    if (count[g] == 0) throw Error("spd: group S=" + std::to_string(g) + " is empty");
  return std::abs(pos[0] / count[0] - pos[1] / count[1]);
}

namespace {

OddsGaps gaps_from(const kernels::GroupConfusion& c) {
  double fpr[2], fnr[2];
  for (int g = 0; g < 2; ++g) {
    const auto& t = c[static_cast<std::size_t>(g)];
    if (t.fp + t.tn == 0)
      throw Error("eod: FPR undefined, group S=" + std::to_string(g) + " has no Y=0 rows");
    if (t.tp + t.fn == 0)
      throw Error("eod: FNR undefined, group S=" + std::to_string(g) + " has no Y=1 rows");
    fpr[g] = static_cast<double>(t.fp) / static_cast<double>(t.fp + t.tn);
    fnr[g] = static_cast<double>(t.fn) / static_cast<double>(t.fn + t.tp);
  }
  OddsGaps out;
  out.dfpr = std::abs(fpr[0] - fpr[1]);
  out.dfnr = std::abs(fnr[0] - fnr[1]);
  out.eod = (out.dfpr + out.dfnr) / 2.0;
  return out;
}

}  // namespace

OddsGaps eod(const PredictionSet& p) {
  p.validate();
  return gaps_from(kernels::group_confusion(p.hard, p.y, p.s));
}

double average_precision(std::span<const double> scores, std::span<const int> y) {
  if (scores.size() != y.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (y[order[rank]] != 1) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(rank + 1);
  }
  if (hits == 0.0) throw Error("average_precision: no positive rows");
  return sum / hits;
}

Json FairnessReport::to_json() const {
  Json confusion_json = Json::array();
  for (const auto& c : confusion) confusion_json.push_back({{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}});
  return Json{{"ap", ap},
              {"spd", spd},
              {"dfpr", dfpr},
              {"dfnr", dfnr},
              {"eod", eod},
              {"group_sizes", {group_sizes[0], group_sizes[1]}},
              {"confusion", confusion_json},
              {"provenance", provenance}};
}

FairnessReport evaluate(const PredictionSet& p, const std::string& provenance) {
  p.validate();
  FairnessReport r;
  r.provenance = provenance;
  r.confusion = kernels::group_confusion(p.hard, p.y, p.s);
  for (int g = 0; g < 2; ++g) r.group_sizes[static_cast<std::size_t>(g)] = r.confusion[static_cast<std::size_t>(g)].total();
  r.spd = spd(p);
  const OddsGaps gaps = gaps_from(r.confusion);
  r.dfpr = gaps.dfpr;
  r.dfnr = gaps.dfnr;
  r.eod = gaps.eod;
  if (p.score.empty()) throw Error("evaluate: scores are required for average precision");
  r.ap = average_precision(p.score, p.y);
  return r;
}

FairnessReport evaluate(const ClassifierModel& model, const Matrix& x, const Labels& y, const Labels& s) {
  return evaluate(PredictionSet::from_scores(predict(model, x), y, s), model.provenance);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

TableCell summarize_reports(std::span<const FairnessReport> reports) {
  std::vector<double> ap, sp, eo;
  for (const auto& r : reports) {
    ap.push_back(r.ap);
    sp.push_back(r.spd);
    eo.push_back(r.eod);
  }
  return {summarize(ap), summarize(sp), summarize(eo), static_cast<int>(reports.size())};
}

namespace {

std::string pm(const Summary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", s.mean, s.stddev);
  return buf;
}

}  // namespace

std::string table1_markdown(std::span<const Table1Row> rows) {
  std::ostringstream out;
  out << "| Bias Mitigation Algorithm | Average Precision | SPD | EOD |\n";
  out << "|---|---|---|---|\n";
  for (const auto& r : rows)
    out << "| " << r.label << " | " << pm(r.cell.ap) << " | " << pm(r.cell.spd) << " | " << pm(r.cell.eod) << " |\n";
  return out.str();
}

std::string table2_markdown(std::span<const Table2Entry> entries) {
  std::ostringstream out;
  out << "| | | FairMixup | | | Adversarial Debiasing | | |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  out << "| Embedding | Clustering | Avg Precision | SPD | EOD | Avg Precision | SPD | EOD |\n";
  std::string previous;
  for (const auto& e : entries) {
    const std::string shown = e.embedder == previous ? "" : e.embedder;
    previous = e.embedder;
    out << "| " << shown << " | " << e.clusterer << " | " << pm(e.fair_mixup.ap) << " | " << pm(e.fair_mixup.spd)
        << " | " << pm(e.fair_mixup.eod) << " | " << pm(e.adversarial.ap) << " | " << pm(e.adversarial.spd) << " | "
        << pm(e.adversarial.eod) << " |\n";
  }
  return out.str();
}

Json cell_json(const TableCell& cell) {
  auto sj = [](const Summary& s) { return Json{{"mean", s.mean}, {"std", s.stddev}}; };
  return Json{{"ap", sj(cell.ap)}, {"spd", sj(cell.spd)}, {"eod", sj(cell.eod)}, {"runs", cell.runs}};
}

}  // namespace proxyfair
