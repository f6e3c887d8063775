#include "starchnet/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "starchnet/error.hpp"

namespace starchnet {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t t = 0;
  for (auto v : counts.at(k)) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t k) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row.at(k);
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> actual, std::span<const std::size_t> predicted,
                                 std::size_t num_classes, std::vector<std::string> class_names) {
  if (actual.size() != predicted.size()) {
    throw ArgumentError("actual has " + std::to_string(actual.size()) + " labels but predicted has " +
                        std::to_string(predicted.size()));
  }
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw ArgumentError("got " + std::to_string(class_names.size()) + " class names for " +
                        std::to_string(num_classes) + " classes");
  }
  ConfusionMatrix cm;
  cm.counts.assign(num_classes, std::vector<std::uint64_t>(num_classes, 0));
  if (class_names.empty()) {
    for (std::size_t k = 0; k < num_classes; ++k) class_names.push_back(std::to_string(k));
  }
  cm.class_names = std::move(class_names);
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] >= num_classes || predicted[i] >= num_classes) {
      throw ArgumentError("sample " + std::to_string(i) + " has class index " +
                          std::to_string(std::max(actual[i], predicted[i])) + " >= K=" + std::to_string(num_classes));
    }
    ++cm.counts[actual[i]][predicted[i]];
  }
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> rows;
  for (std::size_t k = 0; k < cm.size(); ++k) {
    ClassMetrics m;
    m.name = k < cm.class_names.size() ? cm.class_names[k] : std::to_string(k);
    m.support = cm.row_sum(k);
    m.precision = ratio(cm.counts[k][k], cm.column_sum(k));
    m.recall = ratio(cm.counts[k][k], m.support);
    m.f1 = f1_score(m.precision, m.recall);
    rows.push_back(std::move(m));
  }
  return rows;
}

WeightedMetrics weighted_aggregate(std::span<const ClassMetrics> rows) {
  double total = 0.0;
  WeightedMetrics w;
  for (const auto& r : rows) {
    const auto s = static_cast<double>(r.support);
    total += s;
    w.precision += r.precision * s;
    w.recall += r.recall * s;
    w.f1 += r.f1 * s;
  }
  if (total == 0.0) throw MetricError("weighted metrics need at least one class with nonzero support");
  w.precision /= total;
  w.recall /= total;
  w.f1 /= total;
  return w;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw MetricError("accuracy of an empty confusion matrix is undefined");
  std::uint64_t trace = 0;
  for (std::size_t k = 0; k < cm.size(); ++k) trace += cm.counts[k][k];
  return ratio(trace, total);
}

ClassReport make_report(const ConfusionMatrix& cm) {
  ClassReport r;
  r.rows = per_class_metrics(cm);
  if (cm.total() > 0) {
    r.accuracy = accuracy(cm);
    r.weighted = weighted_aggregate(r.rows);
  }
  return r;
}

ReportFormat parse_report_format(const std::string& tag) {
  if (tag == "text") return ReportFormat::Text;
  if (tag == "csv") return ReportFormat::Csv;
  if (tag == "json") return ReportFormat::Json;
  throw ArgumentError("unknown report format '" + tag + "' (expected text, csv or json)");
}

nlohmann::json report_to_json(const ClassReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& r : report.rows) {
    classes.push_back({{"class", r.name},
                       {"precision", r.precision},
                       {"recall", r.recall},
                       {"f1_score", r.f1},
                       {"support", r.support}});
  }
  return {{"classes", std::move(classes)},
          {"accuracy", report.accuracy},
          {"weighted_precision", report.weighted.precision},
          {"weighted_recall", report.weighted.recall},
          {"weighted_f1_score", report.weighted.f1}};
}

std::string render_report(const ClassReport& report, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::Csv:
      os << "class,precision,recall,f1_score,support\n";
      for (const auto& r : report.rows) {
        os << r.name << ',' << fixed6(r.precision) << ',' << fixed6(r.recall) << ',' << fixed6(r.f1) << ','
           << r.support << '\n';
      }
      if (!report.rows.empty()) {
        os << "accuracy,,," << fixed6(report.accuracy) << ",\n";
        os << "weighted," << fixed6(report.weighted.precision) << ',' << fixed6(report.weighted.recall) << ','
           << fixed6(report.weighted.f1) << ",\n";
      }
      break;
    case ReportFormat::Text: {
      char line[256];
      std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %8s\n", "class", "precision", "recall", "f1_score",
                    "support");
      os << line;
      for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%-16s %10.6f %10.6f %10.6f %8llu\n", r.name.c_str(), r.precision,
                      r.recall, r.f1, static_cast<unsigned long long>(r.support));
        os << line;
      }
      if (!report.rows.empty()) {
        std::snprintf(line, sizeof line, "\n%-16s %10.6f\n", "accuracy", report.accuracy);
        os << line;
        std::snprintf(line, sizeof line, "%-16s %10.6f %10.6f %10.6f\n", "weighted", report.weighted.precision,
                      report.weighted.recall, report.weighted.f1);
        os << line;
      }
      break;
    }
    case ReportFormat::Json:
      os << report_to_json(report).dump(2) << '\n';
      break;
  }
  return os.str();
}

std::string render_report(const ConfusionMatrix& cm, const std::string& format) {
  const auto f = parse_report_format(format);
  return render_report(make_report(cm), f);
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "actual";
  for (const auto& name : cm.class_names) os << ',' << name;
  os << '\n';
  for (std::size_t r = 0; r < cm.size(); ++r) {
    os << cm.class_names.at(r);
    for (auto v : cm.counts[r]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

ConfusionMatrix confusion_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::vector<std::string>> lines;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(split_csv_line(line));
  }
  if (lines.empty()) throw ArgumentError("confusion CSV is empty");
  ConfusionMatrix cm;
  cm.class_names.assign(lines[0].begin() + 1, lines[0].end());
  const std::size_t k = cm.class_names.size();
  if (lines.size() != k + 1) {
    throw ArgumentError("confusion CSV has " + std::to_string(k) + " columns but " +
                        std::to_string(lines.size() - 1) + " rows");
  }
  for (std::size_t r = 0; r < k; ++r) {
    const auto& cells = lines[r + 1];
    if (cells.size() != k + 1) throw ArgumentError("confusion CSV row " + std::to_string(r + 1) + " has wrong width");
    if (cells[0] != cm.class_names[r]) {
      throw ArgumentError("confusion CSV row " + std::to_string(r + 1) + " is '" + cells[0] + "', expected '" +
                          cm.class_names[r] + "'");
    }
    std::vector<std::uint64_t> row;
    for (std::size_t c = 1; c <= k; ++c) {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size() || cells[c][0] == '-') {
        throw ArgumentError("confusion CSV cell '" + cells[c] + "' is not a non-negative integer");
      }
      row.push_back(v);
    }
    cm.counts.push_back(std::move(row));
  }
  return cm;
}

}  // namespace starchnet
