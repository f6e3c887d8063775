#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace starchnet {

/// K x K counts; rows are the actual class, columns the predicted class.
struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;

  std::size_t size() const { return counts.size(); }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t column_sum(std::size_t k) const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> actual, std::span<const std::size_t> predicted,
                                 std::size_t num_classes, std::vector<std::string> class_names = {});

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

/// Zero denominators give 0.0 rather than NaN.
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

/// Harmonic mean, 0 when p + r == 0.
double f1_score(double precision, double recall);

struct WeightedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Support-weighted means. Throws MetricError if every support is zero.
WeightedMetrics weighted_aggregate(std::span<const ClassMetrics> rows);

/// trace / total. Throws MetricError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

struct ClassReport {
  std::vector<ClassMetrics> rows;
  double accuracy = 0.0;
  WeightedMetrics weighted;
};

/// Aggregates are left at 0 when the matrix is empty.
ClassReport make_report(const ConfusionMatrix& cm);

enum class ReportFormat { Text, Csv, Json };
ReportFormat parse_report_format(const std::string& tag);

/// Rates at 6 decimals. csv: class,precision,recall,f1_score,support followed
/// by accuracy/weighted rows; json: {classes: [...], accuracy, weighted_*}.
std::string render_report(const ClassReport& report, ReportFormat format);
std::string render_report(const ConfusionMatrix& cm, const std::string& format);

nlohmann::json report_to_json(const ClassReport& report);

/// Header row of predicted class names (first cell "actual"), one row per
/// actual class.
std::string confusion_to_csv(const ConfusionMatrix& cm);
ConfusionMatrix confusion_from_csv(const std::string& text);

}  // namespace starchnet
