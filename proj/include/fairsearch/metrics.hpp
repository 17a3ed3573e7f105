#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fairsearch {

/// Running confusion counts for a classifier.
class ClassificationMetrics {
 public:
  explicit ClassificationMetrics(std::size_t num_classes);

  void add(std::span<const int> predictions, std::span<const int> labels);

  std::size_t num_classes() const noexcept { return class_total_.size(); }
  std::size_t total() const noexcept { return total_; }
  std::size_t correct() const noexcept { return correct_; }
  std::size_t class_total(std::size_t c) const { return class_total_.at(c); }

  /// Throws std::logic_error when no samples were added.
  double overall() const;
  /// Mean recall over the classes that occur at least once.
  double balanced() const;
  /// Recall per class; empty for classes never seen.
  std::vector<std::optional<double>> per_class() const;

 private:
  std::size_t total_ = 0;
  std::size_t correct_ = 0;
  std::vector<std::size_t> class_total_;
  std::vector<std::size_t> class_correct_;
};

/// Row argmax with ties going to the lowest index.
std::vector<int> argmax_rows(std::span<const double> logits, std::size_t num_classes);

/// One row of the per-epoch metrics table. Unset optionals are written as
/// empty cells.
struct MetricsRecord {
  int epoch = 0;
  std::string mode;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> zero_one_loss;
  double lr = 0.0;
  std::optional<double> balanced_acc;
  std::optional<double> overall_acc;
  std::vector<std::optional<double>> per_class_acc;
  std::optional<double> wall_ms;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

std::string metrics_csv_header(std::size_t num_classes);
std::string metrics_csv_row(const MetricsRecord& r, std::size_t num_classes);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records,
                       std::size_t num_classes);

/// Shortest decimal that round-trips the double.
std::string format_number(double v);

}  // namespace fairsearch
