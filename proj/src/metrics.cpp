#include "fairsearch/metrics.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace fairsearch {

ClassificationMetrics::ClassificationMetrics(std::size_t num_classes)
    : class_total_(num_classes, 0), class_correct_(num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("metrics need at least one class");
}

void ClassificationMetrics::add(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(predictions.size()) +
                                " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= class_total_.size()) {
      throw std::out_of_range("metrics: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(class_total_.size()) + ")");
    }
    const bool hit = predictions[i] == y;
    ++total_;
    ++class_total_[static_cast<std::size_t>(y)];
    if (hit) {
      ++correct_;
      ++class_correct_[static_cast<std::size_t>(y)];
    }
  }
}

double ClassificationMetrics::overall() const {
  if (total_ == 0) throw std::logic_error("accuracy of an empty evaluation set is undefined");
  return static_cast<double>(correct_) / static_cast<double>(total_);
}

double ClassificationMetrics::balanced() const {
  if (total_ == 0) throw std::logic_error("accuracy of an empty evaluation set is undefined");
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < class_total_.size(); ++c) {
    if (class_total_[c] == 0) continue;
    sum += static_cast<double>(class_correct_[c]) / static_cast<double>(class_total_[c]);
    ++present;
  }
  return sum / static_cast<double>(present);
}

std::vector<std::optional<double>> ClassificationMetrics::per_class() const {
  std::vector<std::optional<double>> out(class_total_.size());
  for (std::size_t c = 0; c < class_total_.size(); ++c) {
    if (class_total_[c] > 0) {
      out[c] = static_cast<double>(class_correct_[c]) / static_cast<double>(class_total_[c]);
    }
  }
  return out;
}

std::vector<int> argmax_rows(std::span<const double> logits, std::size_t num_classes) {
  if (num_classes == 0 || logits.size() % num_classes != 0) {
    throw std::invalid_argument("argmax_rows: " + std::to_string(logits.size()) +
                                " values do not form rows of " + std::to_string(num_classes));
  }
  std::vector<int> out(logits.size() / num_classes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_classes; ++k) {
      if (logits[r * num_classes + k] > logits[r * num_classes + best]) best = k;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> json_opt(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_class_acc) per.push_back(opt_json(v));
  j = {{"epoch", r.epoch},
       {"mode", r.mode},
       {"train_loss", r.train_loss},
       {"val_loss", opt_json(r.val_loss)},
       {"zero_one_loss", opt_json(r.zero_one_loss)},
       {"lr", r.lr},
       {"balanced_acc", opt_json(r.balanced_acc)},
       {"overall_acc", opt_json(r.overall_acc)},
       {"per_class_acc", per},
       {"wall_ms", opt_json(r.wall_ms)}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.mode = j.at("mode").get<std::string>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = json_opt(j.at("val_loss"));
  r.zero_one_loss = json_opt(j.at("zero_one_loss"));
  r.lr = j.at("lr").get<double>();
  r.balanced_acc = json_opt(j.at("balanced_acc"));
  r.overall_acc = json_opt(j.at("overall_acc"));
  r.per_class_acc.clear();
  for (const auto& v : j.at("per_class_acc")) r.per_class_acc.push_back(json_opt(v));
  r.wall_ms = json_opt(j.at("wall_ms"));
}

std::string metrics_csv_header(std::size_t num_classes) {
  std::string s = "epoch,mode,train_loss,val_loss,zero_one_loss,lr,balanced_acc,overall_acc";
  for (std::size_t c = 0; c < num_classes; ++c) s += ",per_class_acc_" + std::to_string(c);
  s += ",wall_ms\n";
  return s;
}

std::string metrics_csv_row(const MetricsRecord& r, std::size_t num_classes) {
  std::string s = std::to_string(r.epoch) + "," + r.mode + "," + format_number(r.train_loss) + "," +
                  cell(r.val_loss) + "," + cell(r.zero_one_loss) + "," + format_number(r.lr) + "," +
                  cell(r.balanced_acc) + "," + cell(r.overall_acc);
  for (std::size_t c = 0; c < num_classes; ++c) {
    s += ",";
    if (c < r.per_class_acc.size()) s += cell(r.per_class_acc[c]);
  }
  s += "," + cell(r.wall_ms) + "\n";
  return s;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records,
                       std::size_t num_classes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << metrics_csv_header(num_classes);
  for (const auto& r : records) os << metrics_csv_row(r, num_classes);
}

}  // namespace fairsearch
