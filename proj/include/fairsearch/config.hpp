#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fairsearch/data.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/optim.hpp"
#include "fairsearch/search_space.hpp"
#include "fairsearch/supernet.hpp"
#include "fairsearch/train.hpp"
#include "json.hpp"

namespace fairsearch {

struct DataConfig {
  /// "synthetic" or "cifar10".
  std::string source = "synthetic";
  /// Directory holding data_batch_{1..5}.bin and test_batch.bin.
  std::string cifar_dir;
  double synthetic_noise = 0.35;
  /// Per-class size of the balanced test split; the long-tailed test split
  /// applies the training profile to this base.
  std::size_t test_base_count = 1000;
  /// Dataset directory written by make-lt and read by the other commands.
  std::string dir;
  /// Share of the training set given to the weight stream during search.
  double split_fraction = 0.5;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  SearchMode mode = SearchMode::darts;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  SupernetConfig supernet;
  OptimConfig optim;
  LossConfig loss;
  ImbalanceProfile profile;
  DataConfig data;
  /// Transform chain of the two self-supervised views.
  AugmentConfig ssl_augment;
  /// Crop and flip used while retraining.
  AugmentConfig retrain_augment{4, 0.5, 0.0, 0.0};
  DiscretizeRule discretize = DiscretizeRule::argmax;
  double threshold = 0.5;
  /// Child network depth and width; 0 keeps the supernet's value.
  std::size_t retrain_cells = 0;
  std::size_t retrain_channels = 0;
  std::size_t eval_batch = 128;
  bool log_wall_time = false;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  SupernetConfig child_config() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json config_to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys and ill-typed values throw
/// ParseError naming the key path.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Hash of the canonical JSON with out_dir and data.dir removed, so moving
/// a run does not change its identity.
std::string config_hash(const RunConfig& cfg);

}  // namespace fairsearch
