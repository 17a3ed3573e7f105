#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fairsearch/tensor.hpp"

namespace fairsearch {

enum class ProfileKind { balance, step, exponential };

std::string_view profile_name(ProfileKind kind);
std::optional<ProfileKind> profile_from_name(std::string_view name);

/// Per-class sample budget. Step halves the classes: the latter half gets
/// base_count * mu. Exponential gives class i base_count * mu^(i/(C-1)).
struct ImbalanceProfile {
  ProfileKind kind = ProfileKind::balance;
  double mu = 1.0;
  std::size_t base_count = 5000;
  std::size_t num_classes = 10;

  void validate() const;
  friend bool operator==(const ImbalanceProfile&, const ImbalanceProfile&) = default;
};

/// floor(...) with a minimum of 1 per class.
std::vector<std::size_t> class_counts(const ImbalanceProfile& profile);

/// Byte images [N, channels, height, width] with integer labels.
struct LabeledDataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  /// Index of each sample in the dataset it was drawn from.
  std::vector<std::size_t> origin;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_bytes() const noexcept { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_bytes(), image_bytes()};
  }
  std::vector<std::size_t> per_class_counts() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

/// Record layout of the CIFAR-10 binary batches: 1 label byte then 3072
/// pixel bytes (R, G, B planes of 32x32, row-major).
inline constexpr std::size_t kCifarRecordBytes = 3073;

LabeledDataset load_cifar10_binary(std::span<const std::filesystem::path> paths);
void save_cifar10_binary(const LabeledDataset& ds, const std::filesystem::path& path);

/// Per class, the first n_i of a seeded permutation of that class's samples;
/// the union is shuffled with the same seed.
LabeledDataset subsample_longtailed(const LabeledDataset& full, const ImbalanceProfile& profile,
                                    std::uint64_t seed);

/// Disjoint index sets for the weight and architecture streams.
struct SearchSplit {
  std::vector<std::size_t> weight_indices;
  std::vector<std::size_t> arch_indices;
};

/// Per class, round((1 - fraction) * n) samples (clamped to [1, n-1]) go to
/// the architecture stream and the rest to the weight stream. Singleton
/// classes go to the weight stream.
SearchSplit split_search_streams(const LabeledDataset& train, double fraction, std::uint64_t seed);

/// Label-blind variant over `n` samples: one seeded permutation, with
/// round((1 - fraction) * n) samples (clamped to [1, n-1]) for the
/// architecture stream.
SearchSplit split_search_streams_unlabeled(std::size_t n, double fraction, std::uint64_t seed);

/// Shuffled mini-batches over a fixed index set, reshuffled each epoch from
/// a seed derived from (seed, epoch). Batches smaller than 2 are dropped.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> indices, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::vector<std::size_t>> epoch_batches(int epoch) const;
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

 private:
  std::vector<std::size_t> indices_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

/// Channel mean/std of pixel values scaled to [0,1].
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stdev{1.0, 1.0, 1.0};
};

ChannelStats channel_stats(const LabeledDataset& ds);

/// Pixel scale to [0,1] plus box-filter downsampling to `size` (the source
/// extent must be a multiple of `size`). Result [channels, size, size].
Tensor image_to_unit(const LabeledDataset& ds, std::size_t index, std::size_t size);

/// Normalized batch [B, channels, size, size].
Tensor make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices,
                  const ChannelStats& stats, std::size_t size);
std::vector<int> batch_labels(const LabeledDataset& ds, std::span<const std::size_t> indices);

struct AugmentConfig {
  std::size_t crop_padding = 4;
  double flip_prob = 0.5;
  double jitter = 0.4;
  double grayscale_prob = 0.2;

  static AugmentConfig identity() { return {0, 0.0, 0.0, 0.0}; }
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct AugmentedPair {
  Tensor view_a;  // [channels, size, size], normalized
  Tensor view_b;
  std::size_t source_index = 0;
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
};

/// Two independently sampled transform chains over one unit-scaled image.
/// Fully determined by (seed, index) with view seeds derived per view.
AugmentedPair augment_pair(const Tensor& unit_image, std::size_t index, std::uint64_t seed,
                           const ChannelStats& stats, const AugmentConfig& cfg = {});

/// One transformed and normalized view of a unit-scaled image.
Tensor augment_view(const Tensor& unit_image, std::uint64_t seed, const ChannelStats& stats,
                    const AugmentConfig& cfg);

/// Like make_batch, with each sample passed through augment_view under a
/// seed derived from (seed, sample index).
Tensor make_augmented_batch(const LabeledDataset& ds, std::span<const std::size_t> indices,
                            const ChannelStats& stats, std::size_t size, std::uint64_t seed,
                            const AugmentConfig& cfg);

/// View batches [B, channels, size, size] for the self-supervised loss.
/// Only pixels are read; labels are never touched.
std::pair<Tensor, Tensor> make_view_batches(const LabeledDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const ChannelStats& stats, std::size_t size,
                                            std::uint64_t seed, const AugmentConfig& cfg);

/// Procedural class-conditioned images (oriented colored gratings under
/// noise) in CIFAR geometry, used where the real archive is unavailable.
LabeledDataset make_synthetic_dataset(std::size_t num_classes, std::size_t per_class,
                                      std::uint64_t seed, std::size_t image_size = 32,
                                      double noise = 0.35);

/// splitmix64-style mixing of several words into one seed.
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace fairsearch
