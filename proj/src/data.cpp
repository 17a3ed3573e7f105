#include "fairsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fairsearch {

std::string_view profile_name(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::balance: return "balance";
    case ProfileKind::step: return "step";
    case ProfileKind::exponential: return "exponential";
  }
  return "balance";
}

std::optional<ProfileKind> profile_from_name(std::string_view name) {
  if (name == "balance") return ProfileKind::balance;
  if (name == "step") return ProfileKind::step;
  if (name == "exponential") return ProfileKind::exponential;
  return std::nullopt;
}

void ImbalanceProfile::validate() const {
  if (num_classes < 2) throw std::invalid_argument("imbalance profile: need at least 2 classes");
  if (base_count == 0) throw std::invalid_argument("imbalance profile: base_count must be positive");
  if (kind != ProfileKind::balance && !(mu > 0.0 && mu <= 1.0)) {
    throw std::invalid_argument("imbalance profile: mu = " + std::to_string(mu) +
                                " outside (0, 1]");
  }
}

std::vector<std::size_t> class_counts(const ImbalanceProfile& profile) {
  profile.validate();
  const std::size_t C = profile.num_classes;
  const double base = static_cast<double>(profile.base_count);
  std::vector<std::size_t> counts(C, profile.base_count);
  auto floor_min1 = [](double v) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(v)));
  };
  switch (profile.kind) {
    case ProfileKind::balance:
      break;
    case ProfileKind::step:
      for (std::size_t i = C / 2; i < C; ++i) counts[i] = floor_min1(base * profile.mu);
      break;
    case ProfileKind::exponential:
      for (std::size_t i = 0; i < C; ++i) {
        const double e = static_cast<double>(i) / static_cast<double>(C - 1);
        counts[i] = floor_min1(base * std::pow(profile.mu, e));
      }
      break;
  }
  return counts;
}

std::vector<std::size_t> LabeledDataset::per_class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  out.provenance = provenance;
  out.pixels.reserve(indices.size() * image_bytes());
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("dataset subset index " + std::to_string(i));
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
    out.origin.push_back(origin.empty() ? i : origin[i]);
  }
  return out;
}

LabeledDataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
  LabeledDataset ds;
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.num_classes = 10;
  std::ostringstream prov;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open CIFAR-10 file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0) {
      throw std::runtime_error(path.string() + ": length " + std::to_string(bytes.size()) +
                               " is not a multiple of the " + std::to_string(kCifarRecordBytes) +
                               "-byte record size");
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t off = r * kCifarRecordBytes;
      if (bytes[off] > 9) {
        throw std::runtime_error(path.string() + ": label byte " + std::to_string(bytes[off]) +
                                 " > 9 at offset " + std::to_string(off));
      }
      ds.origin.push_back(ds.labels.size());
      ds.labels.push_back(bytes[off]);
      ds.pixels.insert(ds.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                       bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes));
    }
    prov << (prov.tellp() > 0 ? ";" : "") << path.string();
  }
  ds.provenance = prov.str();
  return ds;
}

void save_cifar10_binary(const LabeledDataset& ds, const std::filesystem::path& path) {
  if (ds.channels != 3 || ds.height != 32 || ds.width != 32) {
    throw std::invalid_argument("CIFAR-10 records need 3x32x32 images");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 9) {
      throw std::invalid_argument("CIFAR-10 label out of range at index " + std::to_string(i));
    }
    const char label = static_cast<char>(ds.labels[i]);
    out.write(&label, 1);
    const auto img = ds.image(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

LabeledDataset subsample_longtailed(const LabeledDataset& full, const ImbalanceProfile& profile,
                                    std::uint64_t seed) {
  if (profile.num_classes != full.num_classes) {
    throw std::invalid_argument("profile has " + std::to_string(profile.num_classes) +
                                " classes, dataset " + std::to_string(full.num_classes));
  }
  const auto counts = class_counts(profile);
  std::vector<std::vector<std::size_t>> by_class(full.num_classes);
  for (std::size_t i = 0; i < full.size(); ++i) {
    by_class[static_cast<std::size_t>(full.labels[i])].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < counts[c]) {
      throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[c].size()) + " samples, profile needs " +
                                  std::to_string(counts[c]));
    }
    std::mt19937_64 rng(derive_seed(seed, 0x5eed, c));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    chosen.insert(chosen.end(), by_class[c].begin(),
                  by_class[c].begin() + static_cast<std::ptrdiff_t>(counts[c]));
  }
  std::mt19937_64 rng(derive_seed(seed, 0xa11));
  std::shuffle(chosen.begin(), chosen.end(), rng);
  LabeledDataset out = full.subset(chosen);
  std::ostringstream prov;
  prov << full.provenance << " | " << profile_name(profile.kind) << "(mu=" << profile.mu
       << ", base=" << profile.base_count << ") seed=" << seed;
  out.provenance = prov.str();
  return out;
}

SearchSplit split_search_streams(const LabeledDataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split fraction " + std::to_string(fraction) + " outside (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(train.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int label = train.labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= train.num_classes) {
      throw std::out_of_range("sample " + std::to_string(i) + " has label " + std::to_string(label) +
                              " outside [0, " + std::to_string(train.num_classes) + ")");
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  SearchSplit split;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    const std::size_t n = idx.size();
    if (n == 0) continue;
    std::mt19937_64 rng(derive_seed(seed, 0x5b1, c));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_arch = 0;
    if (n >= 2) {
      n_arch = static_cast<std::size_t>(std::llround((1.0 - fraction) * static_cast<double>(n)));
      n_arch = std::clamp<std::size_t>(n_arch, 1, n - 1);
    }
    split.arch_indices.insert(split.arch_indices.end(), idx.begin(),
                              idx.begin() + static_cast<std::ptrdiff_t>(n_arch));
    split.weight_indices.insert(split.weight_indices.end(),
                                idx.begin() + static_cast<std::ptrdiff_t>(n_arch), idx.end());
  }
  std::sort(split.weight_indices.begin(), split.weight_indices.end());
  std::sort(split.arch_indices.begin(), split.arch_indices.end());
  return split;
}

SearchSplit split_search_streams_unlabeled(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split fraction " + std::to_string(fraction) + " outside (0, 1)");
  }
  if (n < 2) throw std::invalid_argument("cannot split fewer than 2 samples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5b2));
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_arch = static_cast<std::size_t>(std::llround((1.0 - fraction) * static_cast<double>(n)));
  n_arch = std::clamp<std::size_t>(n_arch, 1, n - 1);
  SearchSplit split;
  split.arch_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_arch));
  split.weight_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_arch), idx.end());
  std::sort(split.weight_indices.begin(), split.weight_indices.end());
  std::sort(split.arch_indices.begin(), split.arch_indices.end());
  return split;
}

BatchStream::BatchStream(std::vector<std::size_t> indices, std::size_t batch_size,
                         std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ == 0) throw std::invalid_argument("batch size must be positive");
}

std::vector<std::vector<std::size_t>> BatchStream::epoch_batches(int epoch) const {
  std::vector<std::size_t> order = indices_;
  std::mt19937_64 rng(derive_seed(seed_, 0xe90c, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += batch_size_) {
    const std::size_t e = std::min(order.size(), s + batch_size_);
    if (e - s < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

ChannelStats channel_stats(const LabeledDataset& ds) {
  ChannelStats st;
  if (ds.size() == 0 || ds.channels != 3) return st;
  const std::size_t hw = ds.height * ds.width;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.pixels.data() + i * ds.image_bytes() + c * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const double v = p[k] / 255.0;
        s += v;
        s2 += v * v;
      }
    }
    const double n = static_cast<double>(ds.size() * hw);
    st.mean[c] = s / n;
    st.stdev[c] = std::sqrt(std::max(s2 / n - st.mean[c] * st.mean[c], 1e-12));
  }
  return st;
}

Tensor image_to_unit(const LabeledDataset& ds, std::size_t index, std::size_t size) {
  if (size == 0 || ds.height % size != 0 || ds.width % size != 0) {
    throw std::invalid_argument("image size " + std::to_string(size) + " does not divide " +
                                std::to_string(ds.height) + "x" + std::to_string(ds.width));
  }
  const std::size_t fh = ds.height / size, fw = ds.width / size;
  const double inv = 1.0 / (255.0 * static_cast<double>(fh * fw));
  Tensor out(Shape{ds.channels, size, size});
  const auto img = ds.image(index);
  for (std::size_t c = 0; c < ds.channels; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < fh; ++dy) {
          for (std::size_t dx = 0; dx < fw; ++dx) {
            s += img[(c * ds.height + y * fh + dy) * ds.width + x * fw + dx];
          }
        }
        out[(c * size + y) * size + x] = s * inv;
      }
    }
  }
  return out;
}

namespace {

void normalize_into(const Tensor& unit, const ChannelStats& stats, double* dst) {
  const std::size_t C = unit.dim(0), hw = unit.dim(1) * unit.dim(2);
  for (std::size_t c = 0; c < C; ++c) {
    const double m = stats.mean[c % 3], s = stats.stdev[c % 3];
    for (std::size_t k = 0; k < hw; ++k) dst[c * hw + k] = (unit[c * hw + k] - m) / s;
  }
}

}  // namespace

Tensor make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices,
                  const ChannelStats& stats, std::size_t size) {
  Tensor out(Shape{indices.size(), ds.channels, size, size});
  const std::size_t per = ds.channels * size * size;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    normalize_into(image_to_unit(ds, indices[b], size), stats, out.data().data() + b * per);
  }
  return out;
}

std::vector<int> batch_labels(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(ds.labels[i]);
  return out;
}

namespace {

Tensor transform_view(const Tensor& unit, std::uint64_t seed, const AugmentConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t C = unit.dim(0), H = unit.dim(1), W = unit.dim(2);
  Tensor out = unit;

  if (cfg.crop_padding > 0) {
    const std::size_t p = cfg.crop_padding;
    std::uniform_int_distribution<std::size_t> off(0, 2 * p);
    const std::size_t oy = off(rng), ox = off(rng);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(p);
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(p);
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                              sx < static_cast<std::ptrdiff_t>(W);
          out[(c * H + y) * W + x] =
              inside ? unit[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)]
                     : 0.0;
        }
      }
    }
  }
  if (u01(rng) < cfg.flip_prob) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        double* row = out.data().data() + (c * H + y) * W;
        std::reverse(row, row + W);
      }
    }
  }
  if (cfg.jitter > 0.0) {
    std::uniform_real_distribution<double> factor(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    const double brightness = factor(rng);
    const double contrast = factor(rng);
    double mean = 0.0;
    for (double& v : out.data()) {
      v *= brightness;
      mean += v;
    }
    mean /= static_cast<double>(out.size());
    for (double& v : out.data()) v = std::clamp((v - mean) * contrast + mean, 0.0, 1.0);
  }
  if (C == 3 && u01(rng) < cfg.grayscale_prob) {
    const std::size_t hw = H * W;
    for (std::size_t k = 0; k < hw; ++k) {
      const double g = 0.299 * out[k] + 0.587 * out[hw + k] + 0.114 * out[2 * hw + k];
      out[k] = out[hw + k] = out[2 * hw + k] = g;
    }
  }
  return out;
}

}  // namespace

Tensor augment_view(const Tensor& unit_image, std::uint64_t seed, const ChannelStats& stats,
                    const AugmentConfig& cfg) {
  const Tensor v = transform_view(unit_image, seed, cfg);
  Tensor n(v.shape());
  normalize_into(v, stats, n.data().data());
  return n;
}

Tensor make_augmented_batch(const LabeledDataset& ds, std::span<const std::size_t> indices,
                            const ChannelStats& stats, std::size_t size, std::uint64_t seed,
                            const AugmentConfig& cfg) {
  Tensor out(Shape{indices.size(), ds.channels, size, size});
  const std::size_t per = ds.channels * size * size;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor v = augment_view(image_to_unit(ds, indices[b], size), derive_seed(seed, indices[b]),
                                  stats, cfg);
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return out;
}

AugmentedPair augment_pair(const Tensor& unit_image, std::size_t index, std::uint64_t seed,
                           const ChannelStats& stats, const AugmentConfig& cfg) {
  AugmentedPair pair;
  pair.source_index = index;
  pair.seed_a = derive_seed(seed, index, 1);
  pair.seed_b = derive_seed(seed, index, 2);
  pair.view_a = augment_view(unit_image, pair.seed_a, stats, cfg);
  pair.view_b = augment_view(unit_image, pair.seed_b, stats, cfg);
  return pair;
}

std::pair<Tensor, Tensor> make_view_batches(const LabeledDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const ChannelStats& stats, std::size_t size,
                                            std::uint64_t seed, const AugmentConfig& cfg) {
  Tensor a(Shape{indices.size(), ds.channels, size, size});
  Tensor b(a.shape());
  const std::size_t per = ds.channels * size * size;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto pair = augment_pair(image_to_unit(ds, indices[k], size), indices[k], seed, stats, cfg);
    std::copy(pair.view_a.data().begin(), pair.view_a.data().end(), a.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    std::copy(pair.view_b.data().begin(), pair.view_b.data().end(), b.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return {std::move(a), std::move(b)};
}

LabeledDataset make_synthetic_dataset(std::size_t num_classes, std::size_t per_class,
                                      std::uint64_t seed, std::size_t image_size, double noise) {
  if (num_classes == 0 || num_classes > 10) {
    throw std::invalid_argument("synthetic dataset supports 1..10 classes");
  }
  LabeledDataset ds;
  ds.channels = 3;
  ds.height = ds.width = image_size;
  ds.num_classes = num_classes;
  ds.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
  const std::size_t hw = image_size * image_size;
  std::vector<std::size_t> order(num_classes * per_class);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(derive_seed(seed, 0x51));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  ds.pixels.resize(order.size() * 3 * hw);
  ds.labels.resize(order.size());
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const std::size_t id = order[slot];
    const std::size_t cls = id % num_classes;
    std::mt19937_64 rng(derive_seed(seed, id, 0x1a6e));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Class identity: grating orientation and a colour tint, both jittered.
    const double angle = std::numbers::pi * (static_cast<double>(cls) + 0.35 * gauss(rng)) /
                         static_cast<double>(num_classes);
    const double freq = 2.0 * std::numbers::pi * (2.5 + 0.8 * u01(rng)) / static_cast<double>(image_size) * 2.0;
    const double phase = 2.0 * std::numbers::pi * u01(rng);
    const double amp = 0.25 + 0.15 * u01(rng);
    std::array<double, 3> tint{};
    for (std::size_t c = 0; c < 3; ++c) {
      tint[c] = 0.5 + 0.12 * std::cos(2.0 * std::numbers::pi *
                                      (static_cast<double>(cls) / static_cast<double>(num_classes) +
                                       static_cast<double>(c) / 3.0)) +
                0.08 * gauss(rng);
    }
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double t = freq * (ca * static_cast<double>(x) + sa * static_cast<double>(y)) + phase;
        const double g = amp * std::sin(t);
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = tint[c] + g + noise * gauss(rng) * 0.5;
          ds.pixels[slot * 3 * hw + c * hw + y * image_size + x] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      }
    }
    ds.labels[slot] = static_cast<int>(cls);
  }
  ds.origin.resize(ds.size());
  std::iota(ds.origin.begin(), ds.origin.end(), 0);
  return ds;
}

}  // namespace fairsearch
