#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fairsearch/search_space.hpp"

namespace fairsearch {

struct SupernetConfig {
  std::size_t num_cells = 8;
  std::size_t init_channels = 8;
  std::size_t num_classes = 10;
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  /// Projector output width.
  std::size_t embedding_dim = 64;
  bool batch_norm = true;
  /// Ops instantiated on every edge; empty means all eight.
  std::vector<OperationKind> candidates;

  /// Distinct cell indices floor(n/3) and floor(2n/3), ascending.
  std::vector<std::size_t> reduction_positions() const;
  bool is_reduction(std::size_t cell) const;
  /// Smallest image extent the reduction schedule accepts.
  std::size_t min_image_size() const;
  std::vector<OperationKind> candidate_ops() const;
  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;

  friend bool operator==(const SupernetConfig&, const SupernetConfig&) = default;
};

/// Named parameter tensors in creation order.
class ParameterStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Tensor& at(const std::string& name) { return entries_[index_of(name)].second; }
  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].second; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::pair<std::string, Tensor>& operator[](std::size_t i) { return entries_[i]; }
  const std::pair<std::string, Tensor>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weights of either the gated supernet (no genotype) or a discrete child
/// network derived from a genotype.
struct NetworkWeights {
  SupernetConfig config;
  std::optional<Genotype> genotype;
  ParameterStore params;

  bool is_child() const { return genotype.has_value(); }
};

NetworkWeights build_supernet(const SupernetConfig& cfg, std::uint64_t seed);
NetworkWeights derive_child(const Genotype& genotype, const SupernetConfig& cfg,
                            std::uint64_t seed);

/// Tape leaves for one forward pass.
struct Binding {
  std::vector<Var> params;  // parallel to NetworkWeights::params
  Var alpha_normal;
  Var alpha_reduce;
  Var images;
};

/// Records parameters (and architecture logits for the supernet) on `tape`.
/// `arch` may be null for child networks.
Binding bind(Tape& tape, const NetworkWeights& net, const ArchParams* arch,
             const Tensor& images, bool weights_grad, bool arch_grad);

/// Stem and cells followed by global average pooling: [N, C_last].
Var forward_features(const NetworkWeights& net, const Binding& b, Gating gating);
/// Logits [N, num_classes].
Var forward_supervised(const NetworkWeights& net, const Binding& b, Gating gating);
/// Projector embeddings [N, embedding_dim].
Var forward_projection(const NetworkWeights& net, const Binding& b, Gating gating);

/// Per-cell record of the intermediate node shapes seen in one forward pass.
struct CellTrace {
  bool reduction = false;
  std::vector<Shape> node_shapes;  // nodes 2..5
  Shape output_shape;
};

/// Runs the feature extractor and reports every cell's node shapes.
std::vector<CellTrace> trace_cells(const NetworkWeights& net, const Binding& b, Gating gating);

/// Copies every same-named, same-shaped tensor from `src` into `dst`.
std::size_t copy_matching_params(const ParameterStore& src, ParameterStore& dst);

/// Spec string for error messages, e.g. "8 cells, C=8, 10 classes, 32px".
std::string describe(const SupernetConfig& cfg);

}  // namespace fairsearch
