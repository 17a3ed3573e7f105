#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairsearch/tape.hpp"

namespace fairsearch {

/// Candidate operations in canonical order. The index doubles as the
/// column of the architecture matrices.
enum class OperationKind : std::uint8_t {
  none = 0,
  max_pool_3x3,
  avg_pool_3x3,
  skip_connect,
  sep_conv_3x3,
  sep_conv_5x5,
  dil_conv_3x3,
  dil_conv_5x5,
};

inline constexpr std::size_t kNumOps = 8;

inline constexpr std::array<OperationKind, kNumOps> kAllOps = {
    OperationKind::none,         OperationKind::max_pool_3x3, OperationKind::avg_pool_3x3,
    OperationKind::skip_connect, OperationKind::sep_conv_3x3, OperationKind::sep_conv_5x5,
    OperationKind::dil_conv_3x3, OperationKind::dil_conv_5x5,
};

constexpr std::size_t op_index(OperationKind op) { return static_cast<std::size_t>(op); }
std::string_view op_name(OperationKind op);
std::optional<OperationKind> op_from_name(std::string_view name);

/// Fixed cell topology: nodes 0,1 are inputs, 2..5 intermediates, 6 the
/// channel concatenation of 2..5.
struct CellSpec {
  static constexpr std::size_t kNumInputs = 2;
  static constexpr std::size_t kNumIntermediate = 4;
  static constexpr std::size_t kNumEdges = 14;
  static constexpr int kOutputNode = 6;

  struct Edge {
    int from;
    int to;
  };

  /// Edges grouped by destination node, sources ascending.
  static const std::array<Edge, kNumEdges>& edges();
  static std::optional<std::size_t> edge_index(int from, int to);
};

enum class CellKind { normal, reduce };
enum class Gating { softmax, sigmoid };

std::string_view gating_name(Gating g);
std::optional<Gating> gating_from_name(std::string_view name);

/// Per-edge, per-operation attention logits for both cell kinds, shared by
/// every cell of that kind.
struct ArchParams {
  Tensor normal{Shape{CellSpec::kNumEdges, kNumOps}};
  Tensor reduce{Shape{CellSpec::kNumEdges, kNumOps}};

  static ArchParams zeros() { return {}; }
  Tensor& of(CellKind kind) { return kind == CellKind::normal ? normal : reduce; }
  const Tensor& of(CellKind kind) const { return kind == CellKind::normal ? normal : reduce; }
  friend bool operator==(const ArchParams&, const ArchParams&) = default;
};

/// sum_o softmax(alpha)_o * ops_out[o]. Undefined entries of ops_out are
/// zero outputs (the 'none' op).
Var mixed_edge_softmax(std::span<const Var> ops_out, Var alpha_edge);
/// sum_o sigmoid(alpha_o) * ops_out[o], gates independent of each other.
Var mixed_edge_sigmoid(std::span<const Var> ops_out, Var alpha_edge);
Var mixed_edge(std::span<const Var> ops_out, Var alpha_edge, Gating gating);

enum class DiscretizeRule { argmax, threshold, darts_top2 };

std::string_view rule_name(DiscretizeRule r);
std::optional<DiscretizeRule> rule_from_name(std::string_view name);

struct DiscretizeOptions {
  DiscretizeRule rule = DiscretizeRule::argmax;
  double threshold = 0.5;
  /// Ops eligible to win; empty means all eight.
  std::vector<OperationKind> candidates;
};

struct Genotype {
  static constexpr int kVersion = 1;

  std::array<OperationKind, CellSpec::kNumEdges> normal{};
  std::array<OperationKind, CellSpec::kNumEdges> reduce{};
  std::string gating_mode = "softmax";
  std::string discretize_rule = "argmax";
  std::string config_hash;

  const std::array<OperationKind, CellSpec::kNumEdges>& of(CellKind kind) const {
    return kind == CellKind::normal ? normal : reduce;
  }
  std::size_t retained_count() const;
  friend bool operator==(const Genotype&, const Genotype&) = default;
};

Genotype discretize(const ArchParams& arch, const DiscretizeOptions& opts = {});

/// Per-edge gate values (softmax rows or elementwise sigmoid) of one matrix.
Tensor gate_values(const Tensor& alpha, Gating gating);

}  // namespace fairsearch
