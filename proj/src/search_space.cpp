#include "fairsearch/search_space.hpp"

#include <algorithm>
#include <cmath>

#include "fairsearch/ops.hpp"

namespace fairsearch {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "none",         "max_pool_3x3", "avg_pool_3x3", "skip_connect",
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
};

std::array<CellSpec::Edge, CellSpec::kNumEdges> make_edges() {
  std::array<CellSpec::Edge, CellSpec::kNumEdges> e{};
  std::size_t k = 0;
  for (int to = 2; to < 6; ++to) {
    for (int from = 0; from < to; ++from) e[k++] = {from, to};
  }
  return e;
}

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(OperationKind op) { return kOpNames[op_index(op)]; }

std::optional<OperationKind> op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumOps; ++i) {
    if (kOpNames[i] == name) return kAllOps[i];
  }
  return std::nullopt;
}

const std::array<CellSpec::Edge, CellSpec::kNumEdges>& CellSpec::edges() {
  static const auto e = make_edges();
  return e;
}

std::optional<std::size_t> CellSpec::edge_index(int from, int to) {
  const auto& e = edges();
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (e[k].from == from && e[k].to == to) return k;
  }
  return std::nullopt;
}

std::string_view gating_name(Gating g) { return g == Gating::softmax ? "softmax" : "sigmoid"; }

std::optional<Gating> gating_from_name(std::string_view name) {
  if (name == "softmax") return Gating::softmax;
  if (name == "sigmoid") return Gating::sigmoid;
  return std::nullopt;
}

std::string_view rule_name(DiscretizeRule r) {
  switch (r) {
    case DiscretizeRule::argmax: return "argmax";
    case DiscretizeRule::threshold: return "threshold";
    case DiscretizeRule::darts_top2: return "darts-top2";
  }
  return "argmax";
}

std::optional<DiscretizeRule> rule_from_name(std::string_view name) {
  if (name == "argmax") return DiscretizeRule::argmax;
  if (name == "threshold") return DiscretizeRule::threshold;
  if (name == "darts-top2") return DiscretizeRule::darts_top2;
  return std::nullopt;
}

Var mixed_edge_softmax(std::span<const Var> ops_out, Var alpha_edge) {
  return weighted_sum(ops_out, softmax(alpha_edge));
}

Var mixed_edge_sigmoid(std::span<const Var> ops_out, Var alpha_edge) {
  return weighted_sum(ops_out, sigmoid(alpha_edge));
}

Var mixed_edge(std::span<const Var> ops_out, Var alpha_edge, Gating gating) {
  return gating == Gating::softmax ? mixed_edge_softmax(ops_out, alpha_edge)
                                   : mixed_edge_sigmoid(ops_out, alpha_edge);
}

std::size_t Genotype::retained_count() const {
  auto live = [](OperationKind op) { return op != OperationKind::none; };
  return static_cast<std::size_t>(std::count_if(normal.begin(), normal.end(), live) +
                                  std::count_if(reduce.begin(), reduce.end(), live));
}

Tensor gate_values(const Tensor& alpha, Gating gating) {
  Tensor out(alpha.shape());
  const std::size_t K = alpha.shape().back();
  const std::size_t rows = alpha.size() / K;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = alpha.data().data() + r * K;
    double* g = out.data().data() + r * K;
    if (gating == Gating::sigmoid) {
      for (std::size_t k = 0; k < K; ++k) g[k] = sigmoid_of(a[k]);
    } else {
      const double mx = *std::max_element(a, a + K);
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += (g[k] = std::exp(a[k] - mx));
      for (std::size_t k = 0; k < K; ++k) g[k] /= z;
    }
  }
  return out;
}

namespace {

using EdgeOps = std::array<OperationKind, CellSpec::kNumEdges>;

// Strict '>' keeps the lowest canonical index on ties.
std::optional<std::size_t> best_column(const double* row, const std::vector<OperationKind>& cands,
                                       bool skip_none) {
  std::optional<std::size_t> best;
  for (auto op : cands) {
    if (skip_none && op == OperationKind::none) continue;
    const std::size_t c = op_index(op);
    if (!best || row[c] > row[*best]) best = c;
  }
  return best;
}

EdgeOps discretize_matrix(const Tensor& alpha, const DiscretizeOptions& opts,
                          const std::vector<OperationKind>& cands) {
  EdgeOps ops{};
  ops.fill(OperationKind::none);
  const auto& edges = CellSpec::edges();
  switch (opts.rule) {
    case DiscretizeRule::argmax:
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto best = best_column(alpha.data().data() + e * kNumOps, cands, false);
        if (best) ops[e] = kAllOps[*best];
      }
      break;
    case DiscretizeRule::threshold:
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const double* row = alpha.data().data() + e * kNumOps;
        const auto best = best_column(row, cands, true);
        if (best && sigmoid_of(row[*best]) > opts.threshold) ops[e] = kAllOps[*best];
      }
      break;
    case DiscretizeRule::darts_top2: {
      const Tensor w = gate_values(alpha, Gating::softmax);
      for (int to = 2; to < 6; ++to) {
        struct Scored {
          std::size_t edge;
          std::size_t col;
          double strength;
        };
        std::vector<Scored> incoming;
        for (std::size_t e = 0; e < edges.size(); ++e) {
          if (edges[e].to != to) continue;
          const double* row = w.data().data() + e * kNumOps;
          const auto best = best_column(row, cands, true);
          if (best) incoming.push_back({e, *best, row[*best]});
        }
        std::stable_sort(incoming.begin(), incoming.end(),
                         [](const Scored& a, const Scored& b) { return a.strength > b.strength; });
        for (std::size_t k = 0; k < std::min<std::size_t>(2, incoming.size()); ++k) {
          ops[incoming[k].edge] = kAllOps[incoming[k].col];
        }
      }
      break;
    }
  }
  return ops;
}

}  // namespace

Genotype discretize(const ArchParams& arch, const DiscretizeOptions& opts) {
  std::vector<OperationKind> cands = opts.candidates;
  if (cands.empty()) cands.assign(kAllOps.begin(), kAllOps.end());
  std::sort(cands.begin(), cands.end());
  Genotype g;
  g.normal = discretize_matrix(arch.normal, opts, cands);
  g.reduce = discretize_matrix(arch.reduce, opts, cands);
  g.discretize_rule = std::string(rule_name(opts.rule));
  g.gating_mode = opts.rule == DiscretizeRule::threshold ? "sigmoid" : "softmax";
  return g;
}

}  // namespace fairsearch
