#include "fairsearch/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fairsearch/ops.hpp"

namespace fairsearch {

std::vector<std::size_t> SupernetConfig::reduction_positions() const {
  std::vector<std::size_t> pos{num_cells / 3, 2 * num_cells / 3};
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
  return pos;
}

bool SupernetConfig::is_reduction(std::size_t cell) const {
  const auto pos = reduction_positions();
  return std::find(pos.begin(), pos.end(), cell) != pos.end();
}

std::size_t SupernetConfig::min_image_size() const {
  return std::size_t{1} << reduction_positions().size();
}

std::vector<OperationKind> SupernetConfig::candidate_ops() const {
  if (candidates.empty()) return {kAllOps.begin(), kAllOps.end()};
  auto c = candidates;
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

void SupernetConfig::validate() const {
  if (num_cells == 0 || init_channels == 0 || num_classes == 0 || image_size == 0 ||
      in_channels == 0 || embedding_dim == 0) {
    throw std::invalid_argument("supernet config: all sizes must be positive (" +
                                describe(*this) + ")");
  }
  const std::size_t min = min_image_size();
  if (image_size < min || image_size % min != 0) {
    throw std::invalid_argument("supernet config: image size " + std::to_string(image_size) +
                                " too small for the reduction schedule; need a multiple of " +
                                std::to_string(min) + " (minimum " + std::to_string(min) + ")");
  }
  const auto c = candidate_ops();
  if (std::all_of(c.begin(), c.end(), [](OperationKind op) { return op == OperationKind::none; })) {
    throw std::invalid_argument("supernet config: candidate set has no operation besides 'none'");
  }
}

std::string describe(const SupernetConfig& cfg) {
  std::ostringstream os;
  os << cfg.num_cells << " cells, C=" << cfg.init_channels << ", " << cfg.num_classes
     << " classes, " << cfg.image_size << "px";
  return os.str();
}

void ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

std::size_t copy_matching_params(const ParameterStore& src, ParameterStore& dst) {
  std::size_t copied = 0;
  for (auto& [name, t] : dst) {
    if (!src.contains(name)) continue;
    const Tensor& s = src.at(name);
    if (s.shape() != t.shape()) continue;
    t = s;
    ++copied;
  }
  return copied;
}

namespace {

// Walks the network structure once; the same walk drives parameter creation
// and the forward pass so their naming can never drift apart.
class Builder {
 public:
  Builder(const SupernetConfig& cfg, const Genotype* genotype)
      : cfg_(cfg), genotype_(genotype) {}

  // Parameter creation.
  void create(ParameterStore& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    auto conv = [&](const std::string& name, std::size_t out_c, std::size_t in_c_per_group,
                    std::size_t k) {
      Tensor w(Shape{out_c, in_c_per_group, k, k});
      const double stdev = std::sqrt(2.0 / static_cast<double>(in_c_per_group * k * k));
      for (auto& v : w.data()) v = stdev * normal(rng);
      store.add(name, std::move(w));
    };
    auto bn = [&](const std::string& name, std::size_t c) {
      if (!cfg_.batch_norm) return;
      store.add(name + ".gamma", Tensor(Shape{c}, 1.0));
      store.add(name + ".beta", Tensor(Shape{c}, 0.0));
    };
    auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
      Tensor w(Shape{in, out});
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (auto& v : w.data()) v = bound * uniform(rng);
      store.add(name + ".weight", std::move(w));
      store.add(name + ".bias", Tensor(Shape{out}, 0.0));
    };
    Visitor v;
    v.conv = conv;
    v.bn = bn;
    v.dense = dense;
    walk(v);
  }

  struct Visitor {
    std::function<void(const std::string&, std::size_t, std::size_t, std::size_t)> conv;
    std::function<void(const std::string&, std::size_t)> bn;
    std::function<void(const std::string&, std::size_t, std::size_t)> dense;
  };

  void walk(const Visitor& v) const {
    const std::size_t C = cfg_.init_channels;
    v.conv("stem.conv", C, cfg_.in_channels, 3);
    v.bn("stem.bn", C);
    std::size_t c_pp = C, c_p = C, c_cur = C;
    bool reduction_prev = false;
    for (std::size_t i = 0; i < cfg_.num_cells; ++i) {
      const bool reduction = cfg_.is_reduction(i);
      if (reduction) c_cur *= 2;
      const std::string cell = "cells." + std::to_string(i);
      if (reduction_prev) {
        factorized_reduce_params(v, cell + ".pre0", c_pp, c_cur);
      } else {
        v.conv(cell + ".pre0.conv", c_cur, c_pp, 1);
        v.bn(cell + ".pre0.bn", c_cur);
      }
      v.conv(cell + ".pre1.conv", c_cur, c_p, 1);
      v.bn(cell + ".pre1.bn", c_cur);
      const auto& edges = CellSpec::edges();
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const bool strided = reduction && edges[e].from < 2;
        for (auto op : edge_ops(reduction ? CellKind::reduce : CellKind::normal, e)) {
          op_params(v, edge_prefix(i, e, op), op, c_cur, strided);
        }
      }
      c_pp = c_p;
      c_p = CellSpec::kNumIntermediate * c_cur;
      reduction_prev = reduction;
    }
    v.dense("classifier", c_p, cfg_.num_classes);
    v.dense("projector.fc1", c_p, 4 * cfg_.embedding_dim);
    v.dense("projector.fc2", 4 * cfg_.embedding_dim, cfg_.embedding_dim);
  }

  // Ops that carry a computation on edge e (never 'none').
  std::vector<OperationKind> edge_ops(CellKind kind, std::size_t e) const {
    std::vector<OperationKind> ops;
    if (genotype_) {
      const auto op = genotype_->of(kind)[e];
      if (op != OperationKind::none) ops.push_back(op);
    } else {
      for (auto op : cfg_.candidate_ops()) {
        if (op != OperationKind::none) ops.push_back(op);
      }
    }
    return ops;
  }

  static std::string edge_prefix(std::size_t cell, std::size_t e, OperationKind op) {
    return "cells." + std::to_string(cell) + ".edge" + std::to_string(e) + "." +
           std::string(op_name(op));
  }

 private:
  static void factorized_reduce_params(const Visitor& v, const std::string& prefix,
                                       std::size_t c_in, std::size_t c_out) {
    v.conv(prefix + ".conv1", c_out / 2, c_in, 1);
    v.conv(prefix + ".conv2", c_out - c_out / 2, c_in, 1);
    v.bn(prefix + ".bn", c_out);
  }

  static void op_params(const Visitor& v, const std::string& p, OperationKind op, std::size_t c,
                        bool strided) {
    switch (op) {
      case OperationKind::none:
      case OperationKind::max_pool_3x3:
      case OperationKind::avg_pool_3x3:
        return;
      case OperationKind::skip_connect:
        if (strided) factorized_reduce_params(v, p, c, c);
        return;
      case OperationKind::sep_conv_3x3:
      case OperationKind::sep_conv_5x5: {
        const std::size_t k = op == OperationKind::sep_conv_3x3 ? 3 : 5;
        v.conv(p + ".dw1", c, 1, k);
        v.conv(p + ".pw1", c, c, 1);
        v.bn(p + ".bn1", c);
        v.conv(p + ".dw2", c, 1, k);
        v.conv(p + ".pw2", c, c, 1);
        v.bn(p + ".bn2", c);
        return;
      }
      case OperationKind::dil_conv_3x3:
      case OperationKind::dil_conv_5x5: {
        const std::size_t k = op == OperationKind::dil_conv_3x3 ? 3 : 5;
        v.conv(p + ".dw", c, 1, k);
        v.conv(p + ".pw", c, c, 1);
        v.bn(p + ".bn", c);
        return;
      }
    }
  }

  const SupernetConfig& cfg_;
  const Genotype* genotype_;
};

class Forward {
 public:
  Forward(const NetworkWeights& net, const Binding& b, Gating gating)
      : net_(net), b_(b), gating_(gating), cfg_(net.config) {}

  Var features(std::vector<CellTrace>* trace) {
    const Var& x = b_.images;
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.image_size ||
        s[3] != cfg_.image_size) {
      throw ShapeError("supernet input " + shape_to_string(s) + " does not match [N," +
                       std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.image_size) +
                       "," + std::to_string(cfg_.image_size) + "]");
    }
    Var stem = bn(conv2d(x, p("stem.conv"), {1, 1, 1, 1}), "stem.bn");
    Var s0 = stem, s1 = stem;
    bool reduction_prev = false;
    std::size_t c_cur = cfg_.init_channels;

    std::optional<Var> gated_normal, gated_reduce;
    if (!net_.is_child()) {
      const auto cands = cfg_.candidate_ops();
      if (cands.size() == kNumOps) {
        gated_normal = b_.alpha_normal;
        gated_reduce = b_.alpha_reduce;
      } else {
        std::vector<std::size_t> cols;
        for (auto op : cands) cols.push_back(op_index(op));
        gated_normal = gather_cols(b_.alpha_normal, cols);
        gated_reduce = gather_cols(b_.alpha_reduce, cols);
      }
    }

    for (std::size_t i = 0; i < cfg_.num_cells; ++i) {
      const bool reduction = cfg_.is_reduction(i);
      if (reduction) c_cur *= 2;
      const std::string cell = "cells." + std::to_string(i);
      Var in0 = reduction_prev ? factorized_reduce(s0, cell + ".pre0")
                               : relu_conv_bn(s0, cell + ".pre0");
      Var in1 = relu_conv_bn(s1, cell + ".pre1");
      const CellKind kind = reduction ? CellKind::reduce : CellKind::normal;

      std::vector<Var> states{in0, in1};
      const auto& edges = CellSpec::edges();
      const std::size_t N = x.shape()[0];
      const std::size_t H = in1.shape()[2] / (reduction ? 2 : 1);
      const std::size_t W = in1.shape()[3] / (reduction ? 2 : 1);
      CellTrace ct;
      ct.reduction = reduction;
      for (int node = 2; node < 6; ++node) {
        std::optional<Var> acc;
        for (std::size_t e = 0; e < edges.size(); ++e) {
          if (edges[e].to != node) continue;
          const Var& src = states[static_cast<std::size_t>(edges[e].from)];
          const std::size_t stride = reduction && edges[e].from < 2 ? 2 : 1;
          std::optional<Var> out;
          if (net_.is_child()) {
            const auto op = net_.genotype->of(kind)[e];
            if (op != OperationKind::none) {
              out = apply_op(src, op, Builder::edge_prefix(i, e, op), stride);
            }
          } else {
            out = mixed(src, i, e, kind, stride,
                        select_row(kind == CellKind::normal ? *gated_normal : *gated_reduce, e));
          }
          if (out) acc = acc ? add(*acc, *out) : *out;
        }
        if (!acc) acc = x.tape().constant(Tensor(Shape{N, c_cur, H, W}));
        states.push_back(*acc);
        ct.node_shapes.push_back(acc->shape());
      }
      Var out = concat_channels(std::span<const Var>(states).subspan(2));
      ct.output_shape = out.shape();
      if (trace) trace->push_back(std::move(ct));
      s0 = s1;
      s1 = out;
      reduction_prev = reduction;
    }
    return global_avg_pool(s1);
  }

 private:
  Var p(const std::string& name) const { return b_.params[net_.params.index_of(name)]; }

  Var bn(Var x, const std::string& name) const {
    if (!cfg_.batch_norm) return x;
    return batch_norm2d(x, p(name + ".gamma"), p(name + ".beta"));
  }

  Var relu_conv_bn(Var x, const std::string& prefix) const {
    return bn(conv2d(relu(x), p(prefix + ".conv")), prefix + ".bn");
  }

  Var factorized_reduce(Var x, const std::string& prefix) const {
    Var r = relu(x);
    Var a = conv2d(r, p(prefix + ".conv1"), {2, 0, 1, 1});
    Var b = conv2d(crop_leading(r, 1), p(prefix + ".conv2"), {2, 0, 1, 1});
    const std::array<Var, 2> parts{a, b};
    return bn(concat_channels(parts), prefix + ".bn");
  }

  Var apply_op(Var x, OperationKind op, const std::string& pre, std::size_t stride) const {
    const std::size_t C = x.shape()[1];
    switch (op) {
      case OperationKind::none:
        break;
      case OperationKind::max_pool_3x3:
        return pool2d(x, PoolKind::max, 3, stride, 1);
      case OperationKind::avg_pool_3x3:
        return pool2d(x, PoolKind::avg, 3, stride, 1);
      case OperationKind::skip_connect:
        return stride == 1 ? x : factorized_reduce(x, pre);
      case OperationKind::sep_conv_3x3:
      case OperationKind::sep_conv_5x5: {
        const std::size_t k = op == OperationKind::sep_conv_3x3 ? 3 : 5;
        Var y = conv2d(relu(x), p(pre + ".dw1"), {stride, k / 2, 1, C});
        y = bn(conv2d(y, p(pre + ".pw1")), pre + ".bn1");
        y = conv2d(relu(y), p(pre + ".dw2"), {1, k / 2, 1, C});
        return bn(conv2d(y, p(pre + ".pw2")), pre + ".bn2");
      }
      case OperationKind::dil_conv_3x3:
      case OperationKind::dil_conv_5x5: {
        const std::size_t k = op == OperationKind::dil_conv_3x3 ? 3 : 5;
        Var y = conv2d(relu(x), p(pre + ".dw"), {stride, k - 1, 2, C});
        return bn(conv2d(y, p(pre + ".pw")), pre + ".bn");
      }
    }
    throw std::logic_error("apply_op: 'none' has no computation");
  }

  Var mixed(Var x, std::size_t cell, std::size_t e, CellKind, std::size_t stride,
            Var gates_logits) const {
    const auto cands = cfg_.candidate_ops();
    std::vector<Var> outs(cands.size());
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (cands[k] == OperationKind::none) continue;
      outs[k] = apply_op(x, cands[k], Builder::edge_prefix(cell, e, cands[k]), stride);
    }
    return mixed_edge(outs, gates_logits, gating_);
  }

  const NetworkWeights& net_;
  const Binding& b_;
  Gating gating_;
  const SupernetConfig& cfg_;
};

}  // namespace

NetworkWeights build_supernet(const SupernetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkWeights net;
  net.config = cfg;
  Builder(cfg, nullptr).create(net.params, seed);
  return net;
}

NetworkWeights derive_child(const Genotype& genotype, const SupernetConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  const auto cands = cfg.candidate_ops();
  for (auto kind : {CellKind::normal, CellKind::reduce}) {
    const auto& ops = genotype.of(kind);
    for (std::size_t e = 0; e < ops.size(); ++e) {
      if (std::find(cands.begin(), cands.end(), ops[e]) == cands.end()) {
        throw std::invalid_argument(
            std::string("genotype/config mismatch: ") +
            (kind == CellKind::normal ? "normal" : "reduce") + " edge " + std::to_string(e) +
            " uses '" + std::string(op_name(ops[e])) + "', not in the configured candidate set");
      }
    }
  }
  NetworkWeights net;
  net.config = cfg;
  net.genotype = genotype;
  Builder(cfg, &genotype).create(net.params, seed);
  return net;
}

Binding bind(Tape& tape, const NetworkWeights& net, const ArchParams* arch, const Tensor& images,
             bool weights_grad, bool arch_grad) {
  Binding b;
  b.params.reserve(net.params.size());
  for (const auto& [name, t] : net.params) b.params.push_back(tape.leaf(t, weights_grad));
  if (!net.is_child()) {
    if (!arch) throw std::invalid_argument("bind: supernet forward needs architecture params");
    b.alpha_normal = tape.leaf(arch->normal, arch_grad);
    b.alpha_reduce = tape.leaf(arch->reduce, arch_grad);
  }
  b.images = tape.constant(images);
  return b;
}

Var forward_features(const NetworkWeights& net, const Binding& b, Gating gating) {
  return Forward(net, b, gating).features(nullptr);
}

Var forward_supervised(const NetworkWeights& net, const Binding& b, Gating gating) {
  Var f = forward_features(net, b, gating);
  const auto& ps = net.params;
  return linear(f, b.params[ps.index_of("classifier.weight")],
                b.params[ps.index_of("classifier.bias")]);
}

Var forward_projection(const NetworkWeights& net, const Binding& b, Gating gating) {
  Var f = forward_features(net, b, gating);
  const auto& ps = net.params;
  Var h = relu(linear(f, b.params[ps.index_of("projector.fc1.weight")],
                      b.params[ps.index_of("projector.fc1.bias")]));
  return linear(h, b.params[ps.index_of("projector.fc2.weight")],
                b.params[ps.index_of("projector.fc2.bias")]);
}

std::vector<CellTrace> trace_cells(const NetworkWeights& net, const Binding& b, Gating gating) {
  std::vector<CellTrace> trace;
  Forward(net, b, gating).features(&trace);
  return trace;
}

}  // namespace fairsearch
