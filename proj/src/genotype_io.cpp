#include "fairsearch/genotype_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fairsearch {

namespace {

using nlohmann::json;
using EdgeOps = std::array<OperationKind, CellSpec::kNumEdges>;

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

// Line of the first occurrence of a quoted token, 0 when absent.
std::size_t line_of_token(const std::string& text, const std::string& token) {
  const auto pos = text.find("\"" + token + "\"");
  return pos == std::string::npos ? 0 : line_of(text, pos);
}

[[noreturn]] void fail(const std::string& text, const std::string& field,
                       const std::string& token, const std::string& msg) {
  std::ostringstream os;
  os << "genotype parse error";
  if (const auto line = line_of_token(text, token.empty() ? field : token); line > 0) {
    os << " at line " << line;
  }
  os << ", field '" << field << "': " << msg;
  throw ParseError(os.str());
}

json cell_to_json(const EdgeOps& ops) {
  json arr = json::array();
  const auto& edges = CellSpec::edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    arr.push_back({{"from", edges[e].from}, {"to", edges[e].to}, {"op", std::string(op_name(ops[e]))}});
  }
  return arr;
}

EdgeOps cell_from_json(const std::string& text, const json& doc, const char* field) {
  if (!doc.contains(field)) fail(text, field, "", "missing");
  const json& arr = doc.at(field);
  if (!arr.is_array()) fail(text, field, "", "expected an array of edges");
  EdgeOps ops{};
  std::array<bool, CellSpec::kNumEdges> seen{};
  for (const auto& entry : arr) {
    if (!entry.is_object() || !entry.contains("from") || !entry.contains("to") ||
        !entry.contains("op")) {
      fail(text, field, "", "edge entries need 'from', 'to' and 'op'");
    }
    if (!entry["from"].is_number_integer() || !entry["to"].is_number_integer()) {
      fail(text, field, "", "'from'/'to' must be integers");
    }
    if (!entry["op"].is_string()) fail(text, field, "", "'op' must be a string");
    const int from = entry["from"].get<int>();
    const int to = entry["to"].get<int>();
    const std::string name = entry["op"].get<std::string>();
    const auto idx = CellSpec::edge_index(from, to);
    if (!idx) {
      fail(text, field, "", "no edge " + std::to_string(from) + "->" + std::to_string(to) +
                                " in the cell topology");
    }
    if (seen[*idx]) {
      fail(text, field, "", "edge " + std::to_string(from) + "->" + std::to_string(to) +
                                " listed twice");
    }
    const auto op = op_from_name(name);
    if (!op) fail(text, field, name, "unknown op '" + name + "'");
    seen[*idx] = true;
    ops[*idx] = *op;
  }
  for (std::size_t e = 0; e < seen.size(); ++e) {
    if (!seen[e]) {
      const auto& edge = CellSpec::edges()[e];
      fail(text, field, "", "edge " + std::to_string(edge.from) + "->" +
                                std::to_string(edge.to) + " missing");
    }
  }
  return ops;
}

}  // namespace

std::string genotype_serialize(const Genotype& g) {
  json doc;
  doc["version"] = Genotype::kVersion;
  doc["gating_mode"] = g.gating_mode;
  doc["discretize_rule"] = g.discretize_rule;
  doc["config_hash"] = g.config_hash;
  doc["normal"] = cell_to_json(g.normal);
  doc["reduce"] = cell_to_json(g.reduce);
  return doc.dump(2) + "\n";
}

Genotype genotype_parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("genotype parse error at line " + std::to_string(line_of(text, e.byte)) +
                     ": " + e.what());
  }
  if (!doc.is_object()) fail(text, "<root>", "", "expected an object");
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    fail(text, "version", "", "missing or not an integer");
  }
  if (doc["version"].get<int>() != Genotype::kVersion) {
    fail(text, "version", "", "unsupported version " + doc["version"].dump());
  }
  Genotype g;
  for (const char* key : {"gating_mode", "discretize_rule"}) {
    if (!doc.contains(key) || !doc[key].is_string()) fail(text, key, "", "missing or not a string");
  }
  g.gating_mode = doc["gating_mode"].get<std::string>();
  if (!gating_from_name(g.gating_mode)) {
    fail(text, "gating_mode", g.gating_mode, "unknown gating '" + g.gating_mode + "'");
  }
  g.discretize_rule = doc["discretize_rule"].get<std::string>();
  if (!rule_from_name(g.discretize_rule)) {
    fail(text, "discretize_rule", g.discretize_rule, "unknown rule '" + g.discretize_rule + "'");
  }
  if (doc.contains("config_hash")) {
    if (!doc["config_hash"].is_string()) fail(text, "config_hash", "", "not a string");
    g.config_hash = doc["config_hash"].get<std::string>();
  }
  g.normal = cell_from_json(text, doc, "normal");
  g.reduce = cell_from_json(text, doc, "reduce");
  return g;
}

void save_genotype(const Genotype& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << genotype_serialize(g);
}

Genotype load_genotype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read genotype " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return genotype_parse(ss.str());
}

std::string genotype_to_dot(const Genotype& g, CellKind kind) {
  std::ostringstream os;
  os << "digraph " << (kind == CellKind::normal ? "normal" : "reduce") << " {\n";
  os << "  rankdir=LR;\n";
  os << "  node0 [label=\"c_{k-2}\"];\n";
  os << "  node1 [label=\"c_{k-1}\"];\n";
  for (int n = 2; n < 6; ++n) os << "  node" << n << " [label=\"" << n << "\"];\n";
  os << "  node6 [label=\"c_{k}\"];\n";
  const auto& ops = g.of(kind);
  const auto& edges = CellSpec::edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (ops[e] == OperationKind::none) continue;
    os << "  node" << edges[e].from << " -> node" << edges[e].to << " [label=\"" << op_name(ops[e])
       << "\"];\n";
  }
  for (int n = 2; n < 6; ++n) os << "  node" << n << " -> node6 [style=dashed];\n";
  os << "}\n";
  return os.str();
}

}  // namespace fairsearch
