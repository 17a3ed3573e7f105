#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fairsearch/search_space.hpp"

namespace fairsearch {

/// Malformed genotype/config text. what() carries the line and field.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON text: version, gating_mode, discretize_rule, config_hash and one
/// {from, to, op} entry per edge for `normal` and `reduce`.
std::string genotype_serialize(const Genotype& g);
Genotype genotype_parse(const std::string& text);

void save_genotype(const Genotype& g, const std::filesystem::path& path);
Genotype load_genotype(const std::filesystem::path& path);

/// Graphviz digraph of one cell: nodes 0..6, one labeled edge per
/// retained op and unlabeled concat edges from 2..5 into node 6.
std::string genotype_to_dot(const Genotype& g, CellKind kind);

}  // namespace fairsearch
