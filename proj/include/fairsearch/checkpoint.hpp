#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fairsearch/tensor.hpp"
#include "json.hpp"

namespace fairsearch {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Free-form JSON metadata plus an ordered list of named tensors.
///
/// On disk: the 8-byte magic "FSCKPT01", a little-endian uint32 format
/// version, a uint64 header length, the JSON header (meta + tensor table),
/// then every tensor's doubles in little-endian order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

/// Writes to a temporary sibling first and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairsearch
