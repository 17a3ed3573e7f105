#include "fairsearch/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fairsearch {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const std::string& what) {
  if (in.size() - pos < sizeof(T)) {
    throw CheckpointError("checkpoint truncated while reading " + what + " at byte " +
                          std::to_string(pos));
  }
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = header.dump();

  std::string blob(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(blob, Checkpoint::kVersion);
  put_le<std::uint64_t>(blob, text.size());
  blob += text;
  for (const auto& entry : ckpt.tensors) {
    for (double v : entry.second.data()) put_le(blob, v);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + tmp.string());
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  if (blob.size() < sizeof(kMagic) || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(blob, pos, "version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(blob, pos, "header length");
  if (header_len > blob.size() - pos) {
    throw CheckpointError(path.string() + ": header length " + std::to_string(header_len) +
                          " exceeds file size");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(pos, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(path.string() + ": header parse error: " + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  try {
    ckpt.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const std::size_t n = shape_numel(shape);
      if (n > (blob.size() - pos) / sizeof(double)) {
        throw CheckpointError(path.string() + ": data for tensor '" + name + "' is truncated");
      }
      std::vector<double> values(n);
      for (auto& v : values) v = get_le<double>(blob, pos, "tensor " + name);
      ckpt.tensors.emplace_back(name, Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(path.string() + ": bad tensor shape: " + e.what());
  }
  if (pos != blob.size()) {
    throw CheckpointError(path.string() + ": " + std::to_string(blob.size() - pos) +
                          " trailing bytes after tensor data");
  }
  return ckpt;
}

}  // namespace fairsearch
