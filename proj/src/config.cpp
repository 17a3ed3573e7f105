#include "fairsearch/config.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "fairsearch/genotype_io.hpp"

namespace fairsearch {

using nlohmann::json;

void RunConfig::validate() const {
  supernet.validate();
  optim.validate();
  loss.validate();
  profile.validate();
  if (profile.num_classes != supernet.num_classes) {
    throw std::invalid_argument("profile.num_classes (" + std::to_string(profile.num_classes) +
                                ") differs from supernet.num_classes (" +
                                std::to_string(supernet.num_classes) + ")");
  }
  if (data.source != "synthetic" && data.source != "cifar10") {
    throw std::invalid_argument("data.source must be 'synthetic' or 'cifar10', got '" + data.source + "'");
  }
  if (!(data.split_fraction > 0.0 && data.split_fraction < 1.0)) {
    throw std::invalid_argument("data.split_fraction must lie in (0, 1)");
  }
  if (data.test_base_count == 0) throw std::invalid_argument("data.test_base_count must be positive");
  if (32 % supernet.image_size != 0) {
    throw std::invalid_argument("supernet.image_size must divide the 32px source images");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  if (eval_batch == 0) throw std::invalid_argument("eval_batch must be positive");
  child_config().validate();
}

SupernetConfig RunConfig::child_config() const {
  SupernetConfig c = supernet;
  if (retrain_cells > 0) c.num_cells = retrain_cells;
  if (retrain_channels > 0) c.init_channels = retrain_channels;
  return c;
}

namespace {

json augment_json(const AugmentConfig& a) {
  return {{"crop_padding", a.crop_padding},
          {"flip_prob", a.flip_prob},
          {"jitter", a.jitter},
          {"grayscale_prob", a.grayscale_prob}};
}

// Walks a JSON object, assigning known keys and rejecting the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError("config: '" + display() + "' must be an object");
  }

  template <typename T>
  Reader& get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ParseError("config: '" + child(key) + "' has the wrong type (" +
                       std::string(j_.at(key).type_name()) + ")");
    }
    return *this;
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, child(key));
  }

  template <typename E, typename F>
  Reader& get_enum(const char* key, E& out, F&& from_name) {
    std::string name;
    const bool present = j_.contains(key);
    get(key, name);
    if (!present) return *this;
    auto v = from_name(name);
    if (!v) throw ParseError("config: '" + child(key) + "' has unknown value '" + name + "'");
    out = *v;
    return *this;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ParseError("config: unknown key '" + child(k) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  std::string child(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

void read_augment(Reader r, AugmentConfig& a) {
  r.get("crop_padding", a.crop_padding)
      .get("flip_prob", a.flip_prob)
      .get("jitter", a.jitter)
      .get("grayscale_prob", a.grayscale_prob)
      .finish();
}

}  // namespace

json config_to_json(const RunConfig& c) {
  json cands = json::array();
  for (auto op : c.supernet.candidates) cands.push_back(std::string(op_name(op)));
  json j;
  j["mode"] = std::string(mode_name(c.mode));
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["supernet"] = {{"num_cells", c.supernet.num_cells},
                   {"init_channels", c.supernet.init_channels},
                   {"num_classes", c.supernet.num_classes},
                   {"image_size", c.supernet.image_size},
                   {"in_channels", c.supernet.in_channels},
                   {"embedding_dim", c.supernet.embedding_dim},
                   {"batch_norm", c.supernet.batch_norm},
                   {"candidates", cands}};
  j["optim"] = {{"w_lr", c.optim.w_lr},
                {"w_lr_min", c.optim.w_lr_min},
                {"w_momentum", c.optim.w_momentum},
                {"w_weight_decay", c.optim.w_weight_decay},
                {"alpha_lr", c.optim.alpha_lr},
                {"alpha_beta1", c.optim.alpha_beta1},
                {"alpha_beta2", c.optim.alpha_beta2},
                {"alpha_weight_decay", c.optim.alpha_weight_decay},
                {"batch_size", c.optim.batch_size},
                {"search_epochs", c.optim.search_epochs},
                {"retrain_epochs", c.optim.retrain_epochs},
                {"xi", c.optim.xi}};
  j["loss"] = {{"lambda_zero_one", c.loss.lambda_zero_one},
               {"lambda_bt", c.loss.lambda_bt},
               {"zero_one_warmup_epochs", c.loss.zero_one_warmup_epochs},
               {"bt_mean_center", c.loss.bt_mean_center}};
  j["profile"] = {{"kind", std::string(profile_name(c.profile.kind))},
                  {"mu", c.profile.mu},
                  {"base_count", c.profile.base_count},
                  {"num_classes", c.profile.num_classes}};
  j["data"] = {{"source", c.data.source},
               {"cifar_dir", c.data.cifar_dir},
               {"synthetic_noise", c.data.synthetic_noise},
               {"test_base_count", c.data.test_base_count},
               {"dir", c.data.dir},
               {"split_fraction", c.data.split_fraction}};
  j["ssl_augment"] = augment_json(c.ssl_augment);
  j["retrain_augment"] = augment_json(c.retrain_augment);
  j["discretize"] = std::string(rule_name(c.discretize));
  j["threshold"] = c.threshold;
  j["retrain_cells"] = c.retrain_cells;
  j["retrain_channels"] = c.retrain_channels;
  j["eval_batch"] = c.eval_batch;
  j["log_wall_time"] = c.log_wall_time;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader root(j, "");
  root.get_enum("mode", c.mode, mode_from_name).get("seed", c.seed).get("out_dir", c.out_dir);

  std::vector<std::string> cands;
  root.sub("supernet")
      .get("num_cells", c.supernet.num_cells)
      .get("init_channels", c.supernet.init_channels)
      .get("num_classes", c.supernet.num_classes)
      .get("image_size", c.supernet.image_size)
      .get("in_channels", c.supernet.in_channels)
      .get("embedding_dim", c.supernet.embedding_dim)
      .get("batch_norm", c.supernet.batch_norm)
      .get("candidates", cands)
      .finish();
  for (const auto& name : cands) {
    auto op = op_from_name(name);
    if (!op) throw ParseError("config: 'supernet.candidates' has unknown op '" + name + "'");
    c.supernet.candidates.push_back(*op);
  }
  root.sub("optim")
      .get("w_lr", c.optim.w_lr)
      .get("w_lr_min", c.optim.w_lr_min)
      .get("w_momentum", c.optim.w_momentum)
      .get("w_weight_decay", c.optim.w_weight_decay)
      .get("alpha_lr", c.optim.alpha_lr)
      .get("alpha_beta1", c.optim.alpha_beta1)
      .get("alpha_beta2", c.optim.alpha_beta2)
      .get("alpha_weight_decay", c.optim.alpha_weight_decay)
      .get("batch_size", c.optim.batch_size)
      .get("search_epochs", c.optim.search_epochs)
      .get("retrain_epochs", c.optim.retrain_epochs)
      .get("xi", c.optim.xi)
      .finish();
  root.sub("loss")
      .get("lambda_zero_one", c.loss.lambda_zero_one)
      .get("lambda_bt", c.loss.lambda_bt)
      .get("zero_one_warmup_epochs", c.loss.zero_one_warmup_epochs)
      .get("bt_mean_center", c.loss.bt_mean_center)
      .finish();
  root.sub("profile")
      .get_enum("kind", c.profile.kind, profile_from_name)
      .get("mu", c.profile.mu)
      .get("base_count", c.profile.base_count)
      .get("num_classes", c.profile.num_classes)
      .finish();
  root.sub("data")
      .get("source", c.data.source)
      .get("cifar_dir", c.data.cifar_dir)
      .get("synthetic_noise", c.data.synthetic_noise)
      .get("test_base_count", c.data.test_base_count)
      .get("dir", c.data.dir)
      .get("split_fraction", c.data.split_fraction)
      .finish();
  read_augment(root.sub("ssl_augment"), c.ssl_augment);
  read_augment(root.sub("retrain_augment"), c.retrain_augment);
  root.get_enum("discretize", c.discretize, rule_from_name)
      .get("threshold", c.threshold)
      .get("retrain_cells", c.retrain_cells)
      .get("retrain_channels", c.retrain_channels)
      .get("eval_batch", c.eval_batch)
      .get("log_wall_time", c.log_wall_time)
      .finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << config_to_json(cfg).dump(2) << "\n";
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash(const RunConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("out_dir");
  j["data"].erase("dir");
  return hex64(fnv1a(j.dump()));
}

}  // namespace fairsearch
